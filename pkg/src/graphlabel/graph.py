"""
Graphs, Laplacians and Laplacian spectra.

Everything here works on simple undirected graphs with 0-based vertex
labels. The dense eigendecomposition is the only O(n^3) step in the whole
pipeline, so :func:`cached_spectrum` keeps it on disk keyed by the graph
content.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph

log = logging.getLogger(__name__)

CACHE_ENV = "GRAPHLABEL_CACHE"


class EdgeListError(ValueError):
    """Malformed edge-list text."""


class DisconnectedGraphError(ValueError):
    """An operation that needs a connected graph got a disconnected one."""


class GraphWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph.

    ``edges`` is an ``(m, 2)`` integer array with ``edges[:, 0] < edges[:, 1]``,
    rows unique and sorted lexicographically. Use :meth:`from_pairs` to build
    one from arbitrary vertex pairs.
    """

    n: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n < 1:
            raise ValueError(f"vertex count must be positive, got {self.n}")
        if e.size:
            if e.min() < 0 or e.max() >= self.n:
                raise ValueError("edge endpoint outside [0, n)")
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must be stored as (i, j) with i < j; no self-loops")
            if len(np.unique(e, axis=0)) != len(e):
                raise ValueError("duplicate edges")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @classmethod
    def from_pairs(cls, n: int, pairs) -> "Graph":
        """Canonicalize pairs: orient, drop loops and duplicates."""
        e = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if len(e) else e
        return cls(int(n), e)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def adjacency(self) -> sparse.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i), dtype=np.int64)
        a = sparse.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n))
        return a.tocsr()

    def n_components(self) -> int:
        return csgraph.connected_components(self.adjacency(), directed=False)[0]

    def is_connected(self) -> bool:
        return self.n_components() == 1

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"n={self.n};".encode())
        h.update(np.ascontiguousarray(self.edges, dtype="<i8").tobytes())
        return h.hexdigest()

    def __repr__(self):
        return f"Graph(n={self.n}, n_edges={self.n_edges})"


class EdgeListStats(NamedTuple):
    duplicates: int
    loops: int


def parse_edge_list(text: str) -> tuple[Graph, EdgeListStats]:
    """Parse edge-list text and report how many duplicates and loops were dropped.

    Lines hold two whitespace-separated 0-based vertex indices. ``#`` starts a
    comment. An optional first content line ``n <count>`` fixes the vertex
    count, otherwise it is ``max index + 1``.
    """
    n_header = None
    pairs = []
    seen_content = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if not seen_content and tokens[0] == "n":
            if len(tokens) != 2:
                raise EdgeListError(f"line {lineno}: header must be 'n <count>'")
            try:
                n_header = int(tokens[1])
            except ValueError:
                raise EdgeListError(f"line {lineno}: bad vertex count {tokens[1]!r}") from None
            seen_content = True
            continue
        seen_content = True
        if len(tokens) != 2:
            raise EdgeListError(f"line {lineno}: expected two vertex indices, got {len(tokens)} tokens")
        try:
            i, j = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise EdgeListError(f"line {lineno}: non-integer token in {line!r}") from None
        if i < 0 or j < 0:
            raise EdgeListError(f"line {lineno}: negative vertex index")
        pairs.append((i, j))

    e = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    n_max = int(e.max()) + 1 if len(e) else 0
    if n_header is not None:
        if n_header < n_max:
            raise EdgeListError(f"header declares n={n_header} but index {n_max - 1} appears")
        n = n_header
    else:
        n = n_max
    if n == 0:
        raise EdgeListError("empty edge list without an 'n <count>' header")

    loops = int(np.sum(e[:, 0] == e[:, 1]))
    e = np.sort(e[e[:, 0] != e[:, 1]], axis=1)
    unique = np.unique(e, axis=0) if len(e) else e
    return Graph(n, unique), EdgeListStats(len(e) - len(unique), loops)


def load_edge_list(text: str) -> Graph:
    """Parse edge-list text, warning about dropped edges and disconnectedness."""
    g, stats = parse_edge_list(text)
    if stats.duplicates or stats.loops:
        warnings.warn(
            f"dropped {stats.duplicates} duplicate edge(s) and {stats.loops} self-loop(s)",
            GraphWarning, stacklevel=2,
        )
    if not g.is_connected():
        warnings.warn(f"graph has {g.n_components()} connected components", GraphWarning, stacklevel=2)
    return g


def save_edge_list(g: Graph) -> str:
    lines = [f"n {g.n}"]
    lines.extend(f"{i} {j}" for i, j in g.edges)
    return "\n".join(lines) + "\n"


def laplacian(g: Graph, dense: bool = False):
    """Combinatorial Laplacian ``D - A`` as a float CSR matrix (or dense array)."""
    a = g.adjacency()
    deg = np.asarray(a.sum(axis=1)).ravel()
    lap = (sparse.diags(deg) - a).astype(np.float64).tocsr()
    return lap.toarray() if dense else lap


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending Laplacian eigenvalues and the matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        u = np.asarray(self.eigenvectors, dtype=np.float64)
        if u.shape != (len(lam), len(lam)):
            raise ValueError(f"eigenvector matrix has shape {u.shape}, expected {(len(lam), len(lam))}")
        lam.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", u)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def to_basis(self, g: np.ndarray) -> np.ndarray:
        """Map eigen-coordinates ``g`` to vertex values ``U g``."""
        return self.eigenvectors @ g

    def to_spectral(self, f: np.ndarray) -> np.ndarray:
        return self.eigenvectors.T @ f


def canonical_signs(u: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    """Flip columns so the largest-magnitude entry is positive.

    Entries within ``rtol`` of the column maximum count as ties and the lowest
    index wins, which keeps the choice stable across eigensolvers.
    """
    u = np.array(u, dtype=np.float64, copy=True)
    mag = np.abs(u)
    top = mag.max(axis=0)
    lead = np.argmax(mag >= top * (1.0 - rtol), axis=0)
    flip = u[lead, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    return u


def spectrum(g: Graph) -> Spectrum:
    """Full eigendecomposition of the Laplacian of a connected graph."""
    if not g.is_connected():
        raise DisconnectedGraphError(
            f"spectrum needs a connected graph; this one has {g.n_components()} components"
        )
    lap = laplacian(g, dense=True)
    lam, u = linalg.eigh(lap)
    # L is positive semi-definite; only roundoff can push eigenvalues below zero
    lam = np.clip(lam, 0.0, None)
    resid = np.abs(lap @ u - u * lam).max()
    scale = max(np.abs(lap).sum(axis=1).max(), 1.0)
    if resid > 1e-9 * scale:
        raise np.linalg.LinAlgError(f"eigendecomposition residual {resid:.3g} above tolerance")
    return Spectrum(lam, canonical_signs(u))


def path_graph(n: int) -> Graph:
    if n < 2:
        raise ValueError(f"path graph needs n >= 2, got {n}")
    i = np.arange(n - 1)
    return Graph(n, np.column_stack([i, i + 1]))


def path_spectrum_closed_form(n: int) -> Spectrum:
    """Exact Laplacian spectrum of the n-vertex path (DCT-II basis, unit norm)."""
    if n < 2:
        raise ValueError(f"path graph needs n >= 2, got {n}")
    k = np.arange(n)
    lam = 4.0 * np.sin(np.pi * k / (2 * n)) ** 2
    i = np.arange(n)[:, None]
    u = np.cos(np.pi * (i + 0.5) * k[None, :] / n)
    u /= np.linalg.norm(u, axis=0)
    return Spectrum(lam, canonical_signs(u))


def largest_component(n: int, pairs) -> Graph:
    """Largest connected component of the multigraph on ``pairs``, vertices relabelled in order."""
    g = Graph.from_pairs(n, pairs)
    _, comp = csgraph.connected_components(g.adjacency(), directed=False)
    sizes = np.bincount(comp)
    keep = np.flatnonzero(comp == np.argmax(sizes))
    relabel = np.full(n, -1, dtype=np.int64)
    relabel[keep] = np.arange(len(keep))
    e = relabel[g.edges]
    e = e[(e >= 0).all(axis=1)]
    return Graph(len(keep), e)


def watts_strogatz(n: int, k_ring: int = 2, rewire_p: float = 0.25, seed=None) -> Graph:
    """Rewired ring lattice restricted to its largest connected component.

    Each vertex of the ring is joined to its ``k_ring // 2`` successors. Every
    endpoint of every ring edge is then moved, independently with probability
    ``rewire_p``, to a uniformly chosen vertex. Loops and multiple edges that
    this creates are deleted afterwards and only the largest component is
    kept, so the result usually has fewer than ``n`` vertices.
    """
    if k_ring < 2 or k_ring % 2:
        raise ValueError(f"k_ring must be a positive even integer, got {k_ring}")
    if n <= k_ring:
        raise ValueError(f"need n > k_ring, got n={n}, k_ring={k_ring}")
    if not 0.0 <= rewire_p <= 1.0:
        raise ValueError(f"rewire_p must be a probability, got {rewire_p}")
    rng = np.random.default_rng(seed)
    base = np.arange(n)
    ring = np.concatenate(
        [np.column_stack([base, (base + j) % n]) for j in range(1, k_ring // 2 + 1)]
    )
    ends = ring.ravel().copy()
    moved = rng.random(ends.size) < rewire_p
    ends[moved] = rng.integers(0, n, size=int(moved.sum()))
    return largest_component(n, ends.reshape(-1, 2))


def knn_graph(features, k: int, chunk: int = 1024) -> Graph:
    """Union-symmetrized k-nearest-neighbour graph under Euclidean distance.

    Distance ties are broken in favour of the lower row index.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D array")
    m = len(x)
    if k < 1 or m < k + 1:
        raise ValueError(f"need 1 <= k <= m - 1, got k={k}, m={m}")
    sq = np.einsum("ij,ij->i", x, x)
    pairs = []
    for start in range(0, m, chunk):
        rows = np.arange(start, min(start + chunk, m))
        d2 = sq[rows, None] - 2.0 * x[rows] @ x.T + sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(len(rows)), rows] = np.inf
        # stable sort keeps the lower index first among equal distances
        nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
        pairs.append(np.column_stack([np.repeat(rows, k), nbrs.ravel()]))
    return Graph.from_pairs(m, np.concatenate(pairs))


@dataclass(frozen=True)
class GeometryFit:
    slope: float
    intercept: float
    r: float
    fit_range: tuple[int, int]


def fit_geometry(spec, fit_lo: float = 0.01, fit_hi: float = 0.5) -> GeometryFit:
    """Least-squares fit of ``log lambda_i`` against ``log(i / n)``.

    ``spec`` is a :class:`Spectrum` or a plain array of ascending eigenvalues.
    The fit uses indices ``max(1, ceil(fit_lo n)) .. floor(fit_hi n)`` (capped
    at ``n - 1``) and reports ``r = 2 / slope``.
    """
    lam = spec.eigenvalues if isinstance(spec, Spectrum) else np.asarray(spec, dtype=np.float64)
    n = len(lam)
    if not 0.0 < fit_lo < fit_hi <= 1.0:
        raise ValueError(f"need 0 < fit_lo < fit_hi <= 1, got {fit_lo}, {fit_hi}")
    lo = max(1, math.ceil(fit_lo * n))
    hi = min(n - 1, math.floor(fit_hi * n))
    if hi - lo + 1 < 3:
        raise ValueError(f"fit range [{lo}, {hi}] has fewer than 3 eigenvalues")
    idx = np.arange(lo, hi + 1)
    if np.any(lam[idx] <= 0):
        raise ValueError("non-positive eigenvalue inside the fit range")
    x = np.log(idx / n)
    y = np.log(lam[idx])
    slope, intercept = np.polyfit(x, y, 1)
    return GeometryFit(float(slope), float(intercept), float(2.0 / slope), (int(lo), int(hi)))


def cache_dir(path=None) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "graphlabel"


def cached_spectrum(g: Graph, directory=None) -> tuple[Spectrum, bool]:
    """Spectrum of ``g``, read from or written to the cache. Returns ``(spectrum, hit)``."""
    d = cache_dir(directory)
    path = d / f"{g.content_hash()}.npz"
    if path.exists():
        with np.load(path) as data:
            log.info("spectrum cache hit: %s", path)
            return Spectrum(data["eigenvalues"], data["eigenvectors"]), True
    log.info("spectrum cache miss, decomposing n=%d", g.n)
    spec = spectrum(g)
    d.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, eigenvalues=spec.eigenvalues, eigenvectors=spec.eigenvectors)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return spec, False
