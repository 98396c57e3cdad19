"""
Prior configuration, synthetic soft labels, and the observation model.

The prior on the latent function is ``f | c ~ N(0, (c K)^-1)`` with kernel
``K = (L + shift I)^q``; the soft labels are ``ell = Phi(f)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import sparse
from scipy.special import ndtr

from .graph import Graph, Spectrum, laplacian


@dataclass(frozen=True)
class OrdinaryGamma:
    """Gamma(a, b) prior on the scale ``c`` (shape ``a``, rate ``b``); ``a = b = 0`` is Jeffreys."""

    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"gamma hyperparameters must be >= 0, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class GeneralizedGamma:
    """Prior with density proportional to ``c^(-r/(2q)-1) exp(-n c^(-r/(2q)))``."""

    r: float

    def __post_init__(self):
        if self.r < 1:
            raise ValueError(f"generalized gamma prior needs r >= 1, got {self.r}")


@dataclass(frozen=True)
class FixedScale:
    """Point mass at ``c``: the scale is held fixed and never resampled."""

    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"fixed scale must be positive, got {self.c}")


ScalePrior = Union[OrdinaryGamma, GeneralizedGamma, FixedScale]


@dataclass(frozen=True)
class PriorConfig:
    """Power ``q`` of the shifted Laplacian, the shift, and the prior on ``c``.

    ``shift=None`` means the default ``1 / n**2``, resolved per graph by
    :meth:`shift_for`.
    """

    q: float
    c_prior: ScalePrior = field(default_factory=OrdinaryGamma)
    shift: float | None = None

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError(f"Laplacian power q must be positive, got {self.q}")
        if self.shift is not None and not self.shift > 0:
            raise ValueError(f"shift must be positive, got {self.shift}")

    def shift_for(self, n: int) -> float:
        return 1.0 / n**2 if self.shift is None else self.shift

    @property
    def integer_q(self) -> bool:
        return float(self.q).is_integer()


def kernel_eigenvalues(spec, cfg: PriorConfig) -> np.ndarray:
    """Eigenvalues ``(lambda_k + shift)^q`` of the prior precision kernel."""
    lam = spec.eigenvalues if isinstance(spec, Spectrum) else np.asarray(spec, dtype=np.float64)
    return (lam + cfg.shift_for(len(lam))) ** cfg.q


def smoothness_norm(g, s) -> float:
    """``sum_k s_k g_k^2`` for eigen-coordinates ``g``; equals ``f^T K f`` with ``f = U g``."""
    g = np.asarray(g, dtype=np.float64)
    return float(np.dot(s, g * g))


def powered_kernel(cfg: PriorConfig, graph: Graph | None = None, spec: Spectrum | None = None,
                   dense: bool = True):
    """The kernel matrix ``(L + shift I)^q``.

    Integer powers are formed by repeated sparse multiplication and need only
    the graph. Fractional powers go through the spectrum and are always dense.
    """
    if cfg.integer_q and graph is not None:
        n = graph.n
        base = (laplacian(graph) + cfg.shift_for(n) * sparse.identity(n, format="csr")).tocsr()
        k = sparse.identity(n, format="csr")
        for _ in range(int(cfg.q)):
            k = (k @ base).tocsr()
        k = ((k + k.T) * 0.5).tocsr()
        k.sort_indices()
        return k.toarray() if dense else k
    if not dense:
        raise ValueError("a sparse kernel needs an integer power q and the graph")
    if spec is None:
        raise ValueError("a fractional power q needs the Laplacian spectrum")
    u = spec.eigenvectors
    k = (u * kernel_eigenvalues(spec, cfg)) @ u.T
    return (k + k.T) * 0.5


class CoefficientRule(str, enum.Enum):
    """How the synthetic truth's expansion coefficients are chosen.

    ``PATH``:   ``a_k = sqrt(n) k^-1.5 sin k`` (nominal smoothness 1)
    ``SMOOTH``: ``a_k = sqrt(n) k^(-2/r - 1/2) sin k`` (nominal smoothness 2)

    The ``sqrt(n)`` factor in ``PATH`` compensates for unit-norm eigenvectors:
    the classical path basis ``sqrt(2) cos(pi (i - 1/2) k / n)`` has norm
    ``sqrt(n)``.
    """

    PATH = "path"
    SMOOTH = "smooth"


@dataclass(frozen=True, eq=False)
class SoftLabelTruth:
    f0: np.ndarray
    ell0: np.ndarray
    coefficients: np.ndarray
    smoothness_beta: float

    @property
    def n(self) -> int:
        return len(self.f0)

    @property
    def hard_labels(self) -> np.ndarray:
        return (self.ell0 > 0.5).astype(np.int8)


def expansion_coefficients(n: int, rule: CoefficientRule | str, r: float | None = None) -> np.ndarray:
    """Coefficients ``a_0 .. a_{n-1}``; ``a_0 = 0`` so the constant mode is left out."""
    rule = CoefficientRule(rule)
    k = np.arange(1, n, dtype=np.float64)
    if rule is CoefficientRule.PATH:
        tail = math.sqrt(n) * k**-1.5 * np.sin(k)
    else:
        if r is None or r <= 0:
            raise ValueError("the smooth rule needs the geometry parameter r > 0")
        tail = math.sqrt(n) * k ** (-2.0 / r - 0.5) * np.sin(k)
    return np.concatenate([[0.0], tail])


def synth_soft_labels(spec: Spectrum, rule: CoefficientRule | str, r: float | None = None) -> SoftLabelTruth:
    """Build ``f0 = sum_k a_k u^(k)`` over the non-constant eigenvectors and ``ell0 = Phi(f0)``."""
    rule = CoefficientRule(rule)
    a = expansion_coefficients(spec.n, rule, r)
    f0 = spec.eigenvectors @ a
    beta = 1.0 if rule is CoefficientRule.PATH else 2.0
    return SoftLabelTruth(f0, ndtr(f0), a, beta)


def sample_labels(ell, seed=None) -> np.ndarray:
    """Independent Bernoulli(ell_i) labels; ``ell`` may be a :class:`SoftLabelTruth`."""
    p = ell.ell0 if isinstance(ell, SoftLabelTruth) else np.asarray(ell, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return (rng.random(p.shape) < p).astype(np.int8)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed vertices and their 0/1 labels on an ``n``-vertex graph."""

    n: int
    vertices: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.int64).ravel()
        y = np.asarray(self.labels, dtype=np.int8).ravel()
        if len(v) != len(y):
            raise ValueError("vertices and labels differ in length")
        if len(v) and (v.min() < 0 or v.max() >= self.n):
            raise ValueError("observed vertex outside [0, n)")
        if len(np.unique(v)) != len(v):
            raise ValueError("a vertex can be observed at most once")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be 0 or 1")
        order = np.argsort(v)
        v, y = v[order], y[order]
        v.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "labels", y)

    @property
    def missing(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.vertices] = False
        return np.flatnonzero(mask)

    def observed_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.vertices] = True
        return mask

    def full_labels(self, fill: int = -1) -> np.ndarray:
        """Length-``n`` label vector with ``fill`` at unobserved vertices."""
        out = np.full(self.n, fill, dtype=np.int8)
        out[self.vertices] = self.labels
        return out

    def __len__(self):
        return len(self.vertices)


def mask_labels(labels, missing_fraction: float, seed=None) -> ObservationSet:
    """Hide exactly ``round(missing_fraction * n)`` uniformly chosen labels.

    Halves round up. The hidden vertices are available as ``obs.missing``.
    """
    y = np.asarray(labels)
    n = len(y)
    if not 0.0 <= missing_fraction < 1.0:
        raise ValueError(f"missing_fraction must lie in [0, 1), got {missing_fraction}")
    n_missing = int(math.floor(missing_fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    hidden = rng.choice(n, size=n_missing, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[hidden] = False
    v = np.flatnonzero(keep)
    return ObservationSet(n, v, y[v])
