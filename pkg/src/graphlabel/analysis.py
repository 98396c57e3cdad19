"""Posterior summaries, predictions, evaluation metrics and baselines."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csgraph
from scipy.special import ndtr

from .graph import Graph, Spectrum
from .model import FixedScale, ObservationSet, PriorConfig, SoftLabelTruth
from .sampler import PosteriorDraws, SamplerConfig, run_chain

log = logging.getLogger(__name__)


class UnreachableVertexError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Per-vertex posterior mean and credible interval of ``ell = Phi(f)``."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    c_mean: float
    c_quantiles: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.mean)


def posterior_summary(draws: PosteriorDraws, level: float = 0.95) -> PosteriorSummary:
    """Summarize draws on the soft-label scale.

    Intervals are the empirical ``(1 - level)/2`` and ``(1 + level)/2``
    quantiles of ``Phi(f_i)`` (linear interpolation between order statistics).
    """
    if draws.n_kept == 0:
        raise ValueError("no posterior draws to summarize")
    if not 0.0 < level < 1.0:
        raise ValueError(f"credible level must lie in (0, 1), got {level}")
    ell = ndtr(draws.f_draws)
    lo, hi = np.quantile(ell, [(1 - level) / 2, (1 + level) / 2], axis=0)
    probs = (0.025, 0.25, 0.5, 0.75, 0.975)
    cq = dict(zip(probs, np.quantile(draws.c_draws, probs).tolist()))
    return PosteriorSummary(ell.mean(axis=0), lo, hi, level, float(draws.c_draws.mean()), cq)


def predict_labels(summary, threshold: float = 0.5) -> np.ndarray:
    """Label 1 where the posterior mean of ``ell`` strictly exceeds ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    mean = summary.mean if isinstance(summary, PosteriorSummary) else np.asarray(summary)
    return (mean > threshold).astype(np.int8)


def misclassification_rate(pred, truth, eval_set) -> float:
    idx = np.asarray(eval_set, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("evaluation set is empty")
    return float(np.mean(np.asarray(pred)[idx] != np.asarray(truth)[idx]))


def mse_of_mean(summary, truth) -> float:
    """Mean squared error of the posterior mean of ``ell`` against ``ell0``, over all vertices."""
    mean = summary.mean if isinstance(summary, PosteriorSummary) else np.asarray(summary)
    ell0 = truth.ell0 if isinstance(truth, SoftLabelTruth) else np.asarray(truth)
    if mean.shape != ell0.shape:
        raise ValueError(f"shape mismatch: {mean.shape} vs {ell0.shape}")
    return float(np.mean((mean - ell0) ** 2))


def batch_means_se(x, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of the mean of a correlated chain by batch means.

    ``x`` is (iterations,) or (iterations, dims); the result has the trailing shape.
    """
    x = np.asarray(x, dtype=np.float64)
    size = len(x) // n_batches
    if size < 1:
        raise ValueError(f"need at least {n_batches} draws for {n_batches} batches")
    batches = x[: size * n_batches].reshape(n_batches, size, *x.shape[1:]).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


@dataclass(frozen=True)
class SweepResult:
    c_star: float
    curve: list[tuple[float, float]]
    failed: list[tuple[float, str]] = field(default_factory=list)


def _fixed_c_mse(c, obs, prior, cfg, truth, graph, spectrum, level):
    p = replace(prior, c_prior=FixedScale(c))
    draws = run_chain(obs, p, cfg, graph=graph, spectrum=spectrum)
    return mse_of_mean(posterior_summary(draws, level), truth)


def oracle_sweep(grid, obs: ObservationSet, prior: PriorConfig, cfg: SamplerConfig,
                 truth: SoftLabelTruth, *, graph: Graph | None = None,
                 spectrum: Spectrum | None = None, level: float = 0.95,
                 n_jobs: int = 1) -> SweepResult:
    """MSE of the posterior mean under fixed scales ``c`` from ``grid``; returns the minimizer.

    Every grid point reuses ``cfg`` (and so its seed). Failed points are
    logged and recorded but do not stop the sweep.
    """
    grid = [float(c) for c in grid]
    if not grid:
        raise ValueError("empty grid")
    if any(c <= 0 for c in grid) or grid != sorted(grid):
        raise ValueError("grid must be positive and sorted")
    args = (obs, prior, cfg, truth, graph, spectrum, level)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_fixed_c_mse, c, *args) for c in grid]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # noqa: BLE001 -- a failed point is recorded and skipped
                    outcomes.append(exc)
    else:
        outcomes = []
        for c in grid:
            try:
                outcomes.append(_fixed_c_mse(c, *args))
            except Exception as exc:  # noqa: BLE001
                outcomes.append(exc)
    curve, failed = [], []
    for c, out in zip(grid, outcomes):
        if isinstance(out, Exception):
            log.warning("sweep point c=%g failed: %s", c, out)
            failed.append((c, repr(out)))
        else:
            curve.append((c, out))
    if not curve:
        raise RuntimeError("every sweep point failed")
    c_star = min(curve, key=lambda t: t[1])[0]
    return SweepResult(c_star, curve, failed)


def scaled_c_transform(c_draws, r: float, q: float, n: int) -> np.ndarray:
    """``n^(1 - r/(2q)) c^(-r/(2q))``, the scale on which the generalized gamma prior is natural."""
    c = np.asarray(c_draws, dtype=np.float64)
    if np.any(c <= 0):
        raise ValueError("scale draws must be positive")
    e = r / (2.0 * q)
    return np.exp((1.0 - e) * np.log(n) - e * np.log(c))


def inverse_scaled_c_transform(t, r: float, q: float, n: int) -> np.ndarray:
    e = r / (2.0 * q)
    t = np.asarray(t, dtype=np.float64)
    return np.exp(((1.0 - e) * np.log(n) - np.log(t)) / e)


def knn_baseline(g: Graph, obs: ObservationSet, k: int, on_unreachable: str = "raise") -> np.ndarray:
    """Hop-distance k-NN majority vote for every unobserved vertex.

    Returns predictions aligned with ``obs.missing``. All observed vertices at
    the k-th smallest distance are included; a tied vote predicts 0.
    Unreachable vertices raise, or get ``-1`` with ``on_unreachable="mark"``.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if on_unreachable not in ("raise", "mark"):
        raise ValueError("on_unreachable must be 'raise' or 'mark'")
    missing = obs.missing
    if len(missing) == 0:
        return np.empty(0, dtype=np.int8)
    if len(obs) == 0:
        raise UnreachableVertexError("no observed vertices")
    dist = csgraph.shortest_path(g.adjacency(), method="D", unweighted=True,
                                 directed=False, indices=missing)
    d_obs = dist[:, obs.vertices]
    y = obs.labels.astype(np.int64)
    pred = np.empty(len(missing), dtype=np.int8)
    for row, d in enumerate(d_obs):
        finite = np.isfinite(d)
        if not finite.any():
            if on_unreachable == "raise":
                raise UnreachableVertexError(f"vertex {missing[row]} reaches no observed vertex")
            pred[row] = -1
            continue
        radius = np.partition(d[finite], min(k, finite.sum()) - 1)[min(k, finite.sum()) - 1]
        votes = y[d <= radius]
        pred[row] = 1 if 2 * votes.sum() > len(votes) else 0
    return pred
