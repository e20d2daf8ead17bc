"""Effective multiplicity of a candidate panel.

A search over K correlated candidates behaves like a search over fewer
independent ones. We summarize that redundancy as
``K_eff = K^2 / ||R||_F^2`` for a correlation matrix ``R``, and estimate
``R`` from finite panels with a Ledoit-Wolf style shrinkage toward the
identity so the estimate stays usable when K approaches or exceeds the
number of observations. The unshrunk sample estimator is kept as a
negative control; it collapses in high dimensions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShrinkageResult",
    "EffectiveMultiplicity",
    "sample_correlation",
    "shrink_correlation",
    "k_eff",
    "k_eff_from_panel",
    "k_eff_population",
]

_DIAG_TOL = 1e-8


@dataclass(frozen=True)
class ShrinkageResult:
    """Shrunk correlation matrix with the fitted intensity."""

    matrix: np.ndarray
    intensity: float
    n_used: int
    n_dropped: int


@dataclass(frozen=True)
class EffectiveMultiplicity:
    value: float
    intensity: float | None
    n_used: int
    n_dropped: int


def _drop_degenerate(panel: np.ndarray) -> tuple[np.ndarray, int]:
    panel = np.asarray(panel, dtype=np.float64)
    if panel.ndim != 2:
        raise ValueError(f"expected 2-d panel, got shape {panel.shape}")
    n, k = panel.shape
    if n < 3:
        raise ValueError(f"need at least 3 observations, got {n}")
    if k < 1:
        raise ValueError("panel has no columns")
    if not np.all(np.isfinite(panel)):
        raise ValueError("panel contains non-finite values")
    sd = panel.std(axis=0, ddof=1)
    keep = sd > 0.0
    n_dropped = int(k - keep.sum())
    if n_dropped:
        warnings.warn(
            f"dropping {n_dropped} zero-variance column(s) from correlation panel",
            RuntimeWarning,
            stacklevel=3,
        )
    if not keep.any():
        raise ValueError("all panel columns have zero variance")
    return panel[:, keep], n_dropped


def sample_correlation(panel: np.ndarray) -> np.ndarray:
    """Plain Pearson correlation matrix of the panel columns."""
    panel, _ = _drop_degenerate(panel)
    if panel.shape[1] == 1:
        return np.ones((1, 1))
    r = np.corrcoef(panel, rowvar=False)
    np.fill_diagonal(r, 1.0)
    return r


def shrink_correlation(panel: np.ndarray) -> ShrinkageResult:
    """Shrink the sample correlation toward the identity.

    The intensity minimizes the estimated MSE of the off-diagonal entries:
    ``lambda = sum Var(r_ij) / sum r_ij^2`` clipped to [0, 1], with the
    variance of each correlation estimated from the standardized data.
    """
    panel, n_dropped = _drop_degenerate(panel)
    n, k = panel.shape
    if k == 1:
        return ShrinkageResult(np.ones((1, 1)), 1.0, 1, n_dropped)
    xs = (panel - panel.mean(axis=0)) / panel.std(axis=0, ddof=1)
    wbar = xs.T @ xs / n
    r = wbar * (n / (n - 1.0))
    w2 = (xs * xs).T @ (xs * xs)
    var_r = (n / (n - 1.0) ** 3) * (w2 - n * wbar * wbar)
    off = ~np.eye(k, dtype=bool)
    denom = float(np.sum(r[off] ** 2))
    if denom == 0.0:
        lam = 1.0
    else:
        lam = float(np.clip(np.sum(var_r[off]) / denom, 0.0, 1.0))
    shrunk = (1.0 - lam) * r
    np.fill_diagonal(shrunk, 1.0)
    return ShrinkageResult(shrunk, lam, k, n_dropped)


def k_eff(corr: np.ndarray) -> float:
    """``K^2 / ||R||_F^2`` for a correlation matrix ``R``.

    Equals ``(sum eigenvalues)^2 / sum eigenvalues^2``, so it lies in
    ``[1, K]``: 1 for perfectly redundant candidates, K for orthogonal ones.
    """
    corr = np.asarray(corr, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ValueError(f"expected square matrix, got shape {corr.shape}")
    if not np.all(np.isfinite(corr)):
        raise ValueError("correlation matrix contains non-finite values")
    if not np.allclose(corr, corr.T, atol=_DIAG_TOL):
        raise ValueError("correlation matrix is not symmetric")
    if np.max(np.abs(np.diag(corr) - 1.0)) > _DIAG_TOL:
        raise ValueError("correlation matrix diagonal is not 1")
    k = corr.shape[0]
    return float(k * k / np.sum(corr * corr))


def k_eff_from_panel(panel: np.ndarray, shrink: bool = True) -> EffectiveMultiplicity:
    """Estimate effective multiplicity directly from an ``(n, K)`` panel."""
    if shrink:
        res = shrink_correlation(panel)
        return EffectiveMultiplicity(
            k_eff(res.matrix), res.intensity, res.n_used, res.n_dropped
        )
    corr = sample_correlation(panel)
    panel_arr = np.asarray(panel)
    n_dropped = panel_arr.shape[1] - corr.shape[0]
    return EffectiveMultiplicity(k_eff(corr), None, corr.shape[0], n_dropped)


def k_eff_population(cluster_sizes: list[int], rho: float) -> float:
    """Effective multiplicity of block-equicorrelated candidates.

    Candidates split into clusters with within-cluster correlation ``rho``
    and zero correlation across clusters.
    """
    if not cluster_sizes:
        raise ValueError("need at least one cluster")
    if any(int(s) < 1 for s in cluster_sizes):
        raise ValueError("cluster sizes must be positive")
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [-1, 1], got {rho}")
    k = float(sum(int(s) for s in cluster_sizes))
    frob = 0.0
    for s in cluster_sizes:
        s = float(int(s))
        frob += s + rho * rho * s * (s - 1.0)
    return k * k / frob
