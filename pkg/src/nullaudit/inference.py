"""Autocorrelation-robust performance statistics.

The core statistic throughout is the studentized mean of a daily return
series, with long-run variance estimated by a Bartlett-kernel (Newey-West)
HAC estimator. Autocovariances use divisor ``n`` so the kernel sum stays
positive semidefinite, and the bandwidth follows the standard
``floor(4 * (n/100)^(2/9))`` rule.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DegenerateVarianceError",
    "EULER_GAMMA",
    "bartlett_bandwidth",
    "hac_variance_of_mean",
    "z_statistic",
    "z_scan",
    "evt_expected_max",
    "half_normal_mean",
    "empirical_quantile",
]

EULER_GAMMA = 0.5772156649015329

# Relative floor keeping the variance estimate positive when negative
# autocovariances would otherwise drive the kernel sum to zero or below.
_VAR_FLOOR = 1e-12

_MIN_OBS = 8


class DegenerateVarianceError(ValueError):
    """Raised when a series has exactly zero sample variance."""


def bartlett_bandwidth(n: int) -> int:
    """Newey-West rule-of-thumb lag truncation for a length-``n`` series."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    return math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0))


def _check_series(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected 1-d series, got shape {x.shape}")
    if x.shape[0] < _MIN_OBS:
        raise ValueError(f"need at least {_MIN_OBS} observations, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


def hac_variance_of_mean(x: np.ndarray, bandwidth: int | None = None) -> float:
    """HAC estimate of ``Var(mean(x))``.

    Raises :class:`DegenerateVarianceError` if ``x`` is exactly constant.
    """
    x = _check_series(x)
    n = x.shape[0]
    if bandwidth is None:
        bandwidth = bartlett_bandwidth(n)
    elif bandwidth < 0 or bandwidth >= n:
        raise ValueError(f"bandwidth must be in [0, n), got {bandwidth}")
    xd = x - x.mean()
    gamma0 = float(xd @ xd) / n
    if gamma0 == 0.0:
        raise DegenerateVarianceError("series has zero sample variance")
    lrv = gamma0
    for lag in range(1, bandwidth + 1):
        weight = 1.0 - lag / (bandwidth + 1.0)
        lrv += 2.0 * weight * float(xd[lag:] @ xd[: n - lag]) / n
    floor = _VAR_FLOOR * (1.0 + float(np.mean(x * x)))
    return max(lrv / n, floor)


def z_statistic(x: np.ndarray, bandwidth: int | None = None) -> float:
    """Studentized mean ``mean(x) / sqrt(hac_variance_of_mean(x))``."""
    x = _check_series(x)
    v = hac_variance_of_mean(x, bandwidth=bandwidth)
    return float(x.mean() / math.sqrt(v))


def z_scan(panel: np.ndarray, bandwidth: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise z-statistics for an ``(n, K)`` panel.

    Returns ``(z, degenerate)`` where degenerate columns (zero sample
    variance) carry ``z = 0`` and ``degenerate = True``. Matches
    :func:`z_statistic` on every non-degenerate column.
    """
    panel = np.asarray(panel, dtype=np.float64)
    if panel.ndim != 2:
        raise ValueError(f"expected 2-d panel, got shape {panel.shape}")
    n = panel.shape[0]
    if n < _MIN_OBS:
        raise ValueError(f"need at least {_MIN_OBS} observations, got {n}")
    if not np.all(np.isfinite(panel)):
        raise ValueError("panel contains non-finite values")
    if bandwidth is None:
        bandwidth = bartlett_bandwidth(n)
    mu = panel.mean(axis=0)
    xd = panel - mu
    lrv = np.einsum("ij,ij->j", xd, xd) / n
    degenerate = lrv == 0.0
    for lag in range(1, bandwidth + 1):
        weight = 1.0 - lag / (bandwidth + 1.0)
        lrv += 2.0 * weight * np.einsum("ij,ij->j", xd[lag:], xd[: n - lag]) / n
    floor = _VAR_FLOOR * (1.0 + np.mean(panel * panel, axis=0))
    var_mean = np.maximum(lrv / n, floor)
    z = np.where(degenerate, 0.0, mu / np.sqrt(var_mean))
    return z, degenerate


def evt_expected_max(m: float) -> float:
    """Expected maximum of ``m`` iid standard normals (Gumbel approximation).

    Uses the normalizing constants ``a_m + gamma * b_m`` with
    ``b_m = 1/sqrt(2 ln m)`` and
    ``a_m = sqrt(2 ln m) - (ln ln m + ln 4*pi) / (2 sqrt(2 ln m))``.
    """
    if m < 2:
        raise ValueError(f"need m >= 2, got {m}")
    c = math.sqrt(2.0 * math.log(m))
    a_m = c - (math.log(math.log(m)) + math.log(4.0 * math.pi)) / (2.0 * c)
    b_m = 1.0 / c
    return a_m + EULER_GAMMA * b_m


def half_normal_mean() -> float:
    """``E|Z|`` for standard normal ``Z``."""
    return math.sqrt(2.0 / math.pi)


def empirical_quantile(sample: np.ndarray, q: float) -> float:
    """Inverse-CDF (lower) empirical quantile of a sample."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 1 or sample.size == 0:
        raise ValueError("sample must be a non-empty 1-d array")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0, 1), got {q}")
    return float(np.quantile(sample, q, method="inverted_cdf"))
