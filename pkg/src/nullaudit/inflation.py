"""Selection-inflation diagnostics for a single (in-sample, walk-forward) pair.

The primary measure is the magnitude gap ``delta_z = z_is_star - z_wf_star``,
which is invariant to the stabilization parameter. The inflation factor
``z_is_star / z_wf_star`` is reported raw only when defined, and in the
stabilized form ``z_is_star / max(z_wf_star, tau)`` which caps at
``z_is_star / tau`` as the walk-forward statistic collapses.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["InflationDiagnostics", "inflation_diagnostics", "DEFAULT_TAU"]

DEFAULT_TAU = 0.5


@dataclass(frozen=True)
class InflationDiagnostics:
    delta_z: float
    bif_raw: float | None
    bif_stab: float
    tau: float
    deflator: float
    gated: bool


def inflation_diagnostics(
    z_is_star: float, z_wf_star: float, tau: float = DEFAULT_TAU
) -> InflationDiagnostics:
    """Compute the gap and inflation-factor diagnostics.

    ``bif_raw`` is absent (None, not 0 or inf) when ``z_wf_star`` is exactly
    zero. ``gated`` marks whether ``z_wf_star >= tau``, i.e. whether the
    stabilization floor was inactive; aggregate BIF summaries are restricted
    to the gated subset.
    """
    if z_is_star < 0.0 or z_wf_star < 0.0:
        raise ValueError("z_is_star and z_wf_star must be non-negative magnitudes")
    if tau <= 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    delta_z = z_is_star - z_wf_star
    bif_raw = None if z_wf_star == 0.0 else z_is_star / z_wf_star
    bif_stab = z_is_star / max(z_wf_star, tau)
    deflator = 1.0 / bif_stab if bif_stab > 0.0 else float("inf")
    return InflationDiagnostics(
        delta_z=delta_z,
        bif_raw=bif_raw,
        bif_stab=bif_stab,
        tau=tau,
        deflator=deflator,
        gated=z_wf_star >= tau,
    )
