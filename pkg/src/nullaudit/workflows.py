"""Adaptive strategy-search workflows under strict walk-forward evaluation.

A workflow builds K candidate signals from a return path using only causal
information, picks the candidate with the largest absolute in-sample
z-statistic, and then evaluates that single winner on the disjoint
walk-forward block. The walk-forward block is physically gated: it cannot
be read until the selection is finalized, and the one deliberately
non-causal family (Lookahead) must be constructed through an explicitly
flagged constructor.

Effective multiplicity is reported on two panels, because they answer
different questions: the raw prediction scores measure the correlation
geometry of the search, while the realized strategy returns (position
times return) measure the geometry the selection statistic actually sees,
which thresholding transforms can expand dramatically.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .environments import ReturnPath
from .inference import DegenerateVarianceError, z_scan, z_statistic
from .inflation import DEFAULT_TAU, inflation_diagnostics
from .multiplicity import k_eff_from_panel
from .rng import stream

__all__ = [
    "WorkflowFamily",
    "TransformKind",
    "ThresholdTransform",
    "WorkflowSpec",
    "CandidatePanel",
    "SelectionOutcome",
    "WalkForwardGate",
    "WalkForwardGateError",
    "ProtocolViolationError",
    "NoTradingError",
    "BreakEvenResult",
    "build_candidates",
    "apply_threshold",
    "run_selection",
    "breakeven_cost",
    "TREND_THRESHOLD_GRID",
]

_MIN_PHASE_LEN = 8

# Breakout threshold grid in sigma units: 0.5, 0.7, ..., 3.5.
TREND_THRESHOLD_GRID: tuple[float, ...] = tuple(
    round(0.5 + 0.2 * i, 1) for i in range(16)
)

# Continuous scores are N(0,1)-scale; dividing by 4 maps essentially all
# of them into the position box [-1, 1] without distorting correlations.
_SCORE_POSITION_SCALE = 4.0


class ProtocolViolationError(ValueError):
    """A deliberately non-causal construction was requested without its flag."""


class WalkForwardGateError(RuntimeError):
    """Walk-forward data was touched before selection was finalized."""


class NoTradingError(ValueError):
    """The walk-forward block contains no position changes."""


class WorkflowFamily(str, Enum):
    RANDOM_BASELINE = "RandomBaseline"
    DATA_MINER = "DataMiner"
    LOOKAHEAD = "Lookahead"
    CONTRARIAN = "Contrarian"
    REGIME_DETECTOR = "RegimeDetector"
    FACTOR_MIMIC = "FactorMimic"
    FEATURE_MINING = "FeatureMining"
    CORRELATED_FAMILY_SEARCH = "CorrelatedFamilySearch"
    TREND_FOLLOWING = "TrendFollowing"


class TransformKind(str, Enum):
    NONE = "None"
    SIGN_ONLY = "SignOnly"
    FIXED = "Fixed"
    ADAPTIVE_QUANTILE = "AdaptiveQuantile"


@dataclass(frozen=True)
class ThresholdTransform:
    kind: TransformKind = TransformKind.NONE
    level: float | None = None

    def __post_init__(self) -> None:
        if self.kind is TransformKind.FIXED:
            if self.level is None or self.level < 0.0:
                raise ValueError("Fixed transform needs a threshold >= 0")
        elif self.kind is TransformKind.ADAPTIVE_QUANTILE:
            if self.level is None or not 0.0 < self.level < 1.0:
                raise ValueError("AdaptiveQuantile transform needs q in (0,1)")
        elif self.level is not None:
            raise ValueError(f"{self.kind.value} transform takes no level")

    @classmethod
    def none(cls) -> "ThresholdTransform":
        return cls(TransformKind.NONE)

    @classmethod
    def sign_only(cls) -> "ThresholdTransform":
        return cls(TransformKind.SIGN_ONLY)

    @classmethod
    def fixed(cls, threshold: float) -> "ThresholdTransform":
        return cls(TransformKind.FIXED, float(threshold))

    @classmethod
    def adaptive_quantile(cls, q: float) -> "ThresholdTransform":
        return cls(TransformKind.ADAPTIVE_QUANTILE, float(q))

    def describe(self) -> str:
        if self.kind is TransformKind.FIXED:
            return f"Fixed(thr={self.level:g})"
        if self.kind is TransformKind.ADAPTIVE_QUANTILE:
            return f"AdaptiveQuantile(q={self.level:g})"
        return self.kind.value


# Families whose candidates are continuous prediction scores; these accept
# a threshold transform. The rule-based families define positions directly.
_SCORE_FAMILIES = frozenset(
    {
        WorkflowFamily.RANDOM_BASELINE,
        WorkflowFamily.DATA_MINER,
        WorkflowFamily.FEATURE_MINING,
        WorkflowFamily.CORRELATED_FAMILY_SEARCH,
    }
)

_DEFAULT_PARAMS: dict[WorkflowFamily, dict[str, float]] = {
    WorkflowFamily.CONTRARIAN: {"theta": 1.0},
    WorkflowFamily.REGIME_DETECTOR: {"window": 20, "cutoff_quantile": 0.8},
    WorkflowFamily.CORRELATED_FAMILY_SEARCH: {"clusters": 5, "rho": 0.9},
    WorkflowFamily.TREND_FOLLOWING: {"min_trades": 10},
}


@dataclass(frozen=True)
class WorkflowSpec:
    family: WorkflowFamily
    k: int = 1
    split_ratio: float = 0.6
    transform: ThresholdTransform | None = None
    params: Mapping[str, float] = field(default_factory=dict)
    allow_lookahead: bool = False
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must be in (0,1), got {self.split_ratio}")
        if self.tau <= 0.0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.family is WorkflowFamily.LOOKAHEAD and not self.allow_lookahead:
            raise ProtocolViolationError(
                "Lookahead is non-causal; construct it with allow_lookahead=True "
                "to acknowledge the protocol violation"
            )
        if self.transform is not None and self.family not in _SCORE_FAMILIES:
            raise ValueError(
                f"{self.family.value} defines positions directly and takes no "
                "threshold transform"
            )
        defaults = _DEFAULT_PARAMS.get(self.family, {})
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown params for {self.family.value}: {sorted(unknown)}")

    def param(self, name: str) -> float:
        defaults = _DEFAULT_PARAMS.get(self.family, {})
        return float(self.params.get(name, defaults[name]))

    def effective_transform(self) -> ThresholdTransform:
        if self.transform is not None:
            return self.transform
        # Miner-style candidates trade the sign of their predictor by default.
        if self.family in (WorkflowFamily.DATA_MINER, WorkflowFamily.FEATURE_MINING):
            return ThresholdTransform.sign_only()
        return ThresholdTransform.none()

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "k": self.k,
            "split_ratio": self.split_ratio,
            "transform": None
            if self.transform is None
            else {"kind": self.transform.kind.value, "level": self.transform.level},
            "params": {k: self.params[k] for k in sorted(self.params)},
            "allow_lookahead": self.allow_lookahead,
            "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorkflowSpec":
        transform = None
        if d.get("transform") is not None:
            t = d["transform"]
            transform = ThresholdTransform(TransformKind(t["kind"]), t.get("level"))
        return cls(
            family=WorkflowFamily(d["family"]),
            k=int(d.get("k", 1)),
            split_ratio=float(d.get("split_ratio", 0.6)),
            transform=transform,
            params=dict(d.get("params", {})),
            allow_lookahead=bool(d.get("allow_lookahead", False)),
            tau=float(d.get("tau", DEFAULT_TAU)),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class CandidatePanel:
    """Full-length positions (T x K), optional raw scores, and eligibility."""

    positions: np.ndarray
    scores: np.ndarray | None
    eligible: np.ndarray
    lookahead: bool = False


@dataclass(frozen=True)
class SelectionOutcome:
    winner_index: int
    z_is_star: float
    z_wf_star: float
    z_wf_signed: float
    delta_z: float
    bif_raw: float | None
    bif_stab: float
    k_eff_pred: float | None
    k_eff_signal: float | None
    n_is: int
    n_wf: int
    degenerate: bool
    tie: bool


class WalkForwardGate:
    """Physical custody of the walk-forward block.

    The out-of-sample returns are unreadable until :meth:`finalize` records
    the winning candidate; touching them earlier raises. This is the runtime
    form of the split-disjointness contract.
    """

    def __init__(self, returns: np.ndarray, n_is: int):
        returns = np.asarray(returns, dtype=np.float64)
        if not 0 < n_is < returns.shape[0]:
            raise ValueError("split index must leave both blocks non-empty")
        self._returns = returns
        self._n_is = int(n_is)
        self._winner: int | None = None

    @property
    def n_is(self) -> int:
        return self._n_is

    @property
    def in_sample(self) -> np.ndarray:
        return self._returns[: self._n_is]

    @property
    def finalized(self) -> bool:
        return self._winner is not None

    def finalize(self, winner_index: int) -> None:
        if self._winner is not None:
            raise WalkForwardGateError("selection already finalized")
        self._winner = int(winner_index)

    @property
    def walk_forward(self) -> np.ndarray:
        if self._winner is None:
            raise WalkForwardGateError(
                "walk-forward block accessed before selection was finalized"
            )
        return self._returns[self._n_is :]


def apply_threshold(
    scores: np.ndarray,
    transform: ThresholdTransform,
    n_is: int | None = None,
) -> np.ndarray:
    """Map continuous scores to positions in {-1, 0, +1}.

    ``Fixed(thr)`` keeps the sign where ``|score| > thr``; ``SignOnly`` is
    ``Fixed(0)``; ``AdaptiveQuantile(q)`` sets each candidate's cutoff to the
    q-quantile of its own in-sample ``|score|`` (first ``n_is`` rows), so the
    cutoff never sees walk-forward data. ``None`` passes scores through.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if transform.kind is TransformKind.NONE:
        return scores
    if transform.kind is TransformKind.SIGN_ONLY:
        cutoff = 0.0
    elif transform.kind is TransformKind.FIXED:
        cutoff = float(transform.level)
    else:
        if n_is is None or n_is < 1:
            raise ValueError("AdaptiveQuantile needs the in-sample length")
        cutoff = np.quantile(np.abs(scores[:n_is]), transform.level, axis=0)
    return np.sign(scores) * (np.abs(scores) > cutoff)


def _positions_from_scores(
    scores: np.ndarray, transform: ThresholdTransform, n_is: int
) -> np.ndarray:
    if transform.kind is TransformKind.NONE:
        return np.clip(scores / _SCORE_POSITION_SCALE, -1.0, 1.0)
    return apply_threshold(scores, transform, n_is)


def _build_score_panel(
    spec: WorkflowSpec, t_len: int, n_is: int, rng: np.random.Generator
) -> CandidatePanel:
    k = spec.k
    if spec.family is WorkflowFamily.CORRELATED_FAMILY_SEARCH:
        m = int(spec.param("clusters"))
        rho = spec.param("rho")
        if not 1 <= m <= k:
            raise ValueError(f"clusters must lie in [1, K], got {m}")
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must lie in [0,1], got {rho}")
        # K noisy copies of m base predictors; candidate k loads on factor
        # k mod m, giving near-equal cluster sizes.
        factors = rng.standard_normal((t_len, m))
        noise = rng.standard_normal((t_len, k))
        assignment = np.arange(k) % m
        scores = math.sqrt(rho) * factors[:, assignment] + math.sqrt(1.0 - rho) * noise
    else:
        scores = rng.standard_normal((t_len, k))
    transform = spec.effective_transform()
    positions = _positions_from_scores(scores, transform, n_is)
    return CandidatePanel(
        positions=positions,
        scores=scores,
        eligible=np.ones(k, dtype=bool),
    )


def _rolling_std(r: np.ndarray, window: int) -> np.ndarray:
    """Trailing-window std of r over [t-window, t-1]; NaN before warmup."""
    t_len = r.shape[0]
    out = np.full(t_len, np.nan)
    if t_len <= window:
        return out
    c1 = np.concatenate(([0.0], np.cumsum(r)))
    c2 = np.concatenate(([0.0], np.cumsum(r * r)))
    s1 = c1[window:-1] - c1[:-window - 1]
    s2 = c2[window:-1] - c2[:-window - 1]
    var = np.maximum(s2 / window - (s1 / window) ** 2, 0.0)
    out[window:] = np.sqrt(var)
    return out


def _build_rule_panel(spec: WorkflowSpec, gate: WalkForwardGate, r: np.ndarray) -> CandidatePanel:
    t_len = r.shape[0]
    n_is = gate.n_is
    family = spec.family
    if family is WorkflowFamily.LOOKAHEAD:
        # alignment deliberately broken: the position multiplying r_t is a
        # function of r_t itself, one step ahead of any causal rule
        positions = np.sign(r)[:, None].copy()
        return CandidatePanel(positions, None, np.ones(1, dtype=bool), lookahead=True)
    if family is WorkflowFamily.FACTOR_MIMIC:
        return CandidatePanel(np.ones((t_len, 1)), None, np.ones(1, dtype=bool))
    if family is WorkflowFamily.CONTRARIAN:
        theta = spec.param("theta")
        if theta <= 0.0:
            raise ValueError(f"theta must be > 0, got {theta}")
        sigma_is = float(gate.in_sample.std())
        if sigma_is == 0.0:
            raise ValueError("in-sample block has zero variance")
        positions = np.zeros((t_len, 1))
        positions[1:, 0] = np.clip(-theta * r[:-1] / (3.0 * sigma_is), -1.0, 1.0)
        return CandidatePanel(positions, None, np.ones(1, dtype=bool))
    if family is WorkflowFamily.REGIME_DETECTOR:
        window = int(spec.param("window"))
        q = spec.param("cutoff_quantile")
        if window < 2 or window >= n_is:
            raise ValueError(f"window must lie in [2, n_is), got {window}")
        if not 0.0 < q < 1.0:
            raise ValueError(f"cutoff_quantile must lie in (0,1), got {q}")
        vol = _rolling_std(r, window)
        cutoff = float(np.nanquantile(vol[:n_is], q))
        positions = np.zeros((t_len, 1))
        valid = ~np.isnan(vol)
        # Long in calm regimes, flat once trailing vol breaches the cutoff.
        positions[valid, 0] = (vol[valid] <= cutoff).astype(np.float64)
        return CandidatePanel(positions, None, np.ones(1, dtype=bool))
    if family is WorkflowFamily.TREND_FOLLOWING:
        min_trades = int(spec.param("min_trades"))
        grid = np.asarray(TREND_THRESHOLD_GRID)
        sigma_is = float(gate.in_sample.std())
        if sigma_is == 0.0:
            raise ValueError("in-sample block has zero variance")
        lagged = r[:-1]
        breakout = np.abs(lagged)[:, None] > grid[None, :] * sigma_is
        positions = np.zeros((t_len, grid.shape[0]))
        positions[1:] = np.sign(lagged)[:, None] * breakout
        active_is = (positions[:n_is] != 0.0).sum(axis=0)
        eligible = active_is >= min_trades
        return CandidatePanel(positions, None, eligible)
    raise ValueError(f"unsupported family: {family}")


def build_candidates(
    spec: WorkflowSpec, path: ReturnPath, rng: np.random.Generator | None = None
) -> CandidatePanel:
    """Construct the full candidate panel for one path.

    Randomized families draw from ``rng``; by default the stream derives
    from the path seed so (spec, path) fully determines the panel.
    """
    r = path.values
    t_len = r.shape[0]
    n_is = math.floor(spec.split_ratio * t_len)
    if n_is < _MIN_PHASE_LEN or t_len - n_is < _MIN_PHASE_LEN:
        raise ValueError(
            f"split {n_is}/{t_len - n_is} leaves a phase below {_MIN_PHASE_LEN} observations"
        )
    if spec.family in _SCORE_FAMILIES:
        if rng is None:
            rng = stream(path.seed if path.seed is not None else 0, "candidates")
        return _build_score_panel(spec, t_len, n_is, rng)
    gate = WalkForwardGate(r, n_is)
    return _build_rule_panel(spec, gate, r)


def _winner_keff(panel: np.ndarray) -> float | None:
    # Thresholded signals routinely produce all-zero columns; those are
    # expected here, so the degenerate-column warning is suppressed.
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return float(k_eff_from_panel(panel, shrink=True).value)
    except ValueError:
        return None


def run_selection(
    spec: WorkflowSpec,
    path: ReturnPath,
    rng: np.random.Generator | None = None,
    compute_keff: bool | str = True,
) -> SelectionOutcome:
    """Select the best in-sample candidate and evaluate it out-of-sample.

    The winner is the argmax of |Z_IS| over eligible candidates (ties go to
    the lowest index and are recorded). Only the winner is ever evaluated on
    the walk-forward block. A degenerate winner (zero-variance realized
    returns in either phase, or no eligible candidate at all) is flagged:
    its walk-forward statistic is treated as 0 for the gap, and the outcome
    is excluded from inflation-factor aggregation.

    ``compute_keff`` may be True (both multiplicity estimates), False
    (neither), or "pred" (candidate-space estimate only; the realized-signal
    estimate over the full panel is the expensive one).
    """
    if compute_keff not in (True, False, "pred"):
        raise ValueError("compute_keff must be True, False, or 'pred'")
    r = path.values
    t_len = r.shape[0]
    n_is = math.floor(spec.split_ratio * t_len)
    panel = build_candidates(spec, path, rng=rng)
    gate = WalkForwardGate(r, n_is)
    realized = panel.positions * r[:, None]

    z_is, degenerate_is = z_scan(realized[:n_is])
    abs_z = np.abs(z_is)
    abs_z[~panel.eligible] = -1.0
    winner = int(np.argmax(abs_z))
    best = abs_z[winner]
    tie = bool(best >= 0.0 and np.count_nonzero(abs_z == best) > 1)
    no_candidate = best < 0.0
    z_is_star = float(abs_z[winner]) if not no_candidate else 0.0

    gate.finalize(winner)
    wf_returns = gate.walk_forward * panel.positions[n_is:, winner]
    degenerate = no_candidate or bool(degenerate_is[winner])
    z_wf_signed = 0.0
    if not degenerate:
        try:
            z_wf_signed = z_statistic(wf_returns)
        except DegenerateVarianceError:
            degenerate = True
    z_wf_star = abs(z_wf_signed)

    diag = inflation_diagnostics(z_is_star, z_wf_star, tau=spec.tau)

    k_eff_pred = k_eff_signal = None
    if compute_keff:
        pred_panel = panel.scores if panel.scores is not None else panel.positions
        k_eff_pred = _winner_keff(pred_panel[:n_is])
        if compute_keff is True:
            k_eff_signal = _winner_keff(realized)

    return SelectionOutcome(
        winner_index=winner,
        z_is_star=z_is_star,
        z_wf_star=z_wf_star,
        z_wf_signed=z_wf_signed,
        delta_z=diag.delta_z,
        bif_raw=diag.bif_raw,
        bif_stab=diag.bif_stab,
        k_eff_pred=k_eff_pred,
        k_eff_signal=k_eff_signal,
        n_is=n_is,
        n_wf=t_len - n_is,
        degenerate=degenerate,
        tie=tie,
    )


@dataclass(frozen=True)
class BreakEvenResult:
    c_star: float
    c_star_bps: float
    mu_gross_ann: float
    volume_two_way_ann: float
    turnover_one_way_ann: float
    n_wf: int


def breakeven_cost(
    signals: np.ndarray, returns: np.ndarray, wf_start: int
) -> BreakEvenResult:
    """Per-side cost that zeroes the annualized walk-forward net mean.

    Two-way volume sums |s_t - s_{t-1}| over the walk-forward block,
    including the boundary trade into the block's first position (from the
    last in-sample position, or from flat when ``wf_start`` is 0); a flip
    +1 to -1 contributes 2. Then ``c* = mu_gross / volume`` with both sides
    annualized, and the one-way turnover is half the two-way volume.
    """
    signals = np.asarray(signals, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    if signals.shape != returns.shape or signals.ndim != 1:
        raise ValueError("signals and returns must be 1-d arrays of equal length")
    t_len = signals.shape[0]
    if not 0 <= wf_start < t_len:
        raise ValueError(f"wf_start must lie in [0, T), got {wf_start}")
    prev = signals[wf_start - 1] if wf_start > 0 else 0.0
    steps = np.concatenate(([prev], signals[wf_start:]))
    volume = float(np.abs(np.diff(steps)).sum())
    if volume == 0.0:
        raise NoTradingError("no position changes in the walk-forward block")
    n_wf = t_len - wf_start
    years = n_wf / 252.0
    volume_ann = volume / years
    mu_gross_ann = 252.0 * float(np.mean(signals[wf_start:] * returns[wf_start:]))
    c_star = mu_gross_ann / volume_ann
    return BreakEvenResult(
        c_star=c_star,
        c_star_bps=1e4 * c_star,
        mu_gross_ann=mu_gross_ann,
        volume_two_way_ann=volume_ann,
        turnover_one_way_ann=volume_ann / 2.0,
        n_wf=n_wf,
    )
