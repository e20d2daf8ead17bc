"""Monte Carlo experiment harness.

Each experiment is a grid of cells; each cell is N independent replications.
A replication derives every random stream from (master seed, cell scope,
replication index), so results are bit-identical no matter how the work is
sharded across workers, and the reduction folds replications in index order.

A failed cell is recorded in the output (status "failed" with the error) and
the run continues; callers inspect ``ResultTable.failed_cells`` and the CLI
exits nonzero when it is non-empty.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Callable, Mapping

import numpy as np
from scipy.stats import binom

from .environments import (
    EnvironmentSpec,
    Family,
    default_spec,
    generate,
)
from .inference import evt_expected_max, z_statistic
from .inflation import inflation_diagnostics
from .multiplicity import k_eff_from_panel, k_eff_population
from .rng import child_sequence, stream
from .workflows import (
    NoTradingError,
    ThresholdTransform,
    WorkflowFamily,
    WorkflowSpec,
    breakeven_cost,
    run_selection,
)

__all__ = [
    "Experiment",
    "ExperimentSpec",
    "ResultTable",
    "run_experiment",
    "stabilization_table",
    "default_experiment_params",
]

_Z_CRIT = 1.96


class Experiment(str, Enum):
    SCALING_LAW = "ScalingLaw"
    REDUNDANCY_LAW = "RedundancyLaw"
    REDUNDANCY_IMPERFECT = "RedundancyImperfect"
    CAPACITY_INFLATION = "CapacityInflation"
    THRESHOLD_AMPLIFICATION = "ThresholdAmplification"
    FALSIFICATION_MATRIX = "FalsificationMatrix"
    DETECTION_FRONTIER = "DetectionFrontier"
    BREAK_EVEN_COST = "BreakEvenCost"
    KEFF_VALIDATION = "KeffValidation"
    SPLIT_SENSITIVITY = "SplitSensitivity"


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: Experiment
    n_replications: int = 1000
    master_seed: int = 0
    params: Mapping = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_replications < 1:
            raise ValueError("n_replications must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        defaults = default_experiment_params(self.experiment)
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(
                f"unknown params for {self.experiment.value}: {sorted(unknown)}"
            )

    def resolved_params(self) -> dict:
        merged = dict(default_experiment_params(self.experiment))
        merged.update(self.params)
        return merged


@dataclass
class ResultTable:
    name: str
    columns: list[str]
    rows: list[dict]
    ci_notes: dict[str, str]
    metadata: dict

    @property
    def failed_cells(self) -> list[dict]:
        return [r for r in self.rows if r.get("status") == "failed"]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "columns": self.columns,
            "rows": self.rows,
            "ci_notes": self.ci_notes,
            "metadata": self.metadata,
        }

    def to_csv(self, fh: IO[str]) -> None:
        fh.write(",".join(self.columns) + "\n")
        for row in self.rows:
            cells = []
            for col in self.columns:
                v = row.get(col, "")
                if isinstance(v, float):
                    cells.append(repr(v))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")

    def render_text(self) -> str:
        widths = {c: len(c) for c in self.columns}
        formatted: list[dict[str, str]] = []
        for row in self.rows:
            f = {}
            for c in self.columns:
                v = row.get(c, "")
                f[c] = f"{v:.4g}" if isinstance(v, float) else str(v)
                widths[c] = max(widths[c], len(f[c]))
            formatted.append(f)
        header = "  ".join(c.ljust(widths[c]) for c in self.columns)
        lines = [self.name, header, "-" * len(header)]
        for f in formatted:
            lines.append("  ".join(f[c].ljust(widths[c]) for c in self.columns))
        return "\n".join(lines)

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "table.csv", "w") as fh:
            self.to_csv(fh)
        with open(out_dir / "table.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _seed64(master_seed: int, *path) -> int:
    return int(child_sequence(master_seed, *path).generate_state(1, np.uint64)[0])


def _mean_ci(values: np.ndarray) -> tuple[float, float, float]:
    values = np.asarray(values, dtype=np.float64)
    m = float(values.mean())
    if values.size < 2:
        return m, m, m
    hw = _Z_CRIT * float(values.std(ddof=1)) / math.sqrt(values.size)
    return m, m - hw, m + hw


def _rate_ci(hits: int, n: int) -> tuple[float, float, float]:
    p = hits / n
    hw = _Z_CRIT * math.sqrt(max(p * (1.0 - p), 0.0) / n)
    return 100.0 * p, 100.0 * max(p - hw, 0.0), 100.0 * min(p + hw, 1.0)


def _quantile_ci(values: np.ndarray, q: float) -> tuple[float, float, float]:
    """Point estimate plus an order-statistic 95% interval."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    n = values.size
    point = float(np.quantile(values, q))
    if n < 8:
        return point, float(values[0]), float(values[-1])
    lo_idx = int(binom.ppf(0.025, n, q))
    hi_idx = int(binom.ppf(0.975, n, q))
    lo_idx = min(max(lo_idx, 0), n - 1)
    hi_idx = min(max(hi_idx, 0), n - 1)
    return point, float(values[lo_idx]), float(values[hi_idx])


_CI_NOTES = {
    "means": "normal approximation, mean +/- 1.96 * sd / sqrt(N)",
    "rates": "binomial Wald interval at 95%",
    "quantiles": "order-statistic interval from binomial counts at 95%",
}


def default_experiment_params(experiment: Experiment) -> dict:
    if experiment is Experiment.SCALING_LAW:
        return {"k_grid": [1, 5, 10, 50, 100, 200, 500, 1000], "length_T": 2520}
    if experiment is Experiment.REDUNDANCY_LAW:
        return {
            "k": 500,
            "cluster_grid": [1, 5, 10, 25, 50, 100, 500],
            "rho": 1.0,
            "length_T": 2520,
            "keff_replications": 200,
        }
    if experiment is Experiment.REDUNDANCY_IMPERFECT:
        return {
            "k": 500,
            "rho_grid": [0.6, 0.8, 0.99],
            "cluster_grid": [1, 5, 10, 25, 50, 100, 500],
            "length_T": 2520,
            "keff_replications": 200,
        }
    if experiment is Experiment.CAPACITY_INFLATION:
        return {
            "k_grid": [25, 100, 200, 400],
            "clusters": 3,
            "rho": 0.95,
            "length_T": 2520,
            "keff_replications": 200,
        }
    if experiment is Experiment.THRESHOLD_AMPLIFICATION:
        return {
            "k": 1000,
            "rho": 0.9,
            "transforms": [
                {"kind": "None", "level": None},
                {"kind": "Fixed", "level": 1.0},
                {"kind": "Fixed", "level": 2.0},
                {"kind": "AdaptiveQuantile", "level": 0.5},
                {"kind": "AdaptiveQuantile", "level": 0.9},
                {"kind": "AdaptiveQuantile", "level": 0.95},
            ],
            "length_T": 2520,
            "keff_replications": 200,
        }
    if experiment is Experiment.FALSIFICATION_MATRIX:
        return {
            "workflows": [
                "RandomBaseline",
                "DataMiner",
                "Contrarian",
                "Lookahead",
                "RegimeDetector",
                "FactorMimic",
            ],
            "environments": ["WhiteNoise", "RegimeSwitch", "MA1Placebo", "FactorNull"],
            "data_miner_k": 100,
            "length_T": 2520,
        }
    if experiment is Experiment.DETECTION_FRONTIER:
        return {
            "phi_grid": [0.05, 0.10, 0.15, 0.20, 0.25],
            "theta_grid": [1.0, 1.5, 2.0, 2.5, 3.0],
            "length_T": 2520,
        }
    if experiment is Experiment.BREAK_EVEN_COST:
        return {
            "length_T": 2520,
            "split_ratio": 0.6,
            "sigma_ann": 0.15,
            "trend_sharpe": 2.0,
            "flip_probability": 1.0 / 190.0,
            "lookbacks": [10, 20, 30, 50],
        }
    if experiment is Experiment.KEFF_VALIDATION:
        return {
            "regimes": [
                {"regime": "Independent", "k": 100, "t": 250, "estimator": "shrinkage"},
                {"regime": "Independent", "k": 100, "t": 500, "estimator": "shrinkage"},
                {"regime": "Factor", "k": 100, "t": 250, "estimator": "shrinkage"},
                {"regime": "HighDim", "k": 500, "t": 250, "estimator": "shrinkage"},
                {"regime": "HighDim", "k": 500, "t": 500, "estimator": "shrinkage"},
                {"regime": "Independent", "k": 100, "t": 250, "estimator": "sample"},
                {"regime": "HighDim", "k": 500, "t": 250, "estimator": "sample"},
            ],
            "factor_count": 3,
            "factor_loading": 0.85,
        }
    if experiment is Experiment.SPLIT_SENSITIVITY:
        return {"split_grid": [0.5, 0.6, 0.7], "k": 100, "length_T": 2520}
    raise ValueError(f"unknown experiment: {experiment}")


# ---------------------------------------------------------------------------
# Replication workers. Each takes (payload, master_seed, rep) and returns a
# flat tuple, so tasks ship cheaply across process boundaries.
# ---------------------------------------------------------------------------


def _generic_outcome(payload: Mapping, master_seed: int, rep: int) -> tuple:
    scope = payload["scope"]
    env = EnvironmentSpec.from_dict(payload["env"])
    path_seed = _seed64(master_seed, scope, "path", rep)
    path = generate(dataclasses.replace(env, seed=path_seed))
    workflow = WorkflowSpec.from_dict(payload["workflow"])
    rng = stream(master_seed, scope, "cand", rep)
    # multiplicity columns aggregate over the first keff_cap replications:
    # each panel already pools >1500 observations, so the estimate is tight
    # long before the z means converge
    keff = payload.get("keff", False)
    cap = payload.get("keff_cap")
    if keff and cap is not None and rep >= cap:
        keff = False
    out = run_selection(workflow, path, rng=rng, compute_keff=keff)
    gated = (not out.degenerate) and out.z_wf_star >= workflow.tau
    return (
        out.z_is_star,
        out.z_wf_star,
        out.delta_z,
        out.bif_stab,
        1.0 if gated else 0.0,
        1.0 if out.degenerate else 0.0,
        out.k_eff_pred if out.k_eff_pred is not None else math.nan,
        out.k_eff_signal if out.k_eff_signal is not None else math.nan,
    )


def _breakeven_path(payload: Mapping, rng: np.random.Generator) -> np.ndarray:
    """Regime-switching trend path: a persistent +/- drift plus Gaussian noise.

    The drift direction flips with a small per-day probability, giving long
    trend regimes; drift magnitude is set so the trend alone carries the
    target annualized Sharpe at the target volatility.
    """
    t_len = int(payload["length_T"])
    sigma_d = payload["sigma_ann"] / math.sqrt(252.0)
    drift_d = payload["trend_sharpe"] * payload["sigma_ann"] / 252.0
    q = payload["flip_probability"]
    d0 = 1.0 if rng.random() < 0.5 else -1.0
    flips = rng.random(t_len - 1) < q
    parity = np.concatenate(([0], np.cumsum(flips))) % 2
    direction = np.where(parity == 0, d0, -d0)
    return direction * drift_d + sigma_d * rng.standard_normal(t_len)


def _rep_breakeven(payload: Mapping, master_seed: int, rep: int) -> tuple:
    rng = stream(master_seed, "BreakEvenCost", rep)
    r = _breakeven_path(payload, rng)
    t_len = r.shape[0]
    n_is = math.floor(payload["split_ratio"] * t_len)
    lookbacks = [int(w) for w in payload["lookbacks"]]
    cs = np.concatenate(([0.0], np.cumsum(r)))

    best_w = None
    best_abs_z = -1.0
    best_signals = None
    for w in lookbacks:
        signals = np.zeros(t_len)
        signals[w:] = np.sign(cs[w:-1] - cs[: -w - 1])
        # each candidate's own warmup rows are excluded from its selection stat
        z = z_statistic(signals[w:n_is] * r[w:n_is])
        if abs(z) > best_abs_z:
            best_abs_z = abs(z)
            best_w = w
            best_signals = signals

    z_wf = z_statistic(best_signals[n_is:] * r[n_is:])
    passed = z_wf >= _Z_CRIT
    be_bps = turnover = math.nan
    if passed:
        try:
            res = breakeven_cost(best_signals, r, wf_start=n_is)
            be_bps = res.c_star_bps
            turnover = res.turnover_one_way_ann
        except NoTradingError:
            passed = False
    return (1.0 if passed else 0.0, be_bps, turnover, float(best_w), z_wf)


def _rep_keff(payload: Mapping, master_seed: int, rep: int) -> tuple:
    regime = payload["regime"]
    k = int(payload["k"])
    t = int(payload["t"])
    rng = stream(master_seed, "KeffValidation", regime, k, t, rep)
    if regime == "Factor":
        m = int(payload["factor_count"])
        b = payload["factor_loading"]
        factors = rng.standard_normal((t, m))
        noise = rng.standard_normal((t, k))
        panel = b * factors[:, np.arange(k) % m] + math.sqrt(1.0 - b * b) * noise
    else:
        panel = rng.standard_normal((t, k))
    est = k_eff_from_panel(panel, shrink=payload["estimator"] == "shrinkage")
    lam = est.intensity if est.intensity is not None else math.nan
    return (est.value, lam)


_REP_FNS: dict[str, Callable[[Mapping, int, int], tuple]] = {
    "generic": _generic_outcome,
    "breakeven": _rep_breakeven,
    "keff": _rep_keff,
}


def _dispatch(task: tuple) -> tuple:
    fn_key, payload, master_seed, rep = task
    return _REP_FNS[fn_key](payload, master_seed, rep)


def _map_replications(
    fn_key: str, payload: Mapping, spec: ExperimentSpec
) -> np.ndarray:
    n = spec.n_replications
    tasks = [(fn_key, payload, spec.master_seed, rep) for rep in range(n)]
    if spec.workers == 1:
        results = [_dispatch(t) for t in tasks]
    else:
        chunk = max(1, n // (spec.workers * 4))
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_dispatch, tasks, chunksize=chunk))
    return np.asarray(results, dtype=np.float64)


def _selection_summary(res: np.ndarray, tau: float = 0.5) -> dict:
    z_is, z_wf, delta, bif, gated, degen = (res[:, i] for i in range(6))
    n = res.shape[0]
    row: dict = {}
    for name, values in (("z_is_star", z_is), ("z_wf_star", z_wf), ("delta_z", delta)):
        m, lo, hi = _mean_ci(values)
        row[f"mean_{name}"] = m
        row[f"mean_{name}_lo"] = lo
        row[f"mean_{name}_hi"] = hi
    gate_mask = gated > 0.0
    row["n_gated"] = int(gate_mask.sum())
    if gate_mask.any():
        med, lo, hi = _quantile_ci(bif[gate_mask], 0.5)
        row["median_bif_stab"] = med
        row["median_bif_stab_lo"] = lo
        row["median_bif_stab_hi"] = hi
    else:
        row["median_bif_stab"] = math.nan
        row["median_bif_stab_lo"] = math.nan
        row["median_bif_stab_hi"] = math.nan
    for name, values in (("is_fail", z_is), ("wf_fail", z_wf)):
        rate, lo, hi = _rate_ci(int((values > _Z_CRIT).sum()), n)
        row[f"{name}_pct"] = rate
        row[f"{name}_pct_lo"] = lo
        row[f"{name}_pct_hi"] = hi
    row["degenerate_count"] = int(degen.sum())
    return row


def _keff_means(res: np.ndarray) -> dict:
    row = {}
    for name, col in (("k_eff_pred", 6), ("k_eff_signal", 7)):
        values = res[:, col]
        values = values[~np.isnan(values)]
        if values.size:
            m, lo, hi = _mean_ci(values)
            row[f"mean_{name}"] = m
            row[f"mean_{name}_lo"] = lo
            row[f"mean_{name}_hi"] = hi
        else:
            row[f"mean_{name}"] = math.nan
            row[f"mean_{name}_lo"] = math.nan
            row[f"mean_{name}_hi"] = math.nan
    return row


# ---------------------------------------------------------------------------
# Experiment definitions: build cell payloads, aggregate cell results.
# ---------------------------------------------------------------------------


def _white_noise_env(length_t: int) -> dict:
    return default_spec(Family.WHITE_NOISE, length_T=length_t).to_dict()


def _cells_scaling(spec: ExperimentSpec) -> list[tuple[str, dict, dict]]:
    p = spec.resolved_params()
    cells = []
    for k in p["k_grid"]:
        payload = {
            "scope": f"ScalingLaw-K{k}",
            "env": _white_noise_env(p["length_T"]),
            "workflow": WorkflowSpec(WorkflowFamily.DATA_MINER, k=int(k)).to_dict(),
            "keff": False,
        }
        cells.append((f"K={k}", payload, {"k": int(k)}))
    return cells


def _agg_selection(key_fields: dict, res: np.ndarray) -> dict:
    row = dict(key_fields)
    row.update(_selection_summary(res))
    return row


def _cells_redundancy(spec: ExperimentSpec, rho_grid: list[float] | None = None):
    p = spec.resolved_params()
    rhos = rho_grid if rho_grid is not None else [p["rho"]]
    cells = []
    for rho in rhos:
        for m in p["cluster_grid"]:
            wf = WorkflowSpec(
                WorkflowFamily.CORRELATED_FAMILY_SEARCH,
                k=int(p["k"]),
                params={"clusters": int(m), "rho": float(rho)},
            )
            payload = {
                "scope": f"Redundancy-rho{rho}-m{m}",
                "env": _white_noise_env(p["length_T"]),
                "workflow": wf.to_dict(),
                "keff": "pred",
                "keff_cap": int(p["keff_replications"]),
            }
            cells.append(
                (f"rho={rho},m={m}", payload, {"rho": float(rho), "clusters": int(m), "k": int(p["k"])})
            )
    return cells


def _agg_redundancy(key_fields: dict, res: np.ndarray) -> dict:
    row = _agg_selection(key_fields, res)
    row.update(_keff_means(res))
    k_eff = row["mean_k_eff_pred"]
    obs = row["mean_z_is_star"]
    row["evt_2k_nominal"] = evt_expected_max(2 * int(key_fields["k"]))
    row["evt_2keff"] = evt_expected_max(max(2.0 * k_eff, 2.0))
    row["ratio_obs_evt"] = obs / row["evt_2keff"]
    row["evt_error_pct"] = 100.0 * (obs - row["evt_2keff"]) / row["evt_2keff"]
    row["k_eff_population"] = _population_keff(int(key_fields["k"]), int(key_fields["clusters"]), float(key_fields["rho"]))
    return row


def _population_keff(k: int, clusters: int, rho: float) -> float:
    base, extra = divmod(k, clusters)
    sizes = [base + 1] * extra + [base] * (clusters - extra)
    return k_eff_population(sizes, rho)


def _cells_capacity(spec: ExperimentSpec):
    p = spec.resolved_params()
    cells = []
    for k in p["k_grid"]:
        wf = WorkflowSpec(WorkflowFamily.FEATURE_MINING, k=int(k))
        payload = {
            "scope": f"Capacity-FeatureMining-K{k}",
            "env": _white_noise_env(p["length_T"]),
            "workflow": wf.to_dict(),
            "keff": "pred",
            "keff_cap": int(p["keff_replications"]),
        }
        cells.append((f"FeatureMining,K={k}", payload, {"workflow": "FeatureMining", "k": int(k)}))
    for k in p["k_grid"]:
        wf = WorkflowSpec(
            WorkflowFamily.CORRELATED_FAMILY_SEARCH,
            k=int(k),
            params={"clusters": int(p["clusters"]), "rho": float(p["rho"])},
        )
        payload = {
            "scope": f"Capacity-Correlated-K{k}",
            "env": _white_noise_env(p["length_T"]),
            "workflow": wf.to_dict(),
            "keff": "pred",
            "keff_cap": int(p["keff_replications"]),
        }
        cells.append(
            (f"CorrelatedFamilySearch,K={k}", payload, {"workflow": "CorrelatedFamilySearch", "k": int(k)})
        )
    wf = WorkflowSpec(WorkflowFamily.TREND_FOLLOWING)
    payload = {
        "scope": "Capacity-TrendFollowing",
        "env": _white_noise_env(p["length_T"]),
        "workflow": wf.to_dict(),
        "keff": "pred",
        "keff_cap": int(p["keff_replications"]),
    }
    cells.append(("TrendFollowing", payload, {"workflow": "TrendFollowing", "k": 16}))
    return cells


def _agg_capacity(key_fields: dict, res: np.ndarray) -> dict:
    row = _agg_selection(key_fields, res)
    row.update(_keff_means(res))
    return row


def _transform_from_dict(d: Mapping) -> ThresholdTransform:
    from .workflows import TransformKind

    return ThresholdTransform(TransformKind(d["kind"]), d.get("level"))


def _cells_amplification(spec: ExperimentSpec):
    p = spec.resolved_params()
    cells = []
    # One scope for every transform: replication seeds are shared, so each
    # transform sees the identical score panel and return path.
    scope = f"Amplification-K{p['k']}-rho{p['rho']}"
    for t in p["transforms"]:
        transform = _transform_from_dict(t)
        wf = WorkflowSpec(
            WorkflowFamily.CORRELATED_FAMILY_SEARCH,
            k=int(p["k"]),
            transform=transform,
            params={"clusters": 1, "rho": float(p["rho"])},
        )
        payload = {
            "scope": scope,
            "env": _white_noise_env(p["length_T"]),
            "workflow": wf.to_dict(),
            "keff": True,
            "keff_cap": int(p["keff_replications"]),
        }
        cells.append(
            (transform.describe(), payload, {"transform": transform.describe()})
        )
    return cells


def _agg_amplification(key_fields: dict, res: np.ndarray) -> dict:
    row = _agg_selection(key_fields, res)
    row.update(_keff_means(res))
    pred = row["mean_k_eff_pred"]
    sig = row["mean_k_eff_signal"]
    row["amplification"] = sig / pred if pred and not math.isnan(pred) else math.nan
    q05, _, _ = _quantile_ci(res[:, 0], 0.05)
    q95, _, _ = _quantile_ci(res[:, 0], 0.95)
    row["z_is_star_q05"] = q05
    row["z_is_star_q95"] = q95
    return row


_MATRIX_WORKFLOWS: dict[str, Callable[[int], WorkflowSpec]] = {
    "RandomBaseline": lambda k: WorkflowSpec(WorkflowFamily.RANDOM_BASELINE),
    "DataMiner": lambda k: WorkflowSpec(WorkflowFamily.DATA_MINER, k=k),
    "Contrarian": lambda k: WorkflowSpec(WorkflowFamily.CONTRARIAN),
    "Lookahead": lambda k: WorkflowSpec(WorkflowFamily.LOOKAHEAD, allow_lookahead=True),
    "RegimeDetector": lambda k: WorkflowSpec(WorkflowFamily.REGIME_DETECTOR),
    "FactorMimic": lambda k: WorkflowSpec(WorkflowFamily.FACTOR_MIMIC),
}


def _cells_matrix(spec: ExperimentSpec):
    p = spec.resolved_params()
    cells = []
    for wf_name in p["workflows"]:
        if wf_name not in _MATRIX_WORKFLOWS:
            raise ValueError(f"unknown workflow {wf_name!r}")
        wf = _MATRIX_WORKFLOWS[wf_name](int(p["data_miner_k"]))
        for env_name in p["environments"]:
            env = default_spec(Family(env_name), length_T=int(p["length_T"]))
            payload = {
                "scope": f"Matrix-{wf_name}-{env_name}",
                "env": env.to_dict(),
                "workflow": wf.to_dict(),
                "keff": False,
            }
            cells.append(
                (f"{wf_name}/{env_name}", payload, {"workflow": wf_name, "environment": env_name})
            )
    return cells


def _cells_frontier(spec: ExperimentSpec):
    p = spec.resolved_params()
    cells = []
    for phi in p["phi_grid"]:
        for theta in p["theta_grid"]:
            env = EnvironmentSpec(
                family=Family.TAR_POSITIVE,
                params=dataclasses.replace(
                    default_spec(Family.TAR_POSITIVE).params, phi=float(phi), theta_act=float(theta)
                ),
                length_T=int(p["length_T"]),
            )
            payload = {
                "scope": f"Frontier-phi{phi}-theta{theta}",
                "env": env.to_dict(),
                "workflow": WorkflowSpec(WorkflowFamily.TREND_FOLLOWING).to_dict(),
                "keff": False,
            }
            cells.append(
                (f"phi={phi},theta={theta}", payload, {"phi": float(phi), "theta": float(theta)})
            )
    return cells


def _agg_frontier(key_fields: dict, res: np.ndarray) -> dict:
    row = dict(key_fields)
    n = res.shape[0]
    rate, lo, hi = _rate_ci(int((res[:, 1] > _Z_CRIT).sum()), n)
    row["pass_rate_pct"] = rate
    row["pass_rate_pct_lo"] = lo
    row["pass_rate_pct_hi"] = hi
    m, mlo, mhi = _mean_ci(res[:, 1])
    row["mean_z_wf_star"] = m
    row["mean_z_wf_star_lo"] = mlo
    row["mean_z_wf_star_hi"] = mhi
    return row


def _agg_breakeven(key_fields: dict, res: np.ndarray) -> dict:
    row = dict(key_fields)
    n = res.shape[0]
    passed = res[:, 0] > 0.0
    rate, lo, hi = _rate_ci(int(passed.sum()), n)
    row["pass_rate_pct"] = rate
    row["pass_rate_pct_lo"] = lo
    row["pass_rate_pct_hi"] = hi
    row["n_passed"] = int(passed.sum())
    for name, col in (("breakeven_bps", 1), ("turnover_one_way", 2)):
        values = res[passed, col]
        if values.size == 0:
            for suffix in ("mean", "median", "q05", "q95"):
                row[f"{name}_{suffix}"] = math.nan
            continue
        m, mlo, mhi = _mean_ci(values)
        row[f"{name}_mean"] = m
        row[f"{name}_mean_lo"] = mlo
        row[f"{name}_mean_hi"] = mhi
        row[f"{name}_median"] = _quantile_ci(values, 0.5)[0]
        row[f"{name}_q05"] = _quantile_ci(values, 0.05)[0]
        row[f"{name}_q95"] = _quantile_ci(values, 0.95)[0]
    return row


def _cells_keff(spec: ExperimentSpec):
    p = spec.resolved_params()
    cells = []
    for item in p["regimes"]:
        payload = dict(item)
        payload["factor_count"] = p["factor_count"]
        payload["factor_loading"] = p["factor_loading"]
        key = {
            "regime": item["regime"],
            "estimator": item["estimator"],
            "k": int(item["k"]),
            "t": int(item["t"]),
        }
        cells.append((f"{item['regime']}/{item['estimator']}/K{item['k']}/T{item['t']}", payload, key))
    return cells


def _true_keff(regime: str, k: int, factor_count: int, loading: float) -> float:
    if regime == "Factor":
        return _population_keff(k, factor_count, loading * loading)
    return float(k)


def _agg_keff(key_fields: dict, res: np.ndarray, params: Mapping) -> dict:
    row = dict(key_fields)
    truth = _true_keff(
        key_fields["regime"], key_fields["k"], int(params["factor_count"]), params["factor_loading"]
    )
    est = res[:, 0]
    row["true_k_eff"] = truth
    row["bias"] = float(np.mean(est - truth))
    row["rmse"] = float(np.sqrt(np.mean((est - truth) ** 2)))
    lam = res[:, 1]
    lam = lam[~np.isnan(lam)]
    row["mean_lambda"] = float(lam.mean()) if lam.size else math.nan
    return row


def _cells_split(spec: ExperimentSpec):
    p = spec.resolved_params()
    cells = []
    for split in p["split_grid"]:
        wf = WorkflowSpec(WorkflowFamily.DATA_MINER, k=int(p["k"]), split_ratio=float(split))
        payload = {
            "scope": f"Split-{split}",
            "env": _white_noise_env(p["length_T"]),
            "workflow": wf.to_dict(),
            "keff": False,
        }
        cells.append((f"split={split}", payload, {"split_ratio": float(split)}))
    return cells


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> ResultTable:
    """Execute every cell of the experiment grid and aggregate the results."""
    start = time.time()
    if spec.experiment is Experiment.SCALING_LAW:
        cells = _cells_scaling(spec)
        fn_key, agg = "generic", _agg_selection
    elif spec.experiment is Experiment.REDUNDANCY_LAW:
        cells = _cells_redundancy(spec)
        fn_key, agg = "generic", _agg_redundancy
    elif spec.experiment is Experiment.REDUNDANCY_IMPERFECT:
        cells = _cells_redundancy(spec, rho_grid=spec.resolved_params()["rho_grid"])
        fn_key, agg = "generic", _agg_redundancy
    elif spec.experiment is Experiment.CAPACITY_INFLATION:
        cells = _cells_capacity(spec)
        fn_key, agg = "generic", _agg_capacity
    elif spec.experiment is Experiment.THRESHOLD_AMPLIFICATION:
        cells = _cells_amplification(spec)
        fn_key, agg = "generic", _agg_amplification
    elif spec.experiment is Experiment.FALSIFICATION_MATRIX:
        cells = _cells_matrix(spec)
        fn_key, agg = "generic", _agg_selection
    elif spec.experiment is Experiment.DETECTION_FRONTIER:
        cells = _cells_frontier(spec)
        fn_key, agg = "generic", _agg_frontier
    elif spec.experiment is Experiment.BREAK_EVEN_COST:
        cells = [("BreakEven", dict(spec.resolved_params()), {"dgp": "regime-switch-trend"})]
        fn_key, agg = "breakeven", _agg_breakeven
    elif spec.experiment is Experiment.KEFF_VALIDATION:
        cells = _cells_keff(spec)
        fn_key = "keff"
        params = spec.resolved_params()
        agg = lambda key, res: _agg_keff(key, res, params)  # noqa: E731
    elif spec.experiment is Experiment.SPLIT_SENSITIVITY:
        cells = _cells_split(spec)
        fn_key, agg = "generic", _agg_selection
    else:
        raise ValueError(f"unknown experiment: {spec.experiment}")

    rows = []
    failed = []
    for cell_name, payload, key_fields in cells:
        try:
            res = _map_replications(fn_key, payload, spec)
            row = agg(key_fields, res)
            row["cell"] = cell_name
            row["status"] = "ok"
        except Exception as exc:  # cell isolation: record and continue
            row = dict(key_fields)
            row["cell"] = cell_name
            row["status"] = "failed"
            row["error"] = f"{type(exc).__name__}: {exc}"
            failed.append(cell_name)
        rows.append(row)

    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    table = ResultTable(
        name=spec.experiment.value,
        columns=columns,
        rows=rows,
        ci_notes=dict(_CI_NOTES),
        metadata={
            "experiment": spec.experiment.value,
            "n_replications": spec.n_replications,
            "master_seed": spec.master_seed,
            "workers": spec.workers,
            "params": spec.resolved_params(),
            "runtime_seconds": round(time.time() - start, 3),
            "failed_cells": failed,
        },
    )
    if out_dir is not None:
        table.save(out_dir)
    return table


def stabilization_table(
    z_is_star: float = 3.0,
    tau: float = 0.5,
    z_wf_grid: tuple[float, ...] = (3.0, 2.0, 1.0, 0.5, 0.25, 0.0),
) -> ResultTable:
    """Closed-form stress table for the inflation metrics.

    The raw inflation factor is displayed as NA below the stabilization
    floor (and is undefined at zero); the stabilized factor and the gap are
    well-behaved everywhere.
    """
    rows = []
    for z_wf in z_wf_grid:
        d = inflation_diagnostics(z_is_star, z_wf, tau=tau)
        display_raw = "NA" if (d.bif_raw is None or z_wf < tau) else f"{d.bif_raw:.2f}"
        rows.append(
            {
                "z_wf_star": z_wf,
                "bif_raw": display_raw,
                "bif_stab": d.bif_stab,
                "deflator": d.deflator,
                "delta_z": d.delta_z,
                "status": "ok",
            }
        )
    return ResultTable(
        name="StabilizationStressTest",
        columns=["z_wf_star", "bif_raw", "bif_stab", "deflator", "delta_z", "status"],
        rows=rows,
        ci_notes={},
        metadata={"z_is_star": z_is_star, "tau": tau},
    )
