"""Two-stage falsification audit calibrated by Monte Carlo null runs.

Stage 1 is an environment gate: the candidate workflow is run, unchanged,
hundreds of times on each null environment to build the null distribution
of its walk-forward winner statistic; the observed statistic is compared
against the per-environment empirical quantile at level 1 - alpha/E
(Bonferroni across the E environments). Exceeding any threshold falsifies
the pipeline outright.

Stage 2, reached only by survivors, asks whether the in-sample-to-
walk-forward gap delta_z is larger than selection alone explains, using
empirical quantiles of the null gap distribution from the same calibration.

A calibration archive is bound to the exact workflow it was built from via
a content hash; auditing a different workflow against it is a hard error,
not a warning.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .environments import (
    EnvironmentSpec,
    ParameterDistribution,
    ReturnPath,
    Role,
    draw_parameter_sets,
    generate,
)
from .inference import empirical_quantile
from .inflation import DEFAULT_TAU, InflationDiagnostics, inflation_diagnostics
from .rng import child_sequence, stream
from .workflows import SelectionOutcome, WorkflowSpec, run_selection

__all__ = [
    "AuditError",
    "BlindProtocolError",
    "CalibrationMismatchError",
    "EnvironmentCalibration",
    "NullCalibration",
    "Stage1Record",
    "Stage1Verdict",
    "Stage2Assessment",
    "AuditReport",
    "InflationDiagnostics",
    "inflation_diagnostics",
    "calibrate_stage1",
    "stage1_gate",
    "stage2_classify",
    "worst_case_delta_quantile",
    "audit_outcomes",
    "EXIT_PASS",
    "EXIT_FALSIFIED",
    "EXIT_INFLATION_FLAGGED",
]

_MIN_CALIBRATION_REPS = 500
_ARCHIVE_VERSION = 1

EXIT_PASS = 0
EXIT_FALSIFIED = 2
EXIT_INFLATION_FLAGGED = 3


class AuditError(RuntimeError):
    pass


class BlindProtocolError(AuditError):
    """Development-role parameter draws were offered to the audit stage."""


class CalibrationMismatchError(AuditError):
    """The calibration archive was built from a different workflow."""


@dataclass(frozen=True)
class EnvironmentCalibration:
    label: str
    spec: EnvironmentSpec
    zeta: float
    quantile_level: float
    z_wf_samples: np.ndarray
    z_is_samples: np.ndarray
    delta_samples: np.ndarray
    degenerate_count: int


@dataclass(frozen=True)
class NullCalibration:
    workflow_hash: str
    workflow: dict
    alpha: float
    m_replications: int
    master_seed: int
    environments: dict[str, EnvironmentCalibration]

    def pooled_delta_sample(self) -> np.ndarray:
        return np.concatenate(
            [self.environments[k].delta_samples for k in sorted(self.environments)]
        )

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "version": _ARCHIVE_VERSION,
            "workflow_hash": self.workflow_hash,
            "workflow": self.workflow,
            "alpha": self.alpha,
            "m_replications": self.m_replications,
            "master_seed": self.master_seed,
            "environments": [],
        }
        for label in sorted(self.environments):
            env = self.environments[label]
            csv_name = f"null_{label}.csv"
            with open(directory / csv_name, "w") as fh:
                fh.write("replication,z_is_star,z_wf_star,delta_z\n")
                for i in range(env.z_wf_samples.shape[0]):
                    fh.write(
                        f"{i},{float(env.z_is_samples[i])!r},"
                        f"{float(env.z_wf_samples[i])!r},"
                        f"{float(env.delta_samples[i])!r}\n"
                    )
            manifest["environments"].append(
                {
                    "label": label,
                    "spec": env.spec.to_dict(),
                    "zeta": env.zeta,
                    "quantile_level": env.quantile_level,
                    "degenerate_count": env.degenerate_count,
                    "samples_csv": csv_name,
                }
            )
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)

    @classmethod
    def load(cls, directory: str | Path) -> "NullCalibration":
        directory = Path(directory)
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
        if manifest.get("version") != _ARCHIVE_VERSION:
            raise AuditError(f"unsupported calibration archive version: {manifest.get('version')}")
        environments = {}
        for rec in manifest["environments"]:
            data = np.genfromtxt(
                directory / rec["samples_csv"], delimiter=",", names=True
            )
            environments[rec["label"]] = EnvironmentCalibration(
                label=rec["label"],
                spec=EnvironmentSpec.from_dict(rec["spec"]),
                zeta=float(rec["zeta"]),
                quantile_level=float(rec["quantile_level"]),
                z_wf_samples=np.atleast_1d(data["z_wf_star"]),
                z_is_samples=np.atleast_1d(data["z_is_star"]),
                delta_samples=np.atleast_1d(data["delta_z"]),
                degenerate_count=int(rec["degenerate_count"]),
            )
        return cls(
            workflow_hash=manifest["workflow_hash"],
            workflow=manifest["workflow"],
            alpha=float(manifest["alpha"]),
            m_replications=int(manifest["m_replications"]),
            master_seed=int(manifest["master_seed"]),
            environments=environments,
        )


def _expand_environments(
    envs: Sequence[EnvironmentSpec | ParameterDistribution],
) -> list[EnvironmentSpec]:
    expanded: list[EnvironmentSpec] = []
    for item in envs:
        if isinstance(item, ParameterDistribution):
            expanded.extend(draw_parameter_sets(item))
        else:
            expanded.append(item)
    labels = [spec.name for spec in expanded]
    if len(set(labels)) != len(labels):
        raise AuditError(f"environment labels must be unique, got {labels}")
    return expanded


def _null_replication(
    workflow: WorkflowSpec, spec: EnvironmentSpec, master_seed: int, label: str, rep: int
) -> SelectionOutcome:
    path_seed = int(
        child_sequence(master_seed, "calib-path", label, rep).generate_state(1, np.uint64)[0]
    )
    path = generate(dataclasses.replace(spec, seed=path_seed))
    rng = stream(master_seed, "calib-wf", label, rep)
    return run_selection(workflow, path, rng=rng, compute_keff=False)


def _null_task(args: tuple) -> tuple:
    wf_dict, spec_dict, master_seed, label, rep = args
    out = _null_replication(
        WorkflowSpec.from_dict(wf_dict),
        EnvironmentSpec.from_dict(spec_dict),
        master_seed,
        label,
        rep,
    )
    return (out.z_is_star, out.z_wf_star, out.delta_z, 1.0 if out.degenerate else 0.0)


def calibrate_stage1(
    workflow: WorkflowSpec,
    envs: Sequence[EnvironmentSpec | ParameterDistribution],
    m_replications: int = 1000,
    alpha: float = 0.05,
    master_seed: int = 0,
    workers: int = 1,
) -> NullCalibration:
    """Build the per-environment null distributions for a fixed workflow.

    Each environment is re-simulated ``m_replications`` times with fresh
    path seeds while the workflow spec stays frozen; the full samples of
    (z_is_star, z_wf_star, delta_z) are retained so downstream quantiles
    never require re-simulation. Replication seeds depend only on
    (master_seed, label, rep), so the worker count cannot change the result.
    """
    if m_replications < _MIN_CALIBRATION_REPS:
        raise AuditError(
            f"calibration needs at least {_MIN_CALIBRATION_REPS} replications "
            f"per environment, got {m_replications}"
        )
    if not 0.0 < alpha < 1.0:
        raise AuditError(f"alpha must lie in (0,1), got {alpha}")
    if workers < 1:
        raise AuditError(f"workers must be >= 1, got {workers}")
    specs = _expand_environments(envs)
    if not specs:
        raise AuditError("no environments supplied")
    dev = [s.name for s in specs if s.role is Role.DEV]
    if dev:
        raise BlindProtocolError(
            f"environments {dev} carry the Dev role; audit calibration requires "
            "Audit-role or fixed reference parameters"
        )
    level = 1.0 - alpha / len(specs)
    environments = {}
    for spec in specs:
        label = spec.name
        z_is = np.empty(m_replications)
        z_wf = np.empty(m_replications)
        delta = np.empty(m_replications)
        degenerate = 0
        if workers == 1:
            rows = (
                _null_task((workflow.to_dict(), spec.to_dict(), master_seed, label, rep))
                for rep in range(m_replications)
            )
        else:
            tasks = [
                (workflow.to_dict(), spec.to_dict(), master_seed, label, rep)
                for rep in range(m_replications)
            ]
            chunk = max(1, m_replications // (workers * 4))
            pool = ProcessPoolExecutor(max_workers=workers)
            try:
                rows = list(pool.map(_null_task, tasks, chunksize=chunk))
            finally:
                pool.shutdown()
        for rep, row in enumerate(rows):
            z_is[rep] = row[0]
            z_wf[rep] = row[1]
            delta[rep] = row[2]
            degenerate += int(row[3])
        environments[label] = EnvironmentCalibration(
            label=label,
            spec=spec,
            zeta=empirical_quantile(z_wf, level),
            quantile_level=level,
            z_wf_samples=z_wf,
            z_is_samples=z_is,
            delta_samples=delta,
            degenerate_count=degenerate,
        )
    return NullCalibration(
        workflow_hash=workflow.content_hash(),
        workflow=workflow.to_dict(),
        alpha=alpha,
        m_replications=m_replications,
        master_seed=master_seed,
        environments=environments,
    )


@dataclass(frozen=True)
class Stage1Record:
    label: str
    observed: float
    zeta: float
    quantile_level: float
    margin: float
    falsified: bool


@dataclass(frozen=True)
class Stage1Verdict:
    falsified: bool
    records: tuple[Stage1Record, ...]


def _check_hash(workflow: WorkflowSpec | None, calibration: NullCalibration) -> None:
    if workflow is not None and workflow.content_hash() != calibration.workflow_hash:
        raise CalibrationMismatchError(
            "workflow spec differs from the one this calibration was built for; "
            "recalibrate instead of reusing the archive"
        )


def stage1_gate(
    observed: Mapping[str, float],
    calibration: NullCalibration,
    workflow: WorkflowSpec | None = None,
) -> Stage1Verdict:
    """Compare observed per-environment walk-forward statistics to the gate.

    Every observed environment must be covered by the calibration; a missing
    one is an error, never a silent pass. Falsification in any single
    environment falsifies the pipeline.
    """
    _check_hash(workflow, calibration)
    if not observed:
        raise AuditError("no observed statistics supplied")
    missing = sorted(set(observed) - set(calibration.environments))
    if missing:
        raise AuditError(f"environments missing from calibration: {missing}")
    records = []
    for label in sorted(observed):
        env = calibration.environments[label]
        value = float(observed[label])
        records.append(
            Stage1Record(
                label=label,
                observed=value,
                zeta=env.zeta,
                quantile_level=env.quantile_level,
                margin=value - env.zeta,
                falsified=value > env.zeta,
            )
        )
    return Stage1Verdict(
        falsified=any(r.falsified for r in records), records=tuple(records)
    )


@dataclass(frozen=True)
class Stage2Assessment:
    delta_z: float
    epsilon_warn: float
    epsilon_flag: float
    warn_level: float
    flag_level: float
    flagged: bool
    warned: bool
    n_null: int


def stage2_classify(
    diag: InflationDiagnostics,
    null_delta_sample: np.ndarray,
    flag_level: float = 0.99,
    warn_level: float = 0.95,
) -> Stage2Assessment:
    """Flag inflation that the matched null cannot explain.

    The hard flag fires iff delta_z exceeds the empirical ``flag_level``
    quantile of the null gap sample; the ``warn_level`` quantile is reported
    as a softer band.
    """
    sample = np.asarray(null_delta_sample, dtype=np.float64)
    if sample.size == 0:
        raise AuditError("null delta sample is empty")
    if not np.all(np.isfinite(sample)):
        raise AuditError("null delta sample contains non-finite values")
    if not 0.0 < warn_level < flag_level < 1.0:
        raise AuditError("need 0 < warn_level < flag_level < 1")
    eps_warn = empirical_quantile(sample, warn_level)
    eps_flag = empirical_quantile(sample, flag_level)
    return Stage2Assessment(
        delta_z=diag.delta_z,
        epsilon_warn=eps_warn,
        epsilon_flag=eps_flag,
        warn_level=warn_level,
        flag_level=flag_level,
        flagged=diag.delta_z > eps_flag,
        warned=diag.delta_z > eps_warn,
        n_null=int(sample.size),
    )


def worst_case_delta_quantile(
    k_nominal: int, q: float, draws: int = 200_000, seed: int = 0
) -> float:
    """Conservative null-gap quantile for an independent search of size K.

    Used when no workflow-matched calibration exists: independent candidates
    maximize effective multiplicity at a given nominal K, so the implied gap
    quantile is an upper envelope. Sampling is exact: the in-sample winner is
    ``max of K |N(0,1)|`` drawn by inverse CDF, the walk-forward statistic an
    independent |N(0,1)|.
    """
    if k_nominal < 1:
        raise ValueError(f"k_nominal must be >= 1, got {k_nominal}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0,1), got {q}")
    rng = stream(seed, "worst-case-delta", k_nominal)
    u = rng.random(draws)
    z_is = norm.ppf((1.0 + u ** (1.0 / k_nominal)) / 2.0)
    z_wf = np.abs(rng.standard_normal(draws))
    return empirical_quantile(z_is - z_wf, q)


@dataclass(frozen=True)
class AuditReport:
    workflow_hash: str
    workflow: dict
    alpha: float
    tau: float
    stage1: Stage1Verdict
    stage2: Stage2Assessment | None
    diagnostics: InflationDiagnostics | None
    outcomes: dict[str, dict]
    exit_code: int
    calibration_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "version": _ARCHIVE_VERSION,
            "workflow_hash": self.workflow_hash,
            "calibration_hash": self.calibration_hash,
            "workflow": self.workflow,
            "alpha": self.alpha,
            "tau": self.tau,
            "stage1": {
                "falsified": self.stage1.falsified,
                "environments": [dataclasses.asdict(r) for r in self.stage1.records],
            },
            "stage2": None if self.stage2 is None else dataclasses.asdict(self.stage2),
            "inflation": None
            if self.diagnostics is None
            else dataclasses.asdict(self.diagnostics),
            "outcomes": self.outcomes,
            "exit_code": self.exit_code,
        }

    def to_json(self, fh) -> None:
        json.dump(self.to_dict(), fh, indent=2)

    def to_text(self) -> str:
        lines = ["Falsification audit", "=" * 19, ""]
        lines.append(f"workflow hash: {self.workflow_hash[:16]}...")
        if self.calibration_hash and self.calibration_hash != self.workflow_hash:
            lines.append(
                f"gated against reference calibration {self.calibration_hash[:16]}..."
            )
        # The level comes from the calibration records, not from E observed
        # here: gating a subset of calibrated environments keeps the original
        # Bonferroni thresholds.
        level = self.stage1.records[0].quantile_level if self.stage1.records else 1 - self.alpha
        lines.append(f"stage 1 (gate at per-environment level {level:.4g}):")
        for r in self.stage1.records:
            status = "FALSIFIED" if r.falsified else "pass"
            lines.append(
                f"  {r.label:<16} observed {r.observed:7.3f}  threshold {r.zeta:7.3f}  {status}"
            )
        lines.append(f"stage 1 verdict: {'FALSIFIED' if self.stage1.falsified else 'passed'}")
        if self.stage2 is not None:
            s = self.stage2
            lines.append("")
            lines.append(
                f"stage 2: delta_z {s.delta_z:.3f} vs "
                f"eps[{s.warn_level:.2f}] {s.epsilon_warn:.3f}, "
                f"eps[{s.flag_level:.2f}] {s.epsilon_flag:.3f}"
            )
            if self.diagnostics is not None:
                d = self.diagnostics
                raw = "absent" if d.bif_raw is None else f"{d.bif_raw:.3f}"
                lines.append(
                    f"         bif_raw {raw}  bif_stab {d.bif_stab:.3f}  "
                    f"deflator {d.deflator:.3f} (tau {d.tau:g})"
                )
            verdict = (
                "null-implausible inflation"
                if s.flagged
                else ("elevated inflation (warning band)" if s.warned else "consistent with selection under the null")
            )
            lines.append(f"stage 2 verdict: {verdict}")
        lines.append("")
        lines.append(f"exit code: {self.exit_code}")
        return "\n".join(lines)


def audit_outcomes(
    workflow: WorkflowSpec,
    outcomes: Mapping[str, SelectionOutcome],
    calibration: NullCalibration,
    tau: float = DEFAULT_TAU,
    target: SelectionOutcome | None = None,
    target_label: str = "target",
    enforce_hash: bool = True,
) -> AuditReport:
    """Assemble the two-stage verdict for observed selection outcomes.

    ``outcomes`` maps environment labels (which must be covered by the
    calibration) to the observed selection results. Stage 2 runs only when
    Stage 1 passes, against the pooled null gap sample of the calibration:
    on ``target`` when one is supplied (an audited return series that is not
    part of the null battery), otherwise on the worst observed gap.

    ``enforce_hash=False`` gates the workflow against a calibration built
    from a different, declared reference pipeline. That is the leak-detection
    use: a pipeline whose null walk-forward distribution is itself inflated
    would otherwise launder its own leak into the thresholds.
    """
    if enforce_hash:
        _check_hash(workflow, calibration)
    if not outcomes:
        raise AuditError("no outcomes supplied")
    observed = {label: out.z_wf_star for label, out in outcomes.items()}
    verdict = stage1_gate(observed, calibration)
    stage2 = None
    diag = None
    exit_code = EXIT_PASS
    if verdict.falsified:
        exit_code = EXIT_FALSIFIED
    else:
        if target is not None:
            subject = target
        else:
            worst_label = max(
                sorted(outcomes), key=lambda label: outcomes[label].delta_z
            )
            subject = outcomes[worst_label]
        diag = inflation_diagnostics(subject.z_is_star, subject.z_wf_star, tau=tau)
        stage2 = stage2_classify(diag, calibration.pooled_delta_sample())
        if stage2.flagged:
            exit_code = EXIT_INFLATION_FLAGGED
    reported = dict(outcomes)
    if target is not None:
        reported[target_label] = target
    summary = {
        label: {
            "z_is_star": out.z_is_star,
            "z_wf_star": out.z_wf_star,
            "delta_z": out.delta_z,
            "winner_index": out.winner_index,
            "degenerate": out.degenerate,
            "k_eff_pred": out.k_eff_pred,
            "k_eff_signal": out.k_eff_signal,
        }
        for label, out in reported.items()
    }
    return AuditReport(
        workflow_hash=workflow.content_hash(),
        workflow=workflow.to_dict(),
        alpha=calibration.alpha,
        tau=tau,
        stage1=verdict,
        stage2=stage2,
        diagnostics=diag,
        outcomes=summary,
        exit_code=exit_code,
        calibration_hash=calibration.workflow_hash,
    )
