"""Command-line entry points.

One JSON config file per run, with sections ``environments``, ``workflow``,
``audit``, and ``experiment``; command-line flags override config values.
Every run writes a resolved config next to its outputs so the exact inputs
(including defaults) are recorded.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Mapping

import click

from . import __version__
from .audit import (
    AuditError,
    BlindProtocolError,
    CalibrationMismatchError,
    NullCalibration,
    audit_outcomes,
    calibrate_stage1,
)
from .environments import (
    EnvironmentSpec,
    Family,
    ParameterDistribution,
    Role,
    canonical_null_specs,
    generate,
)
from .experiments import (
    Experiment,
    ExperimentSpec,
    ResultTable,
    run_experiment,
    stabilization_table,
)
from .ingest import IngestError, ingest_returns
from .rng import child_sequence, stream
from .workflows import ProtocolViolationError, WorkflowSpec, run_selection

_OUT_ENV = "NULLAUDIT_OUT"


def _default_out() -> str:
    return os.environ.get(_OUT_ENV, "nullaudit-out")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise click.ClickException(f"{path}: config must be a JSON object")
    known = {"environments", "workflow", "audit", "experiment"}
    unknown = set(config) - known
    if unknown:
        raise click.ClickException(
            f"{path}: unknown config sections {sorted(unknown)}; expected {sorted(known)}"
        )
    return config


def _parse_environment(d: Mapping) -> EnvironmentSpec | ParameterDistribution:
    d = dict(d)
    try:
        if "ranges" in d:
            return ParameterDistribution(
                family=Family(d["family"]),
                ranges={k: (float(lo), float(hi)) for k, (lo, hi) in d["ranges"].items()},
                draw_count=int(d.get("draw_count", 1)),
                seed=int(d.get("seed", 0)),
                role=Role(d["role"]),
                length_T=int(d.get("length_T", 2520)),
            )
        d.setdefault("params", {})
        d.setdefault("length_T", 2520)
        d.setdefault("seed", 0)
        return EnvironmentSpec.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise click.ClickException(f"bad environment entry: {exc}") from exc


def _environment_entry_dict(env: EnvironmentSpec | ParameterDistribution) -> dict:
    if isinstance(env, ParameterDistribution):
        return {
            "family": env.family.value,
            "ranges": {k: list(v) for k, v in env.ranges.items()},
            "draw_count": env.draw_count,
            "seed": env.seed,
            "role": env.role.value,
            "length_T": env.length_T,
        }
    return env.to_dict()


def _resolve_environments(config: Mapping) -> list[EnvironmentSpec | ParameterDistribution]:
    entries = config.get("environments")
    if not entries:
        return list(canonical_null_specs())
    return [_parse_environment(e) for e in entries]


def _workflow_from_config(config: Mapping) -> WorkflowSpec:
    section = config.get("workflow")
    if not section:
        raise click.ClickException("config needs a 'workflow' section")
    try:
        return WorkflowSpec.from_dict(section)
    except (KeyError, ValueError) as exc:
        raise click.ClickException(f"bad workflow section: {exc}") from exc


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


@click.group()
@click.version_option(version=__version__, prog_name="nullaudit")
def main() -> None:
    """Audit adaptive backtesting workflows for spurious predictability."""


@main.command()
@click.argument("experiment", type=click.Choice([e.value for e in Experiment]))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Master seed (overrides config).")
@click.option("--replications", type=int, default=None, help="Replications per grid cell.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--workers", type=int, default=None, help="Worker processes.")
def simulate(experiment, config_path, seed, replications, out, workers) -> None:
    """Run one Monte Carlo experiment grid and write its result table."""
    config = _load_config(config_path)
    section = dict(config.get("experiment", {}))
    params = dict(section.get("params", {}))
    try:
        spec = ExperimentSpec(
            experiment=Experiment(experiment),
            n_replications=int(replications if replications is not None else section.get("replications", 1000)),
            master_seed=int(seed if seed is not None else section.get("seed", 0)),
            params=params,
            workers=int(workers if workers is not None else section.get("workers", 1)),
        )
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    out_dir = Path(out or _default_out()) / experiment
    table = run_experiment(spec, out_dir=out_dir)
    _write_json(
        out_dir / "resolved_config.json",
        {
            "experiment": {
                "name": experiment,
                "replications": spec.n_replications,
                "seed": spec.master_seed,
                "workers": spec.workers,
                "params": spec.resolved_params(),
            }
        },
    )
    _write_json(
        out_dir / "manifest.json",
        {"version": __version__, "command": "simulate", **table.metadata},
    )
    click.echo(table.render_text())
    click.echo(f"wrote {out_dir}/table.csv")
    if table.failed_cells:
        click.echo(f"{len(table.failed_cells)} grid cell(s) failed", err=True)
        sys.exit(1)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--replications", type=int, default=None, help="Null replications per environment.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--workers", type=int, default=None)
def calibrate(config_path, seed, replications, out, workers) -> None:
    """Build the null calibration archive for a frozen workflow."""
    config = _load_config(config_path)
    workflow = _workflow_from_config(config)
    envs = _resolve_environments(config)
    audit_section = dict(config.get("audit", {}))
    alpha = float(audit_section.get("alpha", 0.05))
    m = int(replications if replications is not None else audit_section.get("replications", 1000))
    master = int(seed if seed is not None else audit_section.get("seed", 0))
    n_workers = int(workers if workers is not None else audit_section.get("workers", 1))
    try:
        calibration = calibrate_stage1(
            workflow, envs, m_replications=m, alpha=alpha, master_seed=master, workers=n_workers
        )
    except (AuditError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    out_dir = Path(out or _default_out()) / "calibration"
    calibration.save(out_dir)
    _write_json(
        out_dir / "resolved_config.json",
        {
            "workflow": workflow.to_dict(),
            "environments": [_environment_entry_dict(e) for e in envs],
            "audit": {"alpha": alpha, "replications": m, "seed": master, "workers": n_workers},
        },
    )
    for label in sorted(calibration.environments):
        env = calibration.environments[label]
        click.echo(
            f"{label:<20} zeta[{env.quantile_level:.4g}] = {env.zeta:.4f} "
            f"({env.degenerate_count} degenerate)"
        )
    click.echo(f"wrote {out_dir}/manifest.json")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--calibration", "calibration_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--data", "data_csv", type=click.Path(exists=True, dir_okay=False), default=None, help="Audited return series (CSV date,return).")
@click.option("--seed", type=int, default=None, help="Audit-run seed for the null battery.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--strict/--lenient", "strict", default=True, help="CSV validation strictness.")
@click.option(
    "--reference-calibration",
    "reference",
    is_flag=True,
    help="Gate against a calibration built from a different declared pipeline.",
)
def audit(config_path, calibration_dir, data_csv, seed, out, strict, reference) -> None:
    """Run the two-stage falsification audit; exit 0 pass, 2 falsified, 3 flagged."""
    config = _load_config(config_path)
    workflow = _workflow_from_config(config)
    audit_section = dict(config.get("audit", {}))
    cal_dir = calibration_dir or audit_section.get("calibration")
    if cal_dir is None:
        raise click.ClickException("no calibration directory (--calibration or audit.calibration)")
    try:
        calibration = NullCalibration.load(cal_dir)
    except (OSError, KeyError, AuditError, ValueError) as exc:
        raise click.ClickException(f"cannot load calibration from {cal_dir}: {exc}") from exc
    audit_seed = int(seed if seed is not None else audit_section.get("seed", 1))
    reference = reference or bool(audit_section.get("reference_calibration", False))

    try:
        outcomes = {}
        for label in sorted(calibration.environments):
            spec = calibration.environments[label].spec
            path_seed = int(
                child_sequence(audit_seed, "audit-path", label).generate_state(1)[0]
            )
            path = generate(dataclasses.replace(spec, seed=path_seed))
            rng = stream(audit_seed, "audit-wf", label)
            outcomes[label] = run_selection(workflow, path, rng=rng, compute_keff=False)

        target = None
        target_label = "target"
        target_source = data_csv or audit_section.get("data")
        if target_source is not None:
            target_path = ingest_returns(target_source, strict=strict)
            for msg in target_path.meta["warnings"]:
                click.echo(f"warning: {msg}", err=True)
            target = run_selection(
                workflow, target_path, rng=stream(audit_seed, "audit-target")
            )
            target_label = target_path.label
        elif audit_section.get("environment") is not None:
            env = _parse_environment(audit_section["environment"])
            if isinstance(env, ParameterDistribution):
                raise click.ClickException(
                    "audit target must be a single environment, not a parameter distribution"
                )
            if env.role is Role.DEV:
                raise BlindProtocolError(
                    "audit target carries the Dev role; gating on development "
                    "draws breaks the blind protocol"
                )
            path_seed = int(
                child_sequence(audit_seed, "audit-target-path").generate_state(1)[0]
            )
            path = generate(dataclasses.replace(env, seed=path_seed))
            target = run_selection(
                workflow, path, rng=stream(audit_seed, "audit-target")
            )
            target_label = env.name

        report = audit_outcomes(
            workflow,
            outcomes,
            calibration,
            tau=workflow.tau,
            target=target,
            target_label=target_label,
            enforce_hash=not reference,
        )
    except CalibrationMismatchError as exc:
        raise click.ClickException(
            f"{exc} (pass --reference-calibration to gate against a declared "
            "reference pipeline deliberately)"
        ) from exc
    except (AuditError, IngestError, ProtocolViolationError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc

    out_dir = Path(out or _default_out()) / "audit"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        report.to_json(fh)
    (out_dir / "report.txt").write_text(report.to_text() + "\n")
    _write_json(
        out_dir / "resolved_config.json",
        {
            "workflow": workflow.to_dict(),
            "audit": {
                "calibration": str(cal_dir),
                "seed": audit_seed,
                "data": target_source if target_source else None,
                "environment": audit_section.get("environment"),
                "strict": strict,
                "reference_calibration": reference,
            },
        },
    )
    click.echo(report.to_text())
    sys.exit(report.exit_code)


@main.command()
@click.argument("artifact_dir", type=click.Path(exists=True, file_okay=False), required=False)
@click.option("--stabilization", is_flag=True, help="Print the closed-form inflation stress table.")
def report(artifact_dir, stabilization) -> None:
    """Render saved result tables and audit reports as text."""
    if stabilization:
        click.echo(stabilization_table().render_text())
        if artifact_dir is None:
            return
    if artifact_dir is None:
        raise click.ClickException("give an artifact directory or --stabilization")
    root = Path(artifact_dir)
    found = False
    for table_file in sorted(root.rglob("table.json")):
        with open(table_file) as fh:
            data = json.load(fh)
        table = ResultTable(
            name=data["name"],
            columns=data["columns"],
            rows=data["rows"],
            ci_notes=data.get("ci_notes", {}),
            metadata=data.get("metadata", {}),
        )
        click.echo(f"# {table_file}")
        click.echo(table.render_text())
        click.echo("")
        found = True
    for report_file in sorted(root.rglob("report.txt")):
        click.echo(f"# {report_file}")
        click.echo(report_file.read_text())
        found = True
    if not found:
        raise click.ClickException(f"no table.json or report.txt under {root}")


if __name__ == "__main__":
    main()
