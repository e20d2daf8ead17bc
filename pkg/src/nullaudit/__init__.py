"""Falsification auditing for adaptive backtesting workflows.

The library simulates strategy-selection pipelines on induced-null market
environments, measures the inflation that in-sample selection produces, and
gates observed walk-forward performance against Monte Carlo null
calibrations.
"""

__version__ = "0.1.0"

from .audit import (
    AuditError,
    AuditReport,
    BlindProtocolError,
    CalibrationMismatchError,
    NullCalibration,
    audit_outcomes,
    calibrate_stage1,
    stage1_gate,
    stage2_classify,
    worst_case_delta_quantile,
)
from .environments import (
    EnvironmentSpec,
    Family,
    ParameterDistribution,
    ReturnPath,
    Role,
    canonical_null_specs,
    default_spec,
    draw_parameter_sets,
    generate,
)
from .experiments import (
    Experiment,
    ExperimentSpec,
    ResultTable,
    run_experiment,
    stabilization_table,
)
from .inference import (
    DegenerateVarianceError,
    bartlett_bandwidth,
    evt_expected_max,
    hac_variance_of_mean,
    z_scan,
    z_statistic,
)
from .inflation import InflationDiagnostics, inflation_diagnostics
from .ingest import IngestError, IngestWarning, ingest_returns
from .multiplicity import (
    EffectiveMultiplicity,
    k_eff,
    k_eff_from_panel,
    k_eff_population,
    sample_correlation,
    shrink_correlation,
)
from .workflows import (
    BreakEvenResult,
    CandidatePanel,
    SelectionOutcome,
    ThresholdTransform,
    WalkForwardGate,
    WalkForwardGateError,
    WorkflowFamily,
    WorkflowSpec,
    apply_threshold,
    breakeven_cost,
    build_candidates,
    run_selection,
)

__all__ = [
    "__version__",
    "AuditError",
    "AuditReport",
    "BlindProtocolError",
    "CalibrationMismatchError",
    "NullCalibration",
    "audit_outcomes",
    "calibrate_stage1",
    "stage1_gate",
    "stage2_classify",
    "worst_case_delta_quantile",
    "EnvironmentSpec",
    "Family",
    "ParameterDistribution",
    "ReturnPath",
    "Role",
    "canonical_null_specs",
    "default_spec",
    "draw_parameter_sets",
    "generate",
    "Experiment",
    "ExperimentSpec",
    "ResultTable",
    "run_experiment",
    "stabilization_table",
    "DegenerateVarianceError",
    "bartlett_bandwidth",
    "evt_expected_max",
    "hac_variance_of_mean",
    "z_scan",
    "z_statistic",
    "InflationDiagnostics",
    "inflation_diagnostics",
    "IngestError",
    "IngestWarning",
    "ingest_returns",
    "EffectiveMultiplicity",
    "k_eff",
    "k_eff_from_panel",
    "k_eff_population",
    "sample_correlation",
    "shrink_correlation",
    "BreakEvenResult",
    "CandidatePanel",
    "SelectionOutcome",
    "ThresholdTransform",
    "WalkForwardGate",
    "WalkForwardGateError",
    "WorkflowFamily",
    "WorkflowSpec",
    "apply_threshold",
    "breakeven_cost",
    "build_candidates",
    "run_selection",
]
