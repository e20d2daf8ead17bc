"""Full-scale reproduction runs for the published result tables.

Every test here reruns its Monte Carlo grid from scratch at master seed 0
and checks the aggregate numbers at the stated tolerances, printing exactly
one PASS/FAIL line per criterion. The whole file is CPU-bound and takes
roughly twenty minutes on one desktop core.
"""

import dataclasses
import math

import numpy as np
import pytest

from nullaudit.audit import calibrate_stage1
from nullaudit.environments import (
    EnvironmentSpec,
    Family,
    Role,
    canonical_null_specs,
    default_params,
    generate,
)
from nullaudit.experiments import (
    Experiment,
    ExperimentSpec,
    run_experiment,
    stabilization_table,
)
from nullaudit.inference import (
    evt_expected_max,
    hac_variance_of_mean,
    z_statistic,
)
from nullaudit.inflation import inflation_diagnostics
from nullaudit.multiplicity import k_eff, k_eff_population
from nullaudit.rng import child_sequence, stream
from nullaudit.workflows import (
    WalkForwardGate,
    WalkForwardGateError,
    WorkflowFamily,
    WorkflowSpec,
    breakeven_cost,
    run_selection,
)

pytestmark = pytest.mark.acceptance

_SEED = 0


def _conclude(capsys, name: str, failures: list[str], detail: str = "") -> None:
    status = "PASS" if not failures else "FAIL"
    tail = f"  ({detail})" if detail else ""
    with capsys.disabled():
        print(f"\n[{status}] {name}{tail}")
    assert not failures, f"{name}: " + "; ".join(failures)


def _run(experiment: Experiment, n: int, params: dict | None = None):
    return run_experiment(
        ExperimentSpec(
            experiment, n_replications=n, master_seed=_SEED, params=params or {}
        )
    )


# ---------------------------------------------------------------------------
# criterion 1: selection inflation grows with search breadth
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def scaling_table():
    return _run(Experiment.SCALING_LAW, 1000)


def test_criterion_01_scaling_law(scaling_table, capsys):
    expected = {
        1: 0.81, 5: 1.58, 10: 1.90, 50: 2.52,
        100: 2.79, 200: 3.00, 500: 3.28, 1000: 3.48,
    }
    rows = {r["k"]: r for r in scaling_table.rows}
    failures = []
    for k, want in expected.items():
        got = rows[k]["mean_z_is_star"]
        if abs(got - want) > 0.06:
            failures.append(f"mean z_is_star at K={k}: {got:.3f} vs {want} +/- 0.06")
        wf = rows[k]["mean_z_wf_star"]
        if not 0.74 <= wf <= 0.88:
            failures.append(f"mean z_wf_star at K={k}: {wf:.3f} outside [0.74, 0.88]")
        if k >= 100 and rows[k]["is_fail_pct"] < 99.0:
            failures.append(f"winner FWP at K={k}: {rows[k]['is_fail_pct']:.1f}% < 99%")
    runtime = scaling_table.metadata["runtime_seconds"]
    if runtime > 1800:
        failures.append(f"runtime {runtime:.0f}s exceeds 30 min budget")
    detail = (
        f"z_is* K=1: {rows[1]['mean_z_is_star']:.2f}, K=1000: "
        f"{rows[1000]['mean_z_is_star']:.2f}; {runtime:.0f}s"
    )
    _conclude(capsys, "criterion 1: scaling law (search-breadth inflation)", failures, detail)


# ---------------------------------------------------------------------------
# criterion 2: redundancy collapses effective multiplicity
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def redundancy_table():
    return _run(Experiment.REDUNDANCY_LAW, 1000)


def test_criterion_02_redundancy_law(redundancy_table, capsys):
    expected_keff = {
        1: 1.00, 5: 5.03, 10: 10.09, 25: 25.46,
        50: 51.74, 100: 106.66, 500: 500.00,
    }
    rows = {r["clusters"]: r for r in redundancy_table.rows}
    failures = []
    for m, want in expected_keff.items():
        got = rows[m]["mean_k_eff_pred"]
        if abs(got - want) > 0.05 * want:
            failures.append(f"K_eff at {m} clusters: {got:.2f} vs {want} +/- 5%")
        if m >= 10:
            ratio = rows[m]["ratio_obs_evt"]
            if not 0.95 <= ratio <= 1.03:
                failures.append(
                    f"obs/EVT ratio at {m} clusters: {ratio:.3f} outside [0.95, 1.03]"
                )
    detail = (
        f"K_eff at 5 clusters: {rows[5]['mean_k_eff_pred']:.2f}, "
        f"ratio at 500: {rows[500]['ratio_obs_evt']:.3f}"
    )
    _conclude(capsys, "criterion 2: redundancy law (clustered search)", failures, detail)


# ---------------------------------------------------------------------------
# criterion 3: closed-form expected maximum benchmark
# ---------------------------------------------------------------------------


def test_criterion_03_evt_benchmark(capsys):
    got = evt_expected_max(1000)
    failures = []
    if abs(got - 3.27) > 0.01:
        failures.append(f"evt_expected_max(1000) = {got:.4f} vs 3.27 +/- 0.01")
    _conclude(capsys, "criterion 3: EVT expected-max benchmark", failures, f"{got:.4f}")


# ---------------------------------------------------------------------------
# criterion 4: imperfect correlation boundary cases
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def imperfect_table():
    return _run(
        Experiment.REDUNDANCY_IMPERFECT,
        300,
        {"rho_grid": [0.6, 0.99], "cluster_grid": [1, 5]},
    )


def test_criterion_04_imperfect_correlation(imperfect_table, capsys):
    rows = {(r["rho"], r["clusters"]): r for r in imperfect_table.rows}
    failures = []
    near = rows[(0.99, 5)]
    if abs(near["mean_k_eff_pred"] - 5.1) > 0.3:
        failures.append(
            f"K_eff at rho=0.99, 5 clusters: {near['mean_k_eff_pred']:.2f} vs 5.1 +/- 0.3"
        )
    if abs(near["evt_error_pct"]) > 12.0:
        failures.append(
            f"EVT error at rho=0.99, 5 clusters: {near['evt_error_pct']:.1f}% > 12%"
        )
    far = rows[(0.6, 1)]
    if far["evt_error_pct"] < 80.0:
        failures.append(
            f"EVT error at rho=0.6, 1 cluster: {far['evt_error_pct']:.1f}% < 80%"
        )
    detail = (
        f"K_eff(0.99, 5) = {near['mean_k_eff_pred']:.2f}, "
        f"EVT err: {near['evt_error_pct']:.1f}% / {far['evt_error_pct']:.0f}%"
    )
    _conclude(capsys, "criterion 4: imperfect-correlation boundary", failures, detail)


# ---------------------------------------------------------------------------
# criterion 5: threshold transforms amplify effective multiplicity
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def amplification_table():
    return _run(Experiment.THRESHOLD_AMPLIFICATION, 1000)


def test_criterion_05_threshold_amplification(amplification_table, capsys):
    rows = {r["transform"]: r for r in amplification_table.rows}
    failures = []
    pred = rows["None"]["mean_k_eff_pred"]
    if abs(pred - 1.24) > 0.05:
        failures.append(f"K_eff(pred) = {pred:.3f} vs 1.24 +/- 0.05")
    for label, want in (("Fixed(thr=2)", 2.68), ("AdaptiveQuantile(q=0.95)", 2.57)):
        amp = rows[label]["amplification"]
        if abs(amp - want) > 0.15:
            failures.append(f"amplification for {label}: {amp:.3f} vs {want} +/- 0.15")
    z_none = rows["None"]["mean_z_is_star"]
    if abs(z_none - 1.82) > 0.05:
        failures.append(f"mean z_is_star (None): {z_none:.3f} vs 1.82 +/- 0.05")
    z_fixed = rows["Fixed(thr=2)"]["mean_z_is_star"]
    if abs(z_fixed - 2.63) > 0.07:
        failures.append(f"mean z_is_star (Fixed 2.0): {z_fixed:.3f} vs 2.63 +/- 0.07")
    for label, row in rows.items():
        wf = row["mean_z_wf_star"]
        if not 0.74 <= wf <= 0.90:
            failures.append(f"mean z_wf_star for {label}: {wf:.3f} outside [0.74, 0.90]")
    detail = (
        f"K_eff(pred) = {pred:.3f}, amp Fixed(2.0) = {rows['Fixed(thr=2)']['amplification']:.2f}, "
        f"z_is* {z_none:.2f} -> {z_fixed:.2f}"
    )
    _conclude(capsys, "criterion 5: threshold amplification", failures, detail)


# ---------------------------------------------------------------------------
# criterion 6: falsification matrix
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def matrix_table():
    return _run(Experiment.FALSIFICATION_MATRIX, 1000)


def test_criterion_06_falsification_matrix(matrix_table, capsys):
    rows = {(r["workflow"], r["environment"]): r for r in matrix_table.rows}
    envs = ["WhiteNoise", "RegimeSwitch", "MA1Placebo", "FactorNull"]
    failures = []
    for env in envs:
        look = rows[("Lookahead", env)]["wf_fail_pct"]
        if look != 100.0:
            failures.append(f"Lookahead WF failure on {env}: {look:.1f}% != 100%")
        contra = rows[("Contrarian", env)]["wf_fail_pct"]
        if env == "MA1Placebo":
            if contra != 100.0:
                failures.append(f"Contrarian WF failure on MA1Placebo: {contra:.1f}% != 100%")
        elif not 3.0 <= contra <= 7.5:
            failures.append(f"Contrarian WF failure on {env}: {contra:.1f}% outside [3, 7.5]")
        miner = rows[("DataMiner", env)]
        if miner["is_fail_pct"] < 99.0:
            failures.append(f"DataMiner IS failure on {env}: {miner['is_fail_pct']:.1f}% < 99%")
        if not 4.0 <= miner["wf_fail_pct"] <= 7.5:
            failures.append(
                f"DataMiner WF failure on {env}: {miner['wf_fail_pct']:.1f}% outside [4, 7.5]"
            )
        for wf_name in ("RandomBaseline", "RegimeDetector", "FactorMimic"):
            rate = rows[(wf_name, env)]["wf_fail_pct"]
            if not 1.5 <= rate <= 8.0:
                failures.append(
                    f"{wf_name} WF failure on {env}: {rate:.1f}% outside [1.5, 8]"
                )
    detail = (
        f"Lookahead 100% x4, Contrarian on MA1Placebo: "
        f"{rows[('Contrarian', 'MA1Placebo')]['wf_fail_pct']:.0f}%"
    )
    _conclude(capsys, "criterion 6: falsification matrix", failures, detail)


# ---------------------------------------------------------------------------
# criterion 7: detection frontier on the activated-trend alternative
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def frontier_table():
    return _run(
        Experiment.DETECTION_FRONTIER,
        1000,
        {"phi_grid": [0.05, 0.15, 0.25], "theta_grid": [1.0, 2.0, 3.0]},
    )


def test_criterion_07_detection_frontier(frontier_table, capsys):
    rows = {(r["phi"], r["theta"]): r for r in frontier_table.rows}
    failures = []
    strong = rows[(0.25, 1.0)]["pass_rate_pct"]
    if strong < 99.0:
        failures.append(f"pass rate at (0.25, 1.0): {strong:.1f}% < 99%")
    weak = rows[(0.05, 3.0)]["pass_rate_pct"]
    if weak > 7.0:
        failures.append(f"pass rate at (0.05, 3.0): {weak:.1f}% > 7%")
    mid = rows[(0.15, 2.0)]["pass_rate_pct"]
    if abs(mid - 46.6) > 5.0:
        failures.append(f"pass rate at (0.15, 2.0): {mid:.1f}% vs 46.6 +/- 5pp")
    detail = f"{strong:.1f}% / {mid:.1f}% / {weak:.1f}%"
    _conclude(capsys, "criterion 7: detection frontier", failures, detail)


# ---------------------------------------------------------------------------
# criterion 8: effective-multiplicity estimator validation
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def keff_table():
    return _run(Experiment.KEFF_VALIDATION, 500)


def test_criterion_08_keff_estimator(keff_table, capsys):
    rows = {
        (r["regime"], r["estimator"], r["k"], r["t"]): r for r in keff_table.rows
    }
    failures = []
    indep = rows[("Independent", "shrinkage", 100, 250)]
    if abs(indep["bias"]) > 0.03:
        failures.append(f"independent K=100/T=250 bias: {indep['bias']:.4f} > 0.03")
    if indep["rmse"] > 0.04:
        failures.append(f"independent K=100/T=250 RMSE: {indep['rmse']:.4f} > 0.04")
    factor = rows[("Factor", "shrinkage", 100, 250)]
    if not abs(factor["bias"]) <= 0.36:
        failures.append(f"factor K=100/T=250 bias: {factor['bias']:.3f} > 0.36")
    high = rows[("HighDim", "shrinkage", 500, 250)]
    if abs(high["bias"]) > 0.06:
        failures.append(f"high-dim K=500/T=250 bias: {high['bias']:.4f} > 0.06")
    naive = rows[("HighDim", "sample", 500, 250)]
    if abs(naive["bias"]) < 300.0:
        failures.append(
            f"naive estimator K=500/T=250 bias: {naive['bias']:.0f}, expected |bias| >= 300"
        )
    detail = (
        f"bias indep {indep['bias']:.3f}, factor {factor['bias']:.2f}, "
        f"high-dim {high['bias']:.3f}, naive {naive['bias']:.0f}"
    )
    _conclude(capsys, "criterion 8: K_eff estimator validation", failures, detail)


# ---------------------------------------------------------------------------
# criterion 9: stabilized inflation metrics
# ---------------------------------------------------------------------------


def test_criterion_09_stabilization_table(capsys):
    failures = []
    table = stabilization_table()
    want = [
        (3.0, "1.00", 1.0, 0.0),
        (2.0, "1.50", 1.5, 1.0),
        (1.0, "3.00", 3.0, 2.0),
        (0.5, "6.00", 6.0, 2.5),
        (0.25, "NA", 6.0, 2.75),
        (0.0, "NA", 6.0, 3.0),
    ]
    for row, (z_wf, raw, stab, delta) in zip(table.rows, want):
        ok = (
            row["z_wf_star"] == z_wf
            and row["bif_raw"] == raw
            and math.isclose(row["bif_stab"], stab, rel_tol=1e-12)
            and math.isclose(row["delta_z"], delta, rel_tol=1e-12)
        )
        if not ok:
            failures.append(f"stress row at z_wf={z_wf} mismatched: {row}")
    # the gap never moves with the stabilization floor
    for z_is, z_wf in ((3.0, 2.0), (3.0, 0.3), (1.7, 0.0), (4.2, 4.1)):
        deltas = {
            inflation_diagnostics(z_is, z_wf, tau=round(0.1 * i, 1)).delta_z
            for i in range(1, 16)
        }
        if len(deltas) != 1:
            failures.append(f"delta_z varies with tau at ({z_is}, {z_wf}): {deltas}")
    _conclude(capsys, "criterion 9: stabilization stress table", failures, "6 rows exact")


# ---------------------------------------------------------------------------
# criterion 10: break-even cost of a passing trend screen
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def breakeven_table():
    return _run(Experiment.BREAK_EVEN_COST, 1000)


def test_criterion_10_breakeven(breakeven_table, capsys):
    row = breakeven_table.rows[0]
    failures = []
    if abs(row["pass_rate_pct"] - 39.5) > 5.0:
        failures.append(f"screen pass rate: {row['pass_rate_pct']:.1f}% vs 39.5 +/- 5pp")
    if abs(row["breakeven_bps_mean"] - 100.7) > 0.15 * 100.7:
        failures.append(f"mean break-even: {row['breakeven_bps_mean']:.1f} vs 100.7 +/- 15%")
    if abs(row["breakeven_bps_median"] - 86.1) > 0.15 * 86.1:
        failures.append(f"median break-even: {row['breakeven_bps_median']:.1f} vs 86.1 +/- 15%")

    # exact flip-volume accounting on hand-built 5-step paths
    signals = np.array([0.0, 1.0, 1.0, -1.0, 0.0])
    returns = np.array([0.01, 0.02, -0.01, 0.03, 0.005])
    res = breakeven_cost(signals, returns, wf_start=1)
    volume = abs(1 - 0) + abs(1 - 1) + abs(-1 - 1) + abs(0 - -1)
    if not math.isclose(res.volume_two_way_ann, volume * 252 / 4, rel_tol=1e-12):
        failures.append("five-step flip volume mismatch")
    mu = 252 * float(np.mean(signals[1:] * returns[1:]))
    if not math.isclose(res.c_star, mu / (volume * 252 / 4), rel_tol=1e-12):
        failures.append("five-step break-even ratio mismatch")
    held = breakeven_cost(np.array([0.0, -1.0, -1.0, -1.0, 1.0]), returns, wf_start=1)
    if not math.isclose(held.volume_two_way_ann, (1 + 0 + 0 + 2) * 252 / 4, rel_tol=1e-12):
        failures.append("five-step flip volume mismatch (late flip)")
    detail = (
        f"pass {row['pass_rate_pct']:.1f}%, mean {row['breakeven_bps_mean']:.1f} bps, "
        f"median {row['breakeven_bps_median']:.1f} bps"
    )
    _conclude(capsys, "criterion 10: break-even mechanics", failures, detail)


# ---------------------------------------------------------------------------
# criterion 11: property suite with no tuned constants
# ---------------------------------------------------------------------------


def test_criterion_11_property_suite(capsys):
    failures = []
    rng = np.random.default_rng(_SEED)

    # multiplicity: bounds, permutation invariance, closed form
    for k, rho in ((8, 0.0), (12, 0.35), (20, 0.9)):
        corr = np.full((k, k), rho)
        np.fill_diagonal(corr, 1.0)
        val = k_eff(corr)
        closed = k / (1.0 + rho * rho * (k - 1))
        if not math.isclose(val, closed, rel_tol=1e-9):
            failures.append(f"equicorrelation closed form failed at K={k}, rho={rho}")
        if not 1.0 - 1e-9 <= val <= k + 1e-9:
            failures.append(f"K_eff bounds violated at K={k}, rho={rho}")
    base = rng.standard_normal((60, 6))
    corr = np.corrcoef(base, rowvar=False)
    perm = rng.permutation(6)
    if not math.isclose(k_eff(corr), k_eff(corr[np.ix_(perm, perm)]), rel_tol=1e-12):
        failures.append("K_eff not permutation invariant")
    if not math.isclose(k_eff_population([3, 3], 1.0), 2.0, rel_tol=1e-12):
        failures.append("population K_eff of two perfect clusters != 2")

    # variance estimation: strictly positive on rough data, iid oracle match
    for _ in range(25):
        x = rng.standard_normal(rng.integers(10, 200))
        if hac_variance_of_mean(x) <= 0.0:
            failures.append("HAC variance not positive definite")
            break
    big = rng.standard_normal(100_000)
    hac = hac_variance_of_mean(big)
    iid = float(np.var(big)) / big.size
    if abs(hac / iid - 1.0) > 0.03:
        failures.append(f"HAC vs iid oracle off by {100 * abs(hac / iid - 1):.1f}%")
    z = z_statistic(big)
    if abs(z) > 4.0:
        failures.append(f"null z-statistic implausibly large: {z:.2f}")

    # induced nulls are martingale differences: autocovariance dies at all lags
    for spec in canonical_null_specs(length_T=100_000, seed=_SEED):
        r = generate(spec).values
        xs = (r - r.mean()) / r.std()
        for lag in (1, 2, 3):
            ac = float(np.mean(xs[lag:] * xs[:-lag]))
            if spec.family is Family.MA1_PLACEBO and lag == 1:
                continue  # the placebo's single designed friction lag
            if abs(ac) > 4.0 / math.sqrt(xs.size - lag):
                failures.append(
                    f"{spec.family.value} autocorrelation at lag {lag}: {ac:.5f}"
                )

    # walk-forward custody is enforced at runtime, not by convention
    gate = WalkForwardGate(np.arange(20.0), n_is=12)
    try:
        _ = gate.walk_forward
        failures.append("walk-forward block readable before selection finalized")
    except WalkForwardGateError:
        pass

    # self-calibrated gate has size at most alpha (99% binomial band)
    wf = WorkflowSpec(WorkflowFamily.RANDOM_BASELINE)
    env = EnvironmentSpec(
        family=Family.WHITE_NOISE,
        params=default_params(Family.WHITE_NOISE),
        length_T=300,
        seed=0,
        role=Role.AUDIT,
    )
    cal = calibrate_stage1(wf, [env], m_replications=1000, alpha=0.05, master_seed=_SEED)
    zeta = cal.environments["WhiteNoise"].zeta
    n_audit = 1000
    hits = 0
    for i in range(n_audit):
        seed = int(child_sequence(77, "gate-size", i).generate_state(1, np.uint64)[0])
        path = generate(dataclasses.replace(env, seed=seed))
        out = run_selection(wf, path, rng=stream(77, "gate-wf", i), compute_keff=False)
        hits += int(out.z_wf_star > zeta)
    rate = hits / n_audit
    bound = 0.05 + 2.576 * math.sqrt(0.05 * 0.95 / n_audit)
    if rate > bound:
        failures.append(f"gate size {rate:.3f} exceeds alpha + 99% CI ({bound:.3f})")

    _conclude(
        capsys,
        "criterion 11: property suite",
        failures,
        f"gate size {rate:.3f} <= {bound:.3f}",
    )
