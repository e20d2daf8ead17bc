"""Unit tests for candidate construction, selection, and trading mechanics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullaudit.environments import Family, default_spec, generate
from nullaudit.inference import z_statistic
from nullaudit.multiplicity import k_eff_from_panel
from nullaudit.rng import stream
from nullaudit.workflows import (
    NoTradingError,
    ProtocolViolationError,
    TREND_THRESHOLD_GRID,
    ThresholdTransform,
    TransformKind,
    WalkForwardGate,
    WalkForwardGateError,
    WorkflowFamily,
    WorkflowSpec,
    apply_threshold,
    breakeven_cost,
    build_candidates,
    run_selection,
)


def _wn_path(seed: int, t: int = 500):
    return generate(default_spec(Family.WHITE_NOISE, length_T=t, seed=seed))


# ---------------------------------------------------------------------------
# walk-forward gate
# ---------------------------------------------------------------------------


def test_gate_blocks_walk_forward_until_finalized():
    gate = WalkForwardGate(np.arange(10.0), n_is=6)
    assert np.array_equal(gate.in_sample, np.arange(6.0))
    assert not gate.finalized
    with pytest.raises(WalkForwardGateError):
        _ = gate.walk_forward
    gate.finalize(2)
    assert gate.finalized
    assert np.array_equal(gate.walk_forward, np.array([6.0, 7.0, 8.0, 9.0]))


def test_gate_refuses_double_finalize():
    gate = WalkForwardGate(np.arange(10.0), n_is=6)
    gate.finalize(0)
    with pytest.raises(WalkForwardGateError):
        gate.finalize(1)


def test_gate_split_must_leave_both_blocks():
    with pytest.raises(ValueError):
        WalkForwardGate(np.arange(5.0), n_is=0)
    with pytest.raises(ValueError):
        WalkForwardGate(np.arange(5.0), n_is=5)


# ---------------------------------------------------------------------------
# threshold transforms
# ---------------------------------------------------------------------------


def test_transform_validation():
    with pytest.raises(ValueError):
        ThresholdTransform(TransformKind.FIXED)  # needs a level
    with pytest.raises(ValueError):
        ThresholdTransform.fixed(-0.5)
    with pytest.raises(ValueError):
        ThresholdTransform.adaptive_quantile(1.2)
    with pytest.raises(ValueError):
        ThresholdTransform(TransformKind.NONE, level=1.0)
    assert ThresholdTransform.fixed(2.0).describe() == "Fixed(thr=2)"
    assert ThresholdTransform.adaptive_quantile(0.9).describe() == "AdaptiveQuantile(q=0.9)"


def test_apply_threshold_none_is_passthrough():
    scores = np.random.default_rng(0).standard_normal((20, 3))
    out = apply_threshold(scores, ThresholdTransform.none())
    assert np.array_equal(out, scores)


def test_apply_threshold_fixed_hand_case():
    scores = np.array([[-2.0], [0.5], [1.0], [3.0]])
    out = apply_threshold(scores, ThresholdTransform.fixed(1.0))
    # strict inequality: |score| must exceed the threshold
    assert np.array_equal(out, np.array([[-1.0], [0.0], [0.0], [1.0]]))


def test_apply_threshold_sign_only():
    scores = np.array([[-0.1, 2.0, 0.0]])
    out = apply_threshold(scores, ThresholdTransform.sign_only())
    assert np.array_equal(out, np.array([[-1.0, 1.0, 0.0]]))


def test_apply_threshold_all_zero_scores():
    scores = np.zeros((6, 2))
    out = apply_threshold(scores, ThresholdTransform.fixed(1.0))
    assert np.array_equal(out, np.zeros((6, 2)))


def test_adaptive_quantile_uses_in_sample_cutoff_only():
    # in-sample |scores| are 1..5, median cutoff 3; the walk-forward rows
    # carry large values that would move a full-sample cutoff
    scores = np.array([[1.0], [-2.0], [3.0], [-4.0], [5.0], [3.5], [-40.0], [2.9]])
    out = apply_threshold(scores, ThresholdTransform.adaptive_quantile(0.5), n_is=5)
    want = np.array([[0.0], [0.0], [0.0], [-1.0], [1.0], [1.0], [-1.0], [0.0]])
    assert np.array_equal(out, want)


def test_adaptive_quantile_cutoff_is_per_candidate():
    rng = np.random.default_rng(1)
    scores = np.column_stack([rng.standard_normal(40), 10.0 * rng.standard_normal(40)])
    out = apply_threshold(scores, ThresholdTransform.adaptive_quantile(0.8), n_is=30)
    for k, col in enumerate(scores.T):
        cutoff = np.quantile(np.abs(col[:30]), 0.8)
        assert np.array_equal(out[:, k], np.sign(col) * (np.abs(col) > cutoff))


def test_adaptive_quantile_requires_n_is():
    with pytest.raises(ValueError):
        apply_threshold(np.ones((5, 1)), ThresholdTransform.adaptive_quantile(0.5))


# ---------------------------------------------------------------------------
# workflow specs
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkflowSpec(WorkflowFamily.DATA_MINER, k=0)
    with pytest.raises(ValueError):
        WorkflowSpec(WorkflowFamily.DATA_MINER, split_ratio=1.0)
    with pytest.raises(ValueError):
        WorkflowSpec(WorkflowFamily.DATA_MINER, tau=0.0)
    with pytest.raises(ValueError, match="unknown params"):
        WorkflowSpec(WorkflowFamily.CONTRARIAN, params={"thteta": 1.0})
    with pytest.raises(ValueError, match="no threshold transform"):
        WorkflowSpec(WorkflowFamily.CONTRARIAN, transform=ThresholdTransform.sign_only())


def test_lookahead_requires_explicit_flag():
    with pytest.raises(ProtocolViolationError):
        WorkflowSpec(WorkflowFamily.LOOKAHEAD)
    spec = WorkflowSpec(WorkflowFamily.LOOKAHEAD, allow_lookahead=True)
    assert spec.family is WorkflowFamily.LOOKAHEAD


def test_spec_round_trip_and_hash():
    spec = WorkflowSpec(
        WorkflowFamily.CORRELATED_FAMILY_SEARCH,
        k=40,
        split_ratio=0.7,
        transform=ThresholdTransform.fixed(1.5),
        params={"rho": 0.8, "clusters": 4},
    )
    again = WorkflowSpec.from_dict(spec.to_dict())
    assert again == spec
    assert again.content_hash() == spec.content_hash()
    # params serialize key-sorted, so insertion order cannot change the hash
    reordered = WorkflowSpec(
        WorkflowFamily.CORRELATED_FAMILY_SEARCH,
        k=40,
        split_ratio=0.7,
        transform=ThresholdTransform.fixed(1.5),
        params={"clusters": 4, "rho": 0.8},
    )
    assert reordered.content_hash() == spec.content_hash()
    assert WorkflowSpec(WorkflowFamily.DATA_MINER).content_hash() != spec.content_hash()


def test_default_transforms_by_family():
    assert WorkflowSpec(WorkflowFamily.DATA_MINER).effective_transform().kind is TransformKind.SIGN_ONLY
    assert WorkflowSpec(WorkflowFamily.FEATURE_MINING).effective_transform().kind is TransformKind.SIGN_ONLY
    assert WorkflowSpec(WorkflowFamily.RANDOM_BASELINE).effective_transform().kind is TransformKind.NONE


# ---------------------------------------------------------------------------
# candidate construction
# ---------------------------------------------------------------------------


def test_data_miner_candidates_are_independent_noise():
    path = _wn_path(0, t=600)
    panel = build_candidates(WorkflowSpec(WorkflowFamily.DATA_MINER, k=50), path)
    assert panel.positions.shape == (600, 50)
    assert set(np.unique(panel.positions)) <= {-1.0, 0.0, 1.0}
    corr = np.corrcoef(panel.scores, rowvar=False)
    off = corr[~np.eye(50, dtype=bool)]
    assert np.abs(off).max() < 0.25
    assert abs(off.mean()) < 0.01
    # predictors carry no information about returns
    r_corr = [np.corrcoef(panel.scores[:, k], path.values)[0, 1] for k in range(50)]
    assert np.abs(r_corr).max() < 0.2


def test_build_candidates_deterministic_in_path_seed():
    path = _wn_path(4, t=400)
    spec = WorkflowSpec(WorkflowFamily.DATA_MINER, k=5)
    a = build_candidates(spec, path)
    b = build_candidates(spec, path)
    assert np.array_equal(a.scores, b.scores)


def test_correlated_family_search_cluster_geometry():
    path = _wn_path(1, t=2000)
    spec = WorkflowSpec(
        WorkflowFamily.CORRELATED_FAMILY_SEARCH,
        k=60,
        params={"clusters": 5, "rho": 0.999},
    )
    panel = build_candidates(spec, path, rng=stream(7, "test"))
    est = k_eff_from_panel(panel.scores)
    assert est.value == pytest.approx(5.0, abs=0.5)
    # candidates k and k+5 share a base predictor
    assert np.corrcoef(panel.scores[:, 0], panel.scores[:, 5])[0, 1] > 0.99


def test_correlated_family_search_validates_geometry():
    path = _wn_path(2)
    with pytest.raises(ValueError):
        build_candidates(
            WorkflowSpec(
                WorkflowFamily.CORRELATED_FAMILY_SEARCH, k=3, params={"clusters": 5, "rho": 0.5}
            ),
            path,
        )
    with pytest.raises(ValueError):
        build_candidates(
            WorkflowSpec(
                WorkflowFamily.CORRELATED_FAMILY_SEARCH, k=5, params={"clusters": 2, "rho": 1.5}
            ),
            path,
        )


def test_lookahead_candidate_is_flagged_and_non_causal():
    path = _wn_path(3)
    panel = build_candidates(WorkflowSpec(WorkflowFamily.LOOKAHEAD, allow_lookahead=True), path)
    assert panel.lookahead
    # the position multiplying r_t already knows the sign of r_t
    assert np.array_equal(panel.positions[:, 0], np.sign(path.values))


def test_factor_mimic_constant_exposure():
    path = _wn_path(5)
    panel = build_candidates(WorkflowSpec(WorkflowFamily.FACTOR_MIMIC), path)
    assert np.array_equal(panel.positions, np.ones((len(path), 1)))


def test_contrarian_positions_hand_check():
    path = _wn_path(6, t=400)
    theta = 1.7
    panel = build_candidates(
        WorkflowSpec(WorkflowFamily.CONTRARIAN, params={"theta": theta}), path
    )
    r = path.values
    sigma_is = r[:240].std()
    want = np.clip(-theta * r[:-1] / (3.0 * sigma_is), -1.0, 1.0)
    assert panel.positions[0, 0] == 0.0
    assert np.allclose(panel.positions[1:, 0], want)
    assert np.abs(panel.positions).max() <= 1.0


def test_regime_detector_positions():
    path = _wn_path(7, t=600)
    panel = build_candidates(WorkflowSpec(WorkflowFamily.REGIME_DETECTOR), path)
    pos = panel.positions[:, 0]
    assert set(np.unique(pos)) <= {0.0, 1.0}
    assert np.all(pos[:20] == 0.0)  # rolling window warmup
    # long roughly when trailing vol is below its in-sample 80th percentile
    assert 0.5 < pos[20:360].mean() < 0.95
    with pytest.raises(ValueError):
        build_candidates(
            WorkflowSpec(WorkflowFamily.REGIME_DETECTOR, params={"window": 500}), path
        )


def test_trend_following_breakout_rules():
    path = _wn_path(8, t=1000)
    r = path.values
    panel = build_candidates(WorkflowSpec(WorkflowFamily.TREND_FOLLOWING), path)
    grid = np.asarray(TREND_THRESHOLD_GRID)
    assert grid[0] == 0.5 and grid[-1] == 3.5 and grid.shape == (16,)
    assert panel.positions.shape == (1000, 16)
    sigma_is = r[:600].std()
    k = 3
    want = np.zeros(1000)
    want[1:] = np.sign(r[:-1]) * (np.abs(r[:-1]) > grid[k] * sigma_is)
    assert np.array_equal(panel.positions[:, k], want)
    # tighter thresholds trade at least as often
    active = (panel.positions[:600] != 0).sum(axis=0)
    assert all(a >= b for a, b in zip(active, active[1:]))
    assert panel.eligible.dtype == bool


def test_minimum_phase_length_enforced():
    with pytest.raises(ValueError, match="below"):
        build_candidates(WorkflowSpec(WorkflowFamily.DATA_MINER, k=2), _wn_path(9, t=12))


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def test_run_selection_recomputes_winner():
    path = _wn_path(10, t=500)
    spec = WorkflowSpec(WorkflowFamily.DATA_MINER, k=8)
    out = run_selection(spec, path, rng=stream(3, "sel"))
    panel = build_candidates(spec, path, rng=stream(3, "sel"))
    n_is = math.floor(0.6 * 500)
    realized = panel.positions * path.values[:, None]
    z_is = np.array([z_statistic(realized[:n_is, k]) for k in range(8)])
    assert out.winner_index == int(np.argmax(np.abs(z_is)))
    assert out.z_is_star == pytest.approx(np.abs(z_is).max(), rel=1e-12)
    z_wf = z_statistic(realized[n_is:, out.winner_index])
    assert out.z_wf_signed == pytest.approx(z_wf, rel=1e-12)
    assert out.z_wf_star == pytest.approx(abs(z_wf), rel=1e-12)
    assert out.delta_z == pytest.approx(out.z_is_star - out.z_wf_star, rel=1e-12)
    assert out.n_is == n_is and out.n_wf == 200
    assert not out.degenerate and not out.tie
    assert out.k_eff_pred is not None and out.k_eff_signal is not None


def test_run_selection_records_ties():
    # rho = 1 with one cluster makes every candidate identical
    path = _wn_path(11, t=400)
    spec = WorkflowSpec(
        WorkflowFamily.CORRELATED_FAMILY_SEARCH, k=3, params={"clusters": 1, "rho": 1.0}
    )
    out = run_selection(spec, path, compute_keff=False)
    assert out.tie
    assert out.winner_index == 0  # lowest index wins ties


def test_run_selection_flags_degenerate_when_nothing_eligible():
    path = _wn_path(12, t=400)
    spec = WorkflowSpec(WorkflowFamily.TREND_FOLLOWING, params={"min_trades": 10**6})
    out = run_selection(spec, path, compute_keff=False)
    assert out.degenerate
    assert out.z_is_star == 0.0
    assert out.z_wf_star == 0.0
    assert out.bif_raw is None  # undefined, never 0 or inf
    assert out.delta_z == 0.0


def test_run_selection_keff_modes():
    path = _wn_path(13, t=400)
    spec = WorkflowSpec(WorkflowFamily.DATA_MINER, k=4)
    both = run_selection(spec, path)
    pred_only = run_selection(spec, path, compute_keff="pred")
    neither = run_selection(spec, path, compute_keff=False)
    assert both.k_eff_pred == pred_only.k_eff_pred
    assert pred_only.k_eff_signal is None
    assert neither.k_eff_pred is None and neither.k_eff_signal is None
    with pytest.raises(ValueError):
        run_selection(spec, path, compute_keff="signal")
    # the two panels answer different questions and may legitimately differ
    assert both.k_eff_pred == pytest.approx(4.0, abs=1.0)


def test_run_selection_identical_rng_is_reproducible():
    path = _wn_path(14, t=500)
    spec = WorkflowSpec(WorkflowFamily.FEATURE_MINING, k=6)
    a = run_selection(spec, path, rng=stream(9, "r"), compute_keff=False)
    b = run_selection(spec, path, rng=stream(9, "r"), compute_keff=False)
    assert a == b


def test_lookahead_walk_forward_statistic_diverges():
    out = run_selection(
        WorkflowSpec(WorkflowFamily.LOOKAHEAD, allow_lookahead=True),
        _wn_path(15, t=500),
        compute_keff=False,
    )
    # |r| has mean ~0.8 sd in units of sd(|r|) ~0.6: z grows like 1.3 sqrt(n)
    assert out.z_wf_star > 10.0
    assert out.z_is_star > 10.0


def test_random_baseline_walk_forward_is_half_normal_scale():
    zs = [
        run_selection(
            WorkflowSpec(WorkflowFamily.RANDOM_BASELINE),
            _wn_path(100 + i, t=504),
            rng=stream(100 + i, "rb"),
            compute_keff=False,
        ).z_wf_star
        for i in range(100)
    ]
    assert 0.6 < float(np.mean(zs)) < 1.0  # E|Z| = 0.80 under the null


# ---------------------------------------------------------------------------
# break-even mechanics
# ---------------------------------------------------------------------------


def test_breakeven_five_step_enumeration():
    signals = np.array([0.0, 1.0, 1.0, -1.0, 0.0])
    returns = np.array([0.01, 0.02, -0.01, 0.03, 0.005])
    res = breakeven_cost(signals, returns, wf_start=1)
    # volume by enumeration: |1-0| + |1-1| + |-1-1| + |0-(-1)| = 4
    # (the +1 -> -1 flip contributes 2, the boundary trade contributes 1)
    assert res.volume_two_way_ann == pytest.approx(4.0 * 252 / 4, rel=1e-12)
    assert res.turnover_one_way_ann == pytest.approx(2.0 * 252 / 4, rel=1e-12)
    mu = 252 * (1.0 * 0.02 + 1.0 * -0.01 + -1.0 * 0.03 + 0.0 * 0.005) / 4
    assert res.mu_gross_ann == pytest.approx(mu, rel=1e-12)
    assert res.c_star == pytest.approx(mu / 252.0, rel=1e-12)
    assert res.c_star_bps == pytest.approx(1e4 * mu / 252.0, rel=1e-12)
    assert res.n_wf == 4


def test_breakeven_direct_ratio_example():
    # 10 one-day round trips in a 252-day year: volume 20, gross 0.10/yr
    signals = np.zeros(252)
    returns = np.zeros(252)
    for i in range(10):
        signals[3 + 20 * i] = 1.0
        returns[3 + 20 * i] = 0.01
    res = breakeven_cost(signals, returns, wf_start=0)
    assert res.volume_two_way_ann == pytest.approx(20.0, rel=1e-12)
    assert res.mu_gross_ann == pytest.approx(0.10, rel=1e-12)
    assert res.c_star_bps == pytest.approx(50.0, rel=1e-9)


def test_breakeven_boundary_trade_counted():
    # flat before the split, long at the first walk-forward step
    signals = np.array([0.0, 0.0, 1.0, 1.0])
    returns = np.array([0.0, 0.0, 0.01, 0.01])
    res = breakeven_cost(signals, returns, wf_start=2)
    assert res.volume_two_way_ann == pytest.approx(1.0 * 252 / 2, rel=1e-12)
    # a position inherited from in-sample and never changed is not a trade
    with pytest.raises(NoTradingError):
        breakeven_cost(np.ones(4), returns, wf_start=2)


def test_breakeven_no_trading():
    with pytest.raises(NoTradingError):
        breakeven_cost(np.ones(6), np.full(6, 0.01), wf_start=3)
    # from flat, entering a constant position is itself a trade
    res = breakeven_cost(np.ones(6), np.full(6, 0.01), wf_start=0)
    assert res.volume_two_way_ann > 0.0


def test_breakeven_validation():
    with pytest.raises(ValueError):
        breakeven_cost(np.ones(5), np.ones(4), wf_start=1)
    with pytest.raises(ValueError):
        breakeven_cost(np.ones(5), np.ones(5), wf_start=5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), wf_start=st.integers(0, 40))
def test_breakeven_zero_cost_iff_zero_gross(seed, wf_start):
    rng = np.random.default_rng(seed)
    signals = rng.choice([-1.0, 0.0, 1.0], size=60)
    returns = 0.01 * rng.standard_normal(60)
    try:
        res = breakeven_cost(signals, returns, wf_start=wf_start)
    except NoTradingError:
        return
    gross = float(np.mean(signals[wf_start:] * returns[wf_start:]))
    assert math.copysign(1.0, res.c_star) == math.copysign(1.0, gross) or gross == 0.0
