"""Threshold sweeps, softmax metrics, and selection — checked against
independent pure-Python oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threshcal.calibrate import (
    AssignmentResult,
    CalibrationCurve,
    CalibrationError,
    apply_threshold,
    average_entropy,
    build_grid,
    evaluate_at,
    map_labels_and_gaps,
    mcl,
    select_threshold,
    softmax_log_probs,
    softmax_probs,
    sweep,
    top_two_gap,
)
from threshcal.model import ModelError

# frozen oracle values (direct evaluation)
SOFTMAX_0_M1_AT_T1 = (0.7310585786300049, 0.2689414213699951)
MCL_TWO_POINT = 0.6265233750364456  # 2 * (-log 0.73105857863...)
ENTROPY_4DIGIT_ROW = 0.5821616831548417  # -sum p log p for (.7311, .2689)
LOG2 = 0.6931471805599453


# ---------------------------------------------------------------------------
# independent oracles (pure python, no shared code path)


def oracle_log_softmax_row(row, t):
    k = len(row)
    if math.isinf(t):
        return [-math.log(k)] * k
    z = [x / t for x in row]
    m = max(z)
    lse = math.log(sum(math.exp(v - m) for v in z))
    return [v - m - lse for v in z]


def oracle_record(scores, truth, t):
    """Recompute (C, mcp, pa, mcl, ae) at one threshold from first principles."""
    n = len(scores)
    assigned = []
    wrong = 0
    for i, row in enumerate(scores):
        row = list(map(float, row))
        srt = sorted(row, reverse=True)
        gap = srt[0] - srt[1]
        j_max = row.index(max(row)) + 1
        if not math.isinf(t) and gap >= t:
            assigned.append(i)
            if j_max != truth[i]:
                wrong += 1
    loss = 0.0
    ent = 0.0
    for i, row in enumerate(scores):
        logs = oracle_log_softmax_row(list(map(float, row)), t)
        loss += -logs[truth[i] - 1]
        ent += -sum(math.exp(lp) * lp for lp in logs if math.isfinite(lp))
    return {
        "assigned": set(assigned),
        "mcp": wrong / len(assigned) if assigned else 0.0,
        "pa": len(assigned) / n,
        "mcl": loss,
        "ae": ent / n,
    }


def random_instance(rng, n_max=50, k_max=4):
    n = int(rng.integers(1, n_max + 1))
    k = int(rng.integers(2, k_max + 1))
    scores = rng.normal(size=(n, k)) * rng.uniform(0.5, 4.0)
    truth = rng.integers(1, k + 1, size=n)
    return scores, truth


# ---------------------------------------------------------------------------
# top_two_gap / build_grid


def test_top_two_gap_examples():
    assert top_two_gap([-1.0, -4.0]) == (1, 3.0)
    assert top_two_gap([-2.0, -2.0, -7.0]) == (1, 0.0)
    j, gap = top_two_gap([0.0, -np.inf])
    assert j == 1 and math.isinf(gap) and gap > 0
    with pytest.raises(CalibrationError, match="two classes"):
        top_two_gap([1.0])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=6),
)
def test_top_two_gap_matches_sorted_oracle(row):
    j, gap = top_two_gap(row)
    srt = sorted(row, reverse=True)
    assert gap == pytest.approx(srt[0] - srt[1], abs=1e-9)
    assert row[j - 1] == max(row)
    assert j - 1 == row.index(max(row))  # lowest index wins ties


def test_build_grid_example():
    # rows engineered to have gaps 3, 1, 3
    scores = np.array([[0.0, -3.0], [0.0, -1.0], [3.0, 0.0]])
    np.testing.assert_array_equal(build_grid(scores, 1e-12), [1e-12, 1.0, 3.0, np.inf])


def test_build_grid_all_equal_and_empty():
    scores = np.array([[0.0, -2.0], [5.0, 3.0]])
    np.testing.assert_array_equal(build_grid(scores, 1e-12), [1e-12, 2.0, np.inf])
    empty = np.empty((0, 2))
    np.testing.assert_array_equal(build_grid(empty, 1e-12), [1e-12, np.inf])


def test_build_grid_zero_gap_points_never_assigned():
    # a tied-argmax point has gap 0; the laxest finite threshold stays epsilon
    scores = np.array([[1.0, 1.0], [2.0, 0.0]])
    grid = build_grid(scores, 1e-12)
    np.testing.assert_array_equal(grid, [1e-12, 2.0, np.inf])
    result = apply_threshold(scores, grid[0])
    np.testing.assert_array_equal(result.labels, [0, 1])


def test_build_grid_bad_epsilon():
    with pytest.raises(CalibrationError, match="epsilon"):
        build_grid(np.zeros((1, 2)), 0.0)


# ---------------------------------------------------------------------------
# softmax formulation


def test_softmax_uniform_at_infinite_threshold():
    p = softmax_probs([3.0, -1.0, 100.0], np.inf)
    np.testing.assert_allclose(p, [1 / 3] * 3, atol=1e-15)


def test_softmax_symmetry_and_frozen_value():
    np.testing.assert_allclose(softmax_probs([0.0, 0.0], 2.7), [0.5, 0.5], atol=1e-15)
    p = softmax_probs([0.0, -1.0], 1.0)
    np.testing.assert_allclose(p, SOFTMAX_0_M1_AT_T1, atol=1e-12)


def test_softmax_rejects_nonpositive_threshold():
    for bad in (0.0, -1.0):
        with pytest.raises(CalibrationError, match="positive"):
            softmax_probs([0.0, 1.0], bad)


def test_softmax_handles_minus_inf_scores():
    p = softmax_probs([0.0, -np.inf], 1.0)
    np.testing.assert_array_equal(p, [1.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=5),
    st.floats(1e-3, 1e3),
    st.floats(-100, 100, allow_nan=False),
)
def test_softmax_shift_invariance(row, t, shift):
    base = softmax_probs(row, t)
    shifted = softmax_probs([x + shift for x in row], t)
    np.testing.assert_allclose(base, shifted, atol=1e-12)


def test_mcl_examples():
    one_hot = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert mcl(one_hot, [1, 2]) == 0.0
    uniform = np.full((5, 3), 1 / 3)
    assert mcl(uniform, [1, 2, 3, 1, 2]) == pytest.approx(5 * math.log(3), rel=1e-12)
    p1, p2 = SOFTMAX_0_M1_AT_T1
    probs = np.array([[p1, p2], [p2, p1]])
    assert mcl(probs, [1, 2]) == pytest.approx(MCL_TWO_POINT, abs=1e-12)


def test_mcl_infinite_when_true_class_impossible():
    assert mcl(np.array([[0.0, 1.0]]), [1]) == math.inf


def test_average_entropy_examples():
    assert average_entropy(np.full((4, 2), 0.5)) == pytest.approx(LOG2, abs=1e-12)
    assert average_entropy(np.array([[1.0, 0.0], [0.0, 1.0]])) == 0.0
    assert average_entropy(np.array([[0.7311, 0.2689]])) == pytest.approx(
        ENTROPY_4DIGIT_ROW, abs=1e-12
    )


def test_average_entropy_unweighted_variant():
    # the unweighted reading peaks at k log k for uniform rows instead of log k
    assert average_entropy(np.full((3, 2), 0.5), unweighted=True) == pytest.approx(
        2 * LOG2, abs=1e-12
    )


def test_average_entropy_requires_normalized_rows():
    with pytest.raises(CalibrationError, match="sum to 1"):
        average_entropy(np.array([[0.9, 0.3]]))


# ---------------------------------------------------------------------------
# sweep


def gap_engineered_scores():
    """4 points with gaps (5, 4, 1, 0.5); points 1,3,4 correct, point 2 wrong."""
    scores = np.array(
        [
            [0.0, -5.0],
            [0.0, -4.0],
            [0.0, -1.0],
            [0.0, -0.5],
        ]
    )
    truth = np.array([1, 2, 1, 1])  # argmax is always 1, so point 2 is wrong
    return scores, truth


def test_sweep_hand_worked_example():
    scores, truth = gap_engineered_scores()
    eps = 1e-12
    grid = np.array([eps, 0.5, 1.0, 4.0, 5.0, np.inf])
    curve = sweep(scores, truth, grid)
    np.testing.assert_allclose(curve.pa, [1.0, 1.0, 0.75, 0.5, 0.25, 0.0])
    np.testing.assert_allclose(curve.mcp, [0.25, 0.25, 1 / 3, 0.5, 0.0, 0.0])
    np.testing.assert_array_equal(curve.n_assigned, [4, 4, 3, 2, 1, 0])


def test_sweep_all_correct():
    scores = np.array([[0.0, -2.0], [0.0, -3.0]])
    curve = sweep(scores, [1, 1], build_grid(scores))
    np.testing.assert_array_equal(curve.mcp, np.zeros(len(curve)))


def test_sweep_at_epsilon_is_plain_map_error():
    rng = np.random.default_rng(8)
    scores = rng.normal(size=(40, 3))
    truth = rng.integers(1, 4, size=40)
    curve = sweep(scores, truth, build_grid(scores))
    plain_wrong = (scores.argmax(axis=1) + 1 != truth).mean()
    assert curve.pa[0] == 1.0
    assert curve.mcp[0] == pytest.approx(plain_wrong, abs=1e-15)


def test_sweep_validates_inputs():
    scores = np.zeros((2, 2))
    with pytest.raises(CalibrationError, match="true labels"):
        sweep(scores, [0, 1], build_grid(scores))
    with pytest.raises(CalibrationError, match="expected 2"):
        sweep(scores, [1], build_grid(scores))


def test_sweep_matches_oracle_exactly():
    rng = np.random.default_rng(42)
    for _ in range(40):
        scores, truth = random_instance(rng)
        grid = build_grid(scores)
        curve = sweep(scores, truth, grid)
        for i, t in enumerate(grid):
            want = oracle_record(scores, truth, float(t))
            assert curve.pa[i] == want["pa"]
            assert curve.mcp[i] == want["mcp"]
            assert curve.n_assigned[i] == len(want["assigned"])
            np.testing.assert_allclose(curve.mcl[i], want["mcl"], rtol=1e-10, atol=1e-10)
            np.testing.assert_allclose(curve.ae[i], want["ae"], rtol=1e-10, atol=1e-10)


def test_evaluate_at_equals_sweep_rows():
    rng = np.random.default_rng(11)
    scores, truth = random_instance(rng, n_max=30)
    grid = build_grid(scores)
    curve = sweep(scores, truth, grid)
    for i, t in enumerate(grid):
        rec = evaluate_at(scores, truth, float(t))
        assert rec.pa == curve.pa[i]
        assert rec.mcp == curve.mcp[i]
        assert rec.n_assigned == curve.n_assigned[i]
        assert rec.mcl == pytest.approx(curve.mcl[i], rel=1e-12)
        assert rec.ae == pytest.approx(curve.ae[i], rel=1e-12, abs=1e-15)


def test_grid_completeness_every_achievable_pair_appears():
    rng = np.random.default_rng(17)
    for _ in range(20):
        scores, truth = random_instance(rng, n_max=12, k_max=3)
        grid = build_grid(scores)
        curve = sweep(scores, truth, grid)
        seen = {(int(c), float(m)) for c, m in zip(curve.n_assigned, curve.mcp)}
        _, gaps = map_labels_and_gaps(scores)
        # probe thresholds between and beyond every pair of consecutive gaps
        probes = np.concatenate((np.unique(gaps[np.isfinite(gaps)]), [np.inf]))
        eps = 1e-12
        for lo, hi in zip(probes[:-1], probes[1:]):
            mid = lo + (min(hi, lo + 1.0) - lo) / 2
            want = oracle_record(scores, truth, float(max(mid, eps)))
            assert (len(want["assigned"]), want["mcp"]) in seen
        # between consecutive grid values the assigned set is constant
        for lo, hi in zip(grid[:-2], grid[1:-1]):
            mid = (lo + hi) / 2
            want_mid = oracle_record(scores, truth, float(mid))
            want_hi = oracle_record(scores, truth, float(hi))
            assert want_mid["assigned"] == want_hi["assigned"]


def test_nesting_and_pa_monotonicity():
    rng = np.random.default_rng(23)
    for _ in range(50):
        scores, _ = random_instance(rng, n_max=40)
        _, gaps = map_labels_and_gaps(scores)
        grid = build_grid(scores)
        prev = None
        for t in grid:
            mask = np.zeros(len(gaps), dtype=bool) if np.isinf(t) else gaps >= t
            if prev is not None:
                assert np.all(prev | ~mask), "assigned sets must be nested"
                assert mask.sum() <= prev.sum()
            prev = mask


def test_ae_monotone_in_t_and_maximal_at_inf():
    rng = np.random.default_rng(29)
    for _ in range(30):
        scores, truth = random_instance(rng, n_max=20)
        ts = np.concatenate((np.geomspace(1e-3, 1e3, 19), [np.inf]))
        k = scores.shape[1]
        vals = []
        for t in ts:
            logp = softmax_log_probs(scores, float(t))
            p = np.exp(logp)
            ent = -(np.where(np.isfinite(logp), p * logp, 0.0).sum(axis=1)).mean()
            vals.append(ent)
        vals = np.array(vals)
        assert np.all(np.diff(vals) >= -1e-12)
        assert np.all(vals <= math.log(k) + 1e-12)
        assert vals[-1] == pytest.approx(math.log(k), abs=1e-12)


# ---------------------------------------------------------------------------
# selection and application


def make_curve(thresholds, mcp_vals, pa_vals, n, mcl_vals=None, ae_vals=None):
    counts = np.round(np.asarray(pa_vals) * n).astype(int)
    m = len(thresholds)
    return CalibrationCurve(
        thresholds=np.asarray(thresholds, dtype=float),
        mcp=np.asarray(mcp_vals, dtype=float),
        pa=counts / n,
        n_assigned=counts,
        mcl=np.asarray(mcl_vals if mcl_vals is not None else np.zeros(m), dtype=float),
        ae=np.asarray(ae_vals if ae_vals is not None else np.linspace(0, LOG2, m), dtype=float),
        n=n,
    )


def test_select_hand_enumerated_feasible_set():
    curve = make_curve(
        thresholds=[1e-12, 1.0, 2.0, np.inf],
        mcp_vals=[0.3, 0.2, 0.1, 0.0],
        pa_vals=[1.0, 0.8, 0.5, 0.0],
        n=10,
    )
    sel = select_threshold(curve, "mcp", 0.25)
    assert sel.feasible
    assert sel.t_star == 1.0
    assert sel.achieved.mcp == pytest.approx(0.2)
    assert sel.achieved.pa == pytest.approx(0.8)


def test_select_all_zero_mcp_takes_grid_minimum():
    curve = make_curve([1e-12, 0.5, np.inf], [0.0, 0.0, 0.0], [1.0, 0.5, 0.0], n=4)
    sel = select_threshold(curve, "mcp", 0.25)
    assert sel.t_star == 1e-12
    assert sel.achieved.pa == 1.0


def test_select_infeasible_reports_state():
    curve = make_curve(
        [1e-12, np.inf], [0.5, 0.0], [1.0, 0.0], n=4, mcl_vals=[900.0, 400.0]
    )
    sel = select_threshold(curve, "mcl", 300.0)
    assert not sel.feasible
    assert math.isinf(sel.t_star)
    assert sel.achieved.t == math.inf


def test_select_guarantee_on_random_curves():
    rng = np.random.default_rng(31)
    for _ in range(50):
        scores, truth = random_instance(rng)
        curve = sweep(scores, truth, build_grid(scores))
        for kind, target in (("mcp", rng.uniform(0, 0.5)), ("mcl", rng.uniform(0, 100))):
            sel = select_threshold(curve, kind, target)
            if sel.feasible:
                achieved = sel.achieved.mcp if kind == "mcp" else sel.achieved.mcl
                assert achieved <= target


def test_select_tie_breaks_prefer_larger_metric_then_smaller_t():
    curve = make_curve(
        thresholds=[1.0, 2.0, 3.0, np.inf],
        mcp_vals=[0.10, 0.20, 0.20, 0.0],
        pa_vals=[0.75, 0.75, 0.75, 0.0],
        n=4,
    )
    sel = select_threshold(curve, "mcp", 0.25)
    # same pa everywhere finite: pick the largest mcp below target, then smallest t
    assert sel.t_star == 2.0


def test_apply_threshold_examples():
    scores, _ = gap_engineered_scores()
    all_out = apply_threshold(scores, np.inf)
    np.testing.assert_array_equal(all_out.labels, [0, 0, 0, 0])
    none_out = apply_threshold(scores, 0.0)
    np.testing.assert_array_equal(none_out.labels, [1, 1, 1, 1])
    two = apply_threshold(np.array([[0.0, -5.0], [0.0, -1.0]]), 2.0)
    np.testing.assert_array_equal(two.labels, [1, 0])
    np.testing.assert_array_equal(two.gaps, [5.0, 1.0])


def test_apply_threshold_invariant_labels_zero_iff_gap_below():
    rng = np.random.default_rng(37)
    scores, _ = random_instance(rng)
    t = float(rng.uniform(0, 3))
    res = apply_threshold(scores, t)
    _, gaps = map_labels_and_gaps(scores)
    np.testing.assert_array_equal(res.labels == 0, gaps < t)


def test_apply_threshold_rejects_bad_t():
    with pytest.raises(CalibrationError):
        apply_threshold(np.zeros((1, 2)), -1.0)
    with pytest.raises(CalibrationError):
        apply_threshold(np.zeros((1, 2)), math.nan)


def test_curve_validation_catches_inconsistent_pa():
    with pytest.raises(CalibrationError, match="pa must equal"):
        CalibrationCurve(
            thresholds=np.array([1e-12, np.inf]),
            mcp=np.zeros(2),
            pa=np.array([0.9, 0.0]),
            n_assigned=np.array([4, 0]),
            mcl=np.zeros(2),
            ae=np.zeros(2),
            n=4,
        )


def test_curve_csv_round_trip(tmp_path):
    scores, truth = gap_engineered_scores()
    curve = sweep(scores, truth, build_grid(scores))
    curve.to_csv(tmp_path / "curve.csv")
    text = (tmp_path / "curve.csv").read_text()
    assert text.splitlines()[0] == "t,mcp,pa,n_assigned,mcl,ae"
    assert text.splitlines()[-1].startswith("inf,")
    back = CalibrationCurve.from_csv(tmp_path / "curve.csv", n=curve.n)
    np.testing.assert_array_equal(back.thresholds, curve.thresholds)
    np.testing.assert_array_equal(back.mcl, curve.mcl)


def test_selection_json_round_trip(tmp_path):
    scores, truth = gap_engineered_scores()
    curve = sweep(scores, truth, build_grid(scores))
    sel = select_threshold(curve, "mcp", 0.3)
    sel.save(tmp_path / "sel.json")
    back = sel.load(tmp_path / "sel.json")
    assert back == sel


def test_scores_with_nan_rejected():
    with pytest.raises(ModelError, match="NaN"):
        sweep(np.array([[np.nan, 0.0]]), [1], np.array([1e-12, np.inf]))
