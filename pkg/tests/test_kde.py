import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from toplabel_calib.data import TopLabelView
from toplabel_calib.errors import CalibrationError, UncalibratableError
from toplabel_calib.kde import (KdeCalibrator, KernelDensity, bandwidth_schedule,
                                count_sign_changes, count_slope_sign_changes, evaluation_grid,
                                fit_kde, loo_objective, select_bandwidth, select_bandwidth_loo)
from toplabel_calib.losses import loss_nll


def random_view(seed, n=300, lo=0.3):
    rng = np.random.default_rng(seed)
    s = rng.uniform(lo, 1.0, n)
    tp = rng.random(n) < s
    return TopLabelView(0, s[tp], s[~tp])


def scipy_density(points, b, s):
    # gaussian_kde scales its bandwidth by the sample std; undo that
    kde = stats.gaussian_kde(points, bw_method=b / np.std(points, ddof=1))
    return kde(s)


@pytest.mark.parametrize("b", [0.01, 0.05, 0.3])
def test_density_matches_scipy(b):
    pts = np.random.default_rng(0).uniform(0, 1, 150)
    s = np.linspace(-0.2, 1.2, 57)
    assert_allclose(KernelDensity(pts, b)(s), scipy_density(pts, b, s), rtol=1e-10, atol=1e-300)


def test_ratio_matches_normal_pdf_loop():
    v = random_view(1, n=60)
    cal = fit_kde(v, "manual", bandwidth=0.07)
    for q in (0.31, 0.5, 0.77, 0.99):
        tp = sum(stats.norm.pdf(q, x, 0.07) for x in v.tp_scores)
        fp = sum(stats.norm.pdf(q, x, 0.07) for x in v.fp_scores)
        assert cal(q)[0] == pytest.approx(tp / (tp + fp), rel=1e-12)


def test_pooled_density_is_count_weighted_mix():
    v = random_view(2)
    cal = fit_kde(v, "manual", bandwidth=0.04)
    s = np.random.default_rng(5).uniform(0, 1, 1000)
    mix = (v.n_tp * scipy_density(v.tp_scores, 0.04, s) + v.n_fp * scipy_density(v.fp_scores, 0.04, s)) \
        / v.n_positive
    assert_allclose(cal.pooled_density(s), mix, rtol=1e-10)


@pytest.mark.parametrize("values, expected", [
    ([0, 1, 2, 3], 0),
    ([3, 2, 1], 0),
    ([0, 1, 0], 1),
    ([0, 1, 2, 1, 2], 2),
    ([0, 1, 1, 1, 2], 0),
    ([0, 1, 1, 0, 0, 1], 2),
    ([5, 5, 5], 0),
])
def test_count_sign_changes(values, expected):
    assert count_sign_changes(values) == expected


def test_tiny_steps_count_as_flat():
    assert count_sign_changes([0, 1, 1 - 1e-14, 2]) == 0
    assert count_sign_changes([0, 1, 1 - 1e-9, 2]) == 2


def test_schedule_shape():
    sch = bandwidth_schedule()
    assert sch[0] == pytest.approx(1e-3)
    assert_allclose(sch[1:] / sch[:-1], 1.05)
    assert sch[-1] <= 4.0 < sch[-1] * 1.05
    assert_allclose(bandwidth_schedule((0.0, 10.0)), 10 * sch)


def brute_bandwidth(view, n):
    s, _ = view.labeled_scores()
    grid = evaluation_grid(s[0], s[-1])
    for b in bandwidth_schedule():
        cal = KdeCalibrator(0, view.tp_scores, view.fp_scores, b)
        if count_slope_sign_changes(cal, grid) <= n:
            return b
    return None


@pytest.mark.parametrize("n", [0, 2])
@pytest.mark.parametrize("seed", [0, 1])
def test_bandwidth_search_matches_public_path(seed, n):
    v = random_view(seed, n=200)
    b = select_bandwidth(v, n)
    assert b == brute_bandwidth(v, n)
    cal = fit_kde(v, "mon" if n == 0 else f"mon{n}")
    assert cal.bandwidth == b and cal.rule == ("mon" if n == 0 else f"mon{n}")
    assert count_slope_sign_changes(cal) <= n
    smaller = KdeCalibrator(0, v.tp_scores, v.fp_scores, b / 1.05)
    assert count_slope_sign_changes(smaller, cal.grid()) > n


def test_bandwidth_ordering():
    for seed in range(4):
        v = random_view(seed, n=250)
        b0, b2, b4 = (select_bandwidth(v, n) for n in (0, 2, 4))
        assert b0 >= b2 >= b4


def test_single_class_views():
    v = TopLabelView(0, [0.5, 0.7, 0.9], [])
    cal = fit_kde(v, "mon")
    assert_array_equal(cal(np.linspace(0, 1, 9)), 1.0)
    assert cal.bandwidth == bandwidth_schedule()[0]
    assert any("FP-free" in n for n in cal.notes)
    with pytest.raises(UncalibratableError):
        fit_kde(TopLabelView(0, [], [0.4, 0.6]), "mon")


def test_far_from_data_falls_back_to_precision():
    cal = KdeCalibrator(0, [0.5, 0.51], [0.52], 1e-3)
    assert cal(0.0)[0] == pytest.approx(2 / 3)
    assert cal.flags([0.0, 0.5]).tolist() == [True, False]


def brute_loo(view, b):
    s, tp = view.labeled_scores()
    total = 0.0
    for i in range(len(s)):
        keep = np.arange(len(s)) != i
        tps, fps = s[keep & tp], s[keep & ~tp]
        a = stats.norm.pdf(s[i], tps, b).sum()
        c = stats.norm.pdf(s[i], fps, b).sum()
        p = a / (a + c) if a + c > 0 else len(tps) / (len(tps) + len(fps))
        total += loss_nll([p], [tp[i]])
    return total


def test_loo_objective_matches_brute_force():
    v = random_view(4, n=40)
    for b in (0.005, 0.03, 0.2):
        assert loo_objective(v, b) == pytest.approx(brute_loo(v, b), rel=1e-10)


def test_loo_selection_is_scheduled_argmin():
    v = random_view(6, n=40)
    sch = np.geomspace(0.01, 0.5, 15)
    b = select_bandwidth_loo(v, sch)
    assert b == sch[int(np.argmin([brute_loo(v, x) for x in sch]))]
    with pytest.raises(UncalibratableError):
        select_bandwidth_loo(TopLabelView(0, [0.5, 0.6], [0.4]))


def test_round_trip_and_count_check():
    cal = fit_kde(random_view(7, n=80), "mon2")
    d = cal.to_dict()
    back = KdeCalibrator.from_dict(d)
    s = np.linspace(0, 1, 64)
    assert_array_equal(back(s), cal(s))
    d["n_tp"] += 1
    with pytest.raises(CalibrationError):
        KdeCalibrator.from_dict(d)


def test_unknown_rule():
    with pytest.raises(ValueError):
        fit_kde(random_view(0, n=20), "silverman")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_adding_true_positives_never_lowers_confidence(seed, extra):
    v = random_view(seed, n=50)
    grid = evaluation_grid(0.0, 1.0)
    before = KdeCalibrator(0, v.tp_scores, v.fp_scores, 0.05)(grid)
    more = v.with_extra_tp(extra)
    after = KdeCalibrator(0, more.tp_scores, more.fp_scores, 0.05)(grid)
    assert np.all(after >= before)


def test_far_true_positive_does_not_lower_confidence_by_an_ulp():
    v = random_view(0, n=50)
    grid = evaluation_grid(0.0, 1.0)
    before = KdeCalibrator(0, v.tp_scores, v.fp_scores, 0.05)(grid)
    more = v.with_extra_tp([0.0])
    after = KdeCalibrator(0, more.tp_scores, more.fp_scores, 0.05)(grid)
    assert np.all(after >= before)
