import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from uqml import evaluation as ev
from uqml import GaussianPrediction
from uqml.numerics import make_rng


def calibrated_sample(n, seed):
    rng = make_rng(seed)
    mu = rng.standard_normal(n)
    var = rng.uniform(0.2, 3.0, n)
    y = mu + np.sqrt(var) * rng.standard_normal(n)
    return GaussianPrediction(mu, var, np.zeros(n)), y


def coverage_by_interval(mu, var, y, levels):
    """Two-sided coverage using scipy's interval construction."""
    out = []
    for c in levels:
        lo, hi = stats.norm.interval(c, loc=mu, scale=np.sqrt(var))
        out.append(np.mean((y >= lo) & (y <= hi)))
    return np.array(out)


def area_by_dense_grid(f, n=2_000_001):
    t = np.linspace(0.0, 1.0, n)
    return float(np.trapezoid(np.abs(f(t)), t))


class TestRegressionCalibration:
    def test_perfectly_calibrated(self):
        p, y = calibrated_sample(10_000, 0)
        curve = ev.regression_calibration(p, y)
        assert np.max(np.abs(curve.observed - curve.levels)) < 0.03

    def test_matches_interval_construction(self):
        p, y = calibrated_sample(2000, 1)
        levels = np.linspace(0.05, 0.95, 10)
        curve = ev.regression_calibration(p, y, levels)
        np.testing.assert_allclose(curve.observed, coverage_by_interval(p.mean, p.variance_total, y, levels))

    def test_full_level_covers_everything(self):
        p, y = calibrated_sample(100, 2)
        assert ev.regression_calibration(p, y).observed[-1] == 1.0
        assert ev.regression_calibration(p, y, sided="one_sided").observed[-1] == 1.0

    def test_one_sided(self):
        p, y = calibrated_sample(1000, 3)
        curve = ev.regression_calibration(p, y, sided="one_sided")
        z = (y - p.mean) / np.sqrt(p.variance_total)
        np.testing.assert_allclose(curve.observed[1:-1], [np.mean(z <= stats.norm.ppf(c)) for c in curve.levels[1:-1]])

    def test_zero_variance_off_mean_is_outside(self):
        curve = ev.regression_calibration([0.0, 0.0], [1.0, 0.0], variance=[0.0, 1.0])
        np.testing.assert_array_equal(curve.counts[:-1], 1)
        assert curve.counts[-1] == 2

    def test_invalid_levels(self):
        with pytest.raises(ValueError):
            ev.regression_calibration([0.0], [0.0], levels=[0.5, 0.2], variance=[1.0])

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 5.0), st.floats(-3.0, 3.0))
    def test_invariant_to_affine_rescaling(self, a, b):
        p, y = calibrated_sample(200, 4)
        base = ev.regression_calibration(p, y)
        moved = ev.regression_calibration(a * p.mean + b, a * y + b, variance=a * a * p.variance_total)
        np.testing.assert_allclose(moved.observed, base.observed, atol=1.0 / 200 + 1e-12)


class TestClassificationCalibration:
    def test_bernoulli(self):
        rng = make_rng(5)
        labels = (rng.uniform(size=10_000) < 0.95).astype(float)
        curve = ev.classification_calibration(np.full(10_000, 0.95), labels)
        assert curve.observed[-1] == pytest.approx(0.95, abs=0.01)

    def test_extremes_and_empty_bins(self):
        labels = np.array([0, 1, 0, 1.0])
        curve = ev.classification_calibration(labels, labels)
        assert curve.observed[0] == 0.0 and curve.observed[-1] == 1.0
        assert np.isnan(curve.observed[1:-1]).all()
        assert np.all(curve.weights()[1:-1] == 0)

    def test_label_check(self):
        with pytest.raises(ValueError):
            ev.classification_calibration([0.5], [2])


class TestScalarMetrics:
    def test_ece_perfect(self):
        curve = ev.CalibrationCurve(np.linspace(0, 1, 11), np.linspace(0, 1, 11), np.zeros(11), "two_sided", 10)
        assert ev.ece(curve) == 0.0

    def test_ece_hand_sum(self):
        curve = ev.CalibrationCurve(np.array([0, 0.5, 1]), np.array([0, 0.6, 1]), np.zeros(3), "two_sided", 10)
        assert ev.ece(curve) == pytest.approx(0.1 / 3, abs=1e-15)

    def test_ece_bounded_by_max_gap(self):
        p, y = calibrated_sample(300, 6)
        p = GaussianPrediction(p.mean, 0.3 * p.variance_total, np.zeros(300))
        curve = ev.regression_calibration(p, y)
        assert 0 <= ev.ece(curve) <= np.max(np.abs(curve.observed - curve.levels))

    def test_area_triangle(self):
        c = np.linspace(0, 1, 11)
        curve = ev.CalibrationCurve(c, np.ones(11), np.zeros(11), "two_sided", 1)
        assert ev.miscalibration_area(curve) == pytest.approx(0.5)

    def test_area_no_cancellation(self):
        c = np.linspace(0, 1, 5)
        obs = np.array([0.0, 0.45, 0.5, 0.55, 1.0])
        curve = ev.CalibrationCurve(c, obs, np.zeros(5), "two_sided", 1)
        ref = area_by_dense_grid(lambda t: np.interp(t, c, obs) - t)
        assert ev.miscalibration_area(curve) == pytest.approx(ref, abs=1e-9)
        assert ev.miscalibration_area(curve) > 0

    def test_area_random_curve_against_grid(self):
        c = np.linspace(0, 1, 11)
        obs = np.sort(make_rng(7).uniform(size=11))
        curve = ev.CalibrationCurve(c, obs, np.zeros(11), "two_sided", 1)
        assert ev.miscalibration_area(curve) == pytest.approx(area_by_dense_grid(lambda t: np.interp(t, c, obs) - t), abs=1e-9)

    def test_u_pool_calibrated(self):
        p, y = calibrated_sample(10_000, 8)
        assert ev.u_pool(p, y)[1] < 0.02

    def test_u_pool_at_means(self):
        u, area = ev.u_pool(np.zeros(5), np.zeros(5), variance=np.ones(5))
        np.testing.assert_array_equal(u, 0.5)
        assert area == pytest.approx(0.25)

    def test_u_pool_area_against_grid(self):
        p, y = calibrated_sample(25, 9)
        u, area = ev.u_pool(p, y)
        s = np.sort(u)
        ref = area_by_dense_grid(lambda t: np.searchsorted(s, t, side="right") / s.size - t)
        assert area == pytest.approx(ref, abs=1e-5)

    def test_single_sample(self):
        u, _ = ev.u_pool([1.0], [1.0], variance=[2.0])
        np.testing.assert_array_equal(u, [0.5])

    def test_nll(self):
        assert ev.nll([1.0, 2.0], [1.0, 2.0], variance=[1.0, 1.0]) == 0.0
        assert ev.nll([1.0], [1.0], True, variance=[1.0]) == pytest.approx(0.918939, abs=1e-6)
        assert ev.nll([1.0], [1.0], True, variance=[1.0]) == pytest.approx(-stats.norm.logpdf(0.0), abs=1e-15)

    def test_nll_matches_logpdf(self):
        p, y = calibrated_sample(50, 10)
        ref = -np.mean(stats.norm.logpdf(y, p.mean, np.sqrt(p.variance_total)))
        assert ev.nll(p, y, include_constant=True) == pytest.approx(ref, abs=1e-12)

    def test_overconfidence_penalized(self):
        rng = make_rng(11)
        r = rng.uniform(1.0, 2.0, 100)
        var = rng.uniform(0.1, 0.9, 100) * r * r
        assert ev.nll(np.zeros(100), r, variance=var / 2) > ev.nll(np.zeros(100), r, variance=var)

    def test_rmse(self):
        assert ev.rmse(np.array([0.0, 0.0]), [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))


def sparsification_by_loop(unc, err, fractions):
    """Remove the top-uncertainty samples one fraction at a time."""
    err = np.abs(err)
    order = np.argsort(-unc, kind="stable")
    out = []
    for f in fractions:
        k = min(int(np.rint(f * err.size)), err.size - 1)
        keep = np.ones(err.size, bool)
        keep[order[:k]] = False
        out.append(np.sqrt(np.mean(err[keep] ** 2)))
    return np.array(out)


class TestSparsification:
    def test_oracle_ranking_gives_zero_ause(self):
        err = make_rng(12).standard_normal(500)
        rep = ev.sparsification(np.abs(err), err)
        assert rep.ause == 0.0

    def test_curve_against_loop(self):
        rng = make_rng(13)
        err = rng.standard_normal(137)
        unc = np.abs(err) + rng.uniform(0, 1, 137)
        rep = ev.sparsification(unc, err)
        np.testing.assert_allclose(rep.curve, sparsification_by_loop(unc, err, rep.fractions), rtol=1e-12)

    def test_independent_uncertainty(self):
        rng = make_rng(14)
        err = rng.standard_normal(10_000)
        rep = ev.sparsification(rng.uniform(size=10_000), err)
        assert abs(rep.aurg) < 0.05 * rep.curve[0]

    def test_constant_errors(self):
        rep = ev.sparsification(make_rng(15).uniform(size=50), np.full(50, 0.3))
        np.testing.assert_allclose(rep.curve, 0.3)
        assert rep.ause == pytest.approx(0.0, abs=1e-15)
        assert rep.aurg == pytest.approx(0.0, abs=1e-15)

    def test_monotone_transform_invariance(self):
        rng = make_rng(16)
        err = rng.standard_normal(200)
        unc = rng.uniform(0.1, 2.0, 200)
        a = ev.sparsification(unc, err)
        b = ev.sparsification(np.exp(3 * unc), err)
        np.testing.assert_array_equal(a.curve, b.curve)

    def test_fractions_and_lengths(self):
        rep = ev.sparsification(np.arange(20.0), np.arange(20.0))
        assert np.all(np.diff(rep.fractions) > 0) and rep.fractions[-1] < 1
        assert rep.curve.shape == rep.oracle.shape == rep.random.shape == rep.fractions.shape

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            ev.sparsification(np.ones(5), np.ones(5))


class TestRecalibration:
    def test_calibrated_is_near_identity(self):
        p, y = calibrated_sample(2000, 17)
        rmap = ev.isotonic_recalibrate(p, y)
        grid = np.linspace(0, 1, 101)
        np.testing.assert_allclose(rmap(grid), grid, atol=0.05)
        u = ev.pit_values(p, y)
        before = ev.ece(ev.regression_calibration(p, y))
        after = ev.ece(ev.regression_calibration(None, None, u=rmap(u)))
        assert abs(after - before) < 0.01

    def test_overconfident_is_improved(self):
        rng = make_rng(18)
        mu = rng.standard_normal(1000)
        y = mu + 2.0 * rng.standard_normal(1000)
        p = GaussianPrediction(mu, np.ones(1000), np.zeros(1000))
        rmap = ev.isotonic_recalibrate(p, y)
        before = ev.ece(ev.regression_calibration(p, y))
        after = ev.ece(ev.regression_calibration(None, None, u=rmap(ev.pit_values(p, y))))
        assert after < before

    def test_monotone_and_anchored(self):
        rng = make_rng(19)
        mu = rng.standard_normal(300)
        p = GaussianPrediction(mu, np.full(300, 0.5), np.zeros(300))
        rmap = ev.isotonic_recalibrate(p, mu + rng.standard_t(2, 300))
        vals = rmap(np.linspace(0, 1, 1001))
        assert np.all(np.diff(vals) >= 0)
        assert rmap(0.0) == 0.0 and rmap(1.0) == 1.0

    def test_interval_widens_for_overconfident(self):
        rng = make_rng(20)
        mu = np.zeros(2000)
        y = 2.0 * rng.standard_normal(2000)
        p = GaussianPrediction(mu, np.ones(2000), np.zeros(2000))
        rmap = ev.isotonic_recalibrate(p, y)
        lo, hi = ev.recalibrated_interval(rmap, p, 0.9)
        assert np.mean((y >= lo) & (y <= hi)) == pytest.approx(0.9, abs=0.03)

    def test_too_few(self):
        with pytest.raises(ValueError):
            ev.isotonic_recalibrate(np.zeros(10), np.zeros(10), variance=np.ones(10))

    def test_json(self):
        p, y = calibrated_sample(50, 21)
        rmap = ev.isotonic_recalibrate(p, y)
        again = ev.RecalibrationMap.from_dict(rmap.to_dict())
        np.testing.assert_array_equal(again.knots_y, rmap.knots_y)
