import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from uqml import acquisition as acq
from uqml import gpr
from uqml.kernels import KernelSpec
from uqml.numerics import make_rng


def eff_by_quadrature(mu, sd, e, tau):
    f = lambda y: (tau - abs(e - y)) * stats.norm.pdf(y, mu, sd)
    return integrate.quad(f, e - tau, e + tau, points=[e], epsabs=1e-13, epsrel=1e-12)[0]


def quartic(x):
    return x**4 - 3 * x**2 + x


class TestEff:
    def test_reference_point(self):
        assert acq.eff(0.0, 1.0, 0.0, 2.0) == pytest.approx(eff_by_quadrature(0.0, 1.0, 0.0, 2.0), abs=1e-8)

    def test_random_sweep(self):
        rng = make_rng(0)
        for _ in range(100):
            mu, e = rng.uniform(-3, 3, 2)
            sd = rng.uniform(0.05, 3.0)
            tau = rng.uniform(0.05, 4.0)
            assert acq.eff(mu, sd, e, tau) == pytest.approx(eff_by_quadrature(mu, sd, e, tau), abs=1e-8)

    def test_zero_std_limits(self):
        assert acq.eff(3.0, 0.0, 0.0, 1.0) == 0.0
        assert acq.eff(0.5, 0.0, 0.5, 1.0) == 1.0

    def test_default_tau_is_two_std(self):
        np.testing.assert_allclose(acq.eff([0.3, 1.0], [0.5, 2.0], 0.0), acq.eff([0.3, 1.0], [0.5, 2.0], 0.0, np.array([1.0, 4.0])))


class TestU:
    def test_values(self):
        assert acq.u_function(1.0, 1.0, 1.0) == 0.0
        assert acq.u_function(1.0, 0.5, 0.0) == 2.0

    def test_zero_std(self):
        val, flag = acq.u_function([1.0, 1.0], [0.0, 1.0], 0.0, return_flag=True)
        assert np.isinf(val[0]) and flag[0] and not flag[1]

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(0.1, 10))
    def test_scale_invariance(self, d, sd, k):
        assert acq.u_function(k * d, k * sd, 0.0) == pytest.approx(acq.u_function(d, sd, 0.0), rel=1e-12)


class TestEi:
    def test_values(self):
        assert acq.ei(0.0, 1.0, 0.0) == pytest.approx(0.398942, abs=1e-6)
        assert acq.ei(0.0, 1.0, 1.0) == pytest.approx(1.083316, abs=1e-6)
        assert acq.ei(2.0, 0.0, 1.0) == 0.0
        assert acq.ei(0.0, 0.0, 1.0) == 1.0

    def test_matches_integral(self):
        rng = make_rng(1)
        for _ in range(20):
            mu, fmin = rng.uniform(-2, 2, 2)
            sd = rng.uniform(0.1, 2)
            ref = integrate.quad(lambda y: (fmin - y) * stats.norm.pdf(y, mu, sd), -np.inf, fmin)[0]
            assert acq.ei(mu, sd, fmin) == pytest.approx(ref, abs=1e-9)

    def test_increasing_in_std(self):
        sd = np.linspace(0.01, 5, 200)
        d = np.diff(acq.ei(0.0, sd, 0.5))
        assert np.all(d >= 0)
        # below sigma ~ 0.1 the value equals f_min - mu to machine precision
        assert np.all(d[sd[1:] > 0.2] > 0)

    def test_negative_std_rejected(self):
        with pytest.raises(ValueError):
            acq.ei(0.0, -1.0, 0.0)

    def test_argmax_invariant_to_affine_scaling(self):
        rng = make_rng(2)
        mu, sd = rng.standard_normal(50), rng.uniform(0.1, 1, 50)
        a = acq.ei(mu, sd, 0.0)
        assert np.argmax(a) == np.argmax(3.0 * a + 7.0)


class TestRefine:
    def test_zero_budget(self):
        m = gpr.fit([[0.0], [1.0]], [0.0, 1.0], KernelSpec.squared_exponential(), 0.1, optimize=False)
        m2, tr = acq.refine(m, lambda x: 0.0, acq.AcquisitionSpec("ei"), np.linspace(0, 1, 5), 0)
        assert m2 is m
        assert tr.iteration.size == 0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_ei_finds_quartic_minimum(self, seed):
        cand = np.linspace(-2, 2, 401)[:, None]
        true_min = quartic(cand).min()
        X0 = make_rng(seed).uniform(-2, 2, (3, 1))
        m = gpr.fit(
            X0, quartic(X0[:, 0]), KernelSpec.squared_exponential(1.0, 1.0), 1e-6,
            optimize_noise=False, restarts=3, rng=make_rng(seed, 5),
        )
        _, tr = acq.refine(m, lambda x: quartic(x[0]), acq.AcquisitionSpec("ei"), cand, 15, rng=make_rng(seed, 6), restarts=3)
        best = min(tr.observed.min(), quartic(X0).min())
        assert best - true_min < 1e-2

    def test_u_points_inside_band(self):
        cand = np.linspace(-3, 3, 121)[:, None]
        X0 = np.array([[-2.5], [0.3], [2.0]])
        m = gpr.fit(X0, np.sin(X0[:, 0]), KernelSpec.squared_exponential(1.0, 1.0), 1e-3, optimize=False)
        _, tr = acq.refine(m, lambda x: np.sin(x[0]), acq.AcquisitionSpec("u", threshold=0.0), cand, 8, optimize=False)
        assert np.all(tr.acquisition < 2.0)

    def test_ties_pick_lowest_index(self):
        m = gpr.fit([[100.0]], [0.0], KernelSpec.squared_exponential(), 0.1, optimize=False)
        _, tr = acq.refine(m, lambda x: 1.0, acq.AcquisitionSpec("eff"), np.array([[0.0], [10.0], [20.0]]), 1, optimize=False)
        assert tr.candidate_index[0] == 0

    def test_oracle_error_carries_iteration(self):
        m = gpr.fit([[0.0]], [0.0], KernelSpec.squared_exponential(), 0.1, optimize=False)
        calls = []

        def oracle(x):
            calls.append(x)
            if len(calls) == 2:
                raise RuntimeError("boom")
            return 0.0

        with pytest.raises(acq.OracleError) as err:
            acq.refine(m, oracle, acq.AcquisitionSpec("ei"), np.linspace(-1, 1, 9), 3, optimize=False)
        assert err.value.iteration == 2

    def test_trace_columns(self):
        m = gpr.fit([[0.0]], [0.0], KernelSpec.squared_exponential(), 0.1, optimize=False)
        _, tr = acq.refine(m, lambda x: x[0] ** 2, acq.AcquisitionSpec("u"), np.linspace(-1, 1, 9), 2, optimize=False)
        assert list(tr.to_columns()) == ["iteration", "x1", "acquisition", "oracle"]

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            acq.AcquisitionSpec("pi")
        with pytest.raises(ValueError):
            acq.AcquisitionSpec("eff", tau=0.0)
