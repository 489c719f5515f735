import numpy as np
import pytest
from oracles import se_kernel

from uqml import data, gpr, sngp
from uqml.kernels import KernelSpec
from uqml.nnet import Dense, Network, NetworkSpec, ResidualBlock, ScalarOutput, TrainConfig, lipschitz_bound, resnet_spec
from uqml.numerics import make_rng


def identity_extractor():
    spec = NetworkSpec(1, (ResidualBlock(1, "identity", gamma=10.0), ScalarOutput()))
    return Network(spec, np.zeros(Network.init(spec, 0).n_params))


class TestRandomFeatures:
    def test_zero_projection(self):
        head = sngp.make_rff_head(8, 2, 1.0, 1.5, 0.1, 0)
        head = sngp.RffHead(np.zeros((8, 2)), np.zeros(8), head.beta, head.precision, 1.5, 1.0, 0.1)
        np.testing.assert_allclose(sngp.rff_features(head, np.ones((3, 2))), 1.5 * np.sqrt(2 / 8))

    def test_bounded(self):
        head = sngp.make_rff_head(64, 3, 0.7, 2.0, 0.1, 1)
        phi = sngp.rff_features(head, make_rng(0).standard_normal((50, 3)))
        assert np.abs(phi).max() <= 2.0 * np.sqrt(2 / 64)

    def test_approximates_se_kernel(self):
        head = sngp.make_rff_head(4096, 2, 0.8, 1.0, 0.1, 2)
        A = make_rng(1).standard_normal((20, 2))
        B = make_rng(2).standard_normal((20, 2))
        approx = np.sum(sngp.rff_features(head, A) * sngp.rff_features(head, B), axis=1)
        exact = np.diag(se_kernel(A, B, 0.8, 1.0))
        np.testing.assert_allclose(approx, exact, atol=0.05)

    def test_seeded(self):
        a = sngp.make_rff_head(16, 2, 1.0, 1.0, 0.1, 5)
        b = sngp.make_rff_head(16, 2, 1.0, 1.0, 0.1, 5)
        np.testing.assert_array_equal(a.omega, b.omega)
        np.testing.assert_array_equal(a.phase, b.phase)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sngp.rff_features(sngp.make_rff_head(4, 2, 1.0, 1.0, 0.1, 0), np.zeros((1, 3)))


@pytest.fixture(scope="module")
def trained():
    ds = data.gen_toy_1d(40, (-3, 3), seed=1)
    spec = resnet_spec(1, width=16, blocks=2, output="scalar", gamma=0.9)
    cfg = TrainConfig(lr=3e-3, epochs=20, seed=2)
    return ds, spec, cfg, sngp.sngp_fit(spec, ds.X, ds.y, m=256, config=cfg)


class TestFit:
    def test_no_data_is_prior(self):
        m = sngp.sngp_fit(identity_extractor(), np.zeros((0, 1)), np.zeros(0), gamma=None, m=64)
        np.testing.assert_array_equal(m.head.precision, np.eye(64))
        x = np.array([[0.3]])
        phi = sngp.rff_features(m.head, x)[0]
        p = sngp.sngp_predict(m, x)
        assert p.variance_epistemic[0] == pytest.approx(phi @ phi, rel=1e-12)

    def test_identity_extractor_matches_gpr(self):
        ds = data.gen_toy_1d(20, (-4, 4), seed=0)
        xs = np.linspace(-4, 4, 81)[:, None]
        m = sngp.sngp_fit(identity_extractor(), ds.X, ds.y, gamma=None, m=4096, config=TrainConfig(epochs=0), noise_std=0.1)
        p = sngp.sngp_predict(m, xs)
        q = gpr.predict(gpr.fit(ds.X, ds.y, KernelSpec.squared_exponential(1.0, 1.0), 0.1, optimize=False), xs)
        np.testing.assert_allclose(p.mean, q.mean, atol=0.05)
        np.testing.assert_allclose(p.variance_epistemic, q.variance_epistemic, atol=0.1)

    def test_deterministic(self, trained):
        ds, spec, cfg, m = trained
        m2 = sngp.sngp_fit(spec, ds.X, ds.y, m=256, config=cfg)
        np.testing.assert_array_equal(m.network.theta, m2.network.theta)
        np.testing.assert_array_equal(m.head.beta, m2.head.beta)

    def test_distance_awareness(self, trained):
        ds, _, _, m = trained
        near = sngp.sngp_predict(m, ds.X[:1])
        far = sngp.sngp_predict(m, [[60.0]])
        assert far.variance_total[0] > near.variance_total[0]
        assert np.all(sngp.sngp_predict(m, np.linspace(-50, 50, 101)[:, None]).variance_epistemic >= 0)

    def test_lipschitz_upper_bound(self, trained):
        ds, _, _, m = trained
        L = lipschitz_bound(m.network)
        rng = make_rng(3)
        a = rng.uniform(-3, 3, (1000, 1))
        b = rng.uniform(-3, 3, (1000, 1))
        ratio = np.linalg.norm(m.network.features(a) - m.network.features(b), axis=1) / np.abs(a - b)[:, 0]
        assert ratio.max() <= L * (1 + 1e-9)

    def test_precision_permutation_invariant(self, trained):
        ds, _, _, m = trained
        perm = make_rng(4).permutation(len(ds.y))
        cfg = TrainConfig(epochs=0, seed=2)
        m1 = sngp.sngp_fit(m.network, ds.X, ds.y, gamma=None, m=256, config=cfg)
        m2 = sngp.sngp_fit(m.network, ds.X[perm], ds.y[perm], gamma=None, m=256, config=cfg)
        scale = np.abs(m1.head.precision).max()
        np.testing.assert_allclose(m2.head.precision, m1.head.precision, rtol=0, atol=1e-12 * scale * len(ds.y))

    def test_needs_residual_block(self):
        with pytest.raises(ValueError):
            sngp.sngp_fit(NetworkSpec(1, (Dense(4), ScalarOutput())), np.zeros((3, 1)), np.zeros(3), gamma=None)

    def test_save_load(self, tmp_path, trained):
        ds, _, _, m = trained
        m.save(tmp_path)
        m2 = sngp.SngpModel.load(tmp_path)
        a, b = sngp.sngp_predict(m, ds.X), sngp.sngp_predict(m2, ds.X)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.variance_total, b.variance_total)


class TestDnnGpr:
    def test_identity_reduces_to_gpr(self):
        ds = data.gen_toy_1d(10, seed=3)
        net = identity_extractor()
        k = KernelSpec.squared_exponential(1.2, 0.9)
        a = sngp.dnn_gpr_predict(sngp.dnn_gpr_fit(net, ds.X, ds.y, k, 0.1, optimize=False), ds.X)
        b = gpr.predict(gpr.fit(ds.X, ds.y, k, 0.1, optimize=False), ds.X)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.variance_total, b.variance_total)

    def test_random_extractor_matches_precomputed_features(self):
        ds = data.gen_toy_1d(10, seed=4)
        net = Network.init(resnet_spec(1, width=3, blocks=1, output="scalar"), 5)
        k = KernelSpec.ard([1.0, 0.5, 2.0])
        xs = np.linspace(-5, 5, 7)[:, None]
        a = sngp.dnn_gpr_predict(sngp.dnn_gpr_fit(net, ds.X, ds.y, k, 0.2, optimize=False), xs)
        H, Hs = net.features(ds.X), net.features(xs)
        b = gpr.predict(gpr.fit(H, ds.y, k, 0.2, optimize=False), Hs)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
        np.testing.assert_allclose(a.variance_total, b.variance_total, atol=1e-10)

    def test_constant_extractor_collapses(self):
        spec = NetworkSpec(1, (Dense(2, "identity"), ResidualBlock(2, "identity"), ScalarOutput()))
        net = Network(spec, np.zeros(Network.init(spec, 0).n_params))
        ds = data.gen_toy_1d(6, seed=6)
        m = sngp.dnn_gpr_fit(net, ds.X, ds.y, KernelSpec.squared_exponential(), 0.1, optimize=False)
        p = sngp.dnn_gpr_predict(m, [[-4.0], [0.0], [100.0]])
        assert np.ptp(p.mean) == 0.0
        assert np.ptp(p.variance_total) == 0.0
