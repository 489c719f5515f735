import numpy as np
import pytest
from oracles import central_difference

from uqml import nnet
from uqml.nnet import (
    Dense,
    DivergenceError,
    Dropout,
    GaussianOutput,
    Network,
    NetworkSpec,
    ResidualBlock,
    ScalarOutput,
    SpectralDense,
    TrainConfig,
    forward,
    lipschitz_bound,
    loss_and_grad,
    resnet_spec,
    spectral_normalize,
    table2_spec,
    train,
)
from uqml.numerics import make_rng


def grad_rel_error(net, X, y, loss, mode="eval", seed=None):
    def rng():
        return None if seed is None else make_rng(seed)

    _, g = loss_and_grad(net, X, y, loss, mode, rng())
    fd = central_difference(lambda t: loss_and_grad(net.with_theta(t), X, y, loss, mode, rng())[0], net.theta)
    return np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)


def identity_dense():
    net = Network.init(NetworkSpec(1, (Dense(1, "identity"), ScalarOutput())), 0)
    net.param(0, "W")[:] = 1.0
    net.param(1, "W")[:] = 1.0
    return net


class TestForward:
    def test_identity_network(self):
        assert forward(identity_dense(), np.array([3.0])) == 3.0

    def test_gaussian_head_variance_floor(self):
        net = Network.init(NetworkSpec(2, (Dense(3, "tanh"), GaussianOutput())), 1)
        net.param(1, "W_var")[:] = 0.0
        net.param(1, "b_var")[:] = 0.0
        _, var = forward(net, np.ones((4, 2)))
        np.testing.assert_allclose(var, np.log(2.0) + 1e-6, rtol=1e-15)
        assert var[0] == pytest.approx(0.693148, abs=1e-6)

    @pytest.mark.parametrize("mode", ["train", "eval", "eval_with_dropout"])
    def test_zero_rate_dropout_is_identity(self, mode):
        with_drop = NetworkSpec(2, (Dense(5, "relu"), Dropout(0.0), Dense(4, "tanh"), ScalarOutput()))
        without = NetworkSpec(2, (Dense(5, "relu"), Dense(4, "tanh"), ScalarOutput()))
        a = Network.init(with_drop, 3)
        b = Network.init(without, 3)
        X = make_rng(0).standard_normal((6, 2))
        np.testing.assert_array_equal(a._forward(X, mode, make_rng(1))[0], b._forward(X, mode, None)[0])

    def test_dropout_inverted_scaling(self):
        net = Network.init(NetworkSpec(1, (Dropout(0.25), Dense(1, "identity"), ScalarOutput())), 0)
        net.param(1, "W")[:] = 1.0
        net.param(2, "W")[:] = 1.0
        out = np.array([net._forward(np.ones((1, 1)), "eval_with_dropout", make_rng(s))[0][0] for s in range(200)])
        assert set(np.round(out, 12)) <= {0.0, round(1 / 0.75, 12)}

    def test_dropout_needs_rng(self):
        net = Network.init(NetworkSpec(1, (Dense(2), Dropout(0.5), ScalarOutput())), 0)
        with pytest.raises(ValueError):
            net._forward(np.ones((1, 1)), "train", None)

    def test_residual_block_identity_when_zeroed(self):
        spec = NetworkSpec(3, (Dense(3, "tanh"), ResidualBlock(3, "relu"), ScalarOutput()))
        net = Network.init(spec, 2)
        X = make_rng(1).standard_normal((5, 3))
        h0 = np.tanh(X @ net.param(0, "W") + net.param(0, "b"))
        net.param(1, "W")[:] = 0.0
        net.param(1, "b")[:] = 0.0
        np.testing.assert_array_equal(net.features(X), h0)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NetworkSpec(2, (Dense(3),))
        with pytest.raises(ValueError):
            NetworkSpec(2, (Dense(3), ResidualBlock(4), ScalarOutput()))

    def test_presets(self):
        spec = table2_spec(4)
        assert [l.width for l in spec.layers[:-1]] == [100, 50, 50, 50, 50, 10]
        assert spec.output_kind == "GaussianOutput"
        r = resnet_spec(2, width=8, blocks=3, dropout_rate=0.1, gamma=0.9)
        assert sum(l.kind == "ResidualBlock" for l in r.layers) == 3
        assert all(l.gamma == 0.9 for l in r.layers if l.kind in ("SpectralDense", "ResidualBlock"))


class TestLosses:
    def test_nll_zero_case(self):
        net = Network.init(NetworkSpec(1, (Dense(2), GaussianOutput())), 0)
        for name in ("W_mean", "b_mean", "W_var", "b_var"):
            net.param(1, name)[:] = 0.0
        # softplus(b) + 1e-6 = 1 exactly when b = log(e^(1 - 1e-6) - 1)
        net.param(1, "b_var")[:] = np.log(np.expm1(1.0 - 1e-6))
        val, _ = loss_and_grad(net, np.zeros((1, 1)), [0.0], "nll")
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_mse_zero(self):
        assert loss_and_grad(identity_dense(), [[2.0]], [2.0], "mse")[0] == 0.0


LAYER_CASES = {
    "dense": lambda: NetworkSpec(3, (Dense(5, "tanh"), Dense(4, "relu"), ScalarOutput())),
    "spectral_dense": lambda: NetworkSpec(3, (SpectralDense(5, "tanh", 0.5), ScalarOutput())),
    "residual": lambda: NetworkSpec(3, (Dense(4, "tanh"), ResidualBlock(4, "tanh"), ScalarOutput())),
    "spectral_residual": lambda: NetworkSpec(
        3, (SpectralDense(4, "tanh", 0.7), ResidualBlock(4, "tanh", 0.7), ScalarOutput())
    ),
    "dropout": lambda: NetworkSpec(3, (Dense(6, "tanh"), Dropout(0.3), ScalarOutput())),
    "gaussian_output": lambda: NetworkSpec(3, (Dense(4, "tanh"), GaussianOutput())),
}


@pytest.mark.parametrize("case", sorted(LAYER_CASES))
@pytest.mark.parametrize("loss", ["mse", "nll"])
def test_gradients_match_finite_differences(case, loss):
    spec = LAYER_CASES[case]()
    if loss == "nll" and spec.output_kind != "GaussianOutput":
        spec = NetworkSpec(3, spec.layers[:-1] + (GaussianOutput(),))
    rng = make_rng(11)
    for i in range(5):
        net = Network.init(spec, i)
        spectral_normalize(net)
        X = rng.standard_normal((5, 3))
        y = rng.standard_normal(5)
        mode, seed = ("train", 100 + i) if spec.has_dropout else ("eval", None)
        assert grad_rel_error(net, X, y, loss, mode, seed) < 1e-4


class TestSpectralNorm:
    def test_diagonal(self):
        net = Network.init(NetworkSpec(2, (SpectralDense(2, "identity", 1.0), ScalarOutput())), 0)
        net.param(0, "W")[:] = np.diag([3.0, 1.0])
        spectral_normalize(net)
        np.testing.assert_allclose(net.effective_weight(0), np.diag([1.0, 1.0 / 3.0]), atol=1e-9)

    def test_under_bound_unchanged(self):
        net = Network.init(NetworkSpec(2, (SpectralDense(2, "identity", 1.0), ScalarOutput())), 0)
        net.param(0, "W")[:] = np.diag([0.5, 0.2])
        spectral_normalize(net)
        np.testing.assert_array_equal(net.effective_weight(0), np.diag([0.5, 0.2]))

    def test_random_against_svd(self):
        for seed in range(10):
            net = Network.init(NetworkSpec(6, (SpectralDense(8, "relu", 0.9), ScalarOutput())), seed)
            net.param(0, "W")[:] *= 5.0
            spectral_normalize(net)
            s = np.linalg.svd(net.effective_weight(0), compute_uv=False)[0]
            assert 0.9 * (1 - 1e-3) <= s <= 0.9 * (1 + 1e-3)

    def test_lipschitz_bound(self):
        net = Network.init(resnet_spec(2, width=6, blocks=2, output="scalar", gamma=0.5), 0)
        spectral_normalize(net)
        bound = lipschitz_bound(net)
        assert bound <= (0.5 * 1.5) ** 2 * (1 + 1e-3)
        rng = make_rng(3)
        for _ in range(50):
            a, b = rng.standard_normal((2, 1, 2))
            ratio = np.linalg.norm(net.features(a) - net.features(b)) / np.linalg.norm(a - b)
            assert ratio <= bound * (1 + 1e-9)


class TestTraining:
    def test_linear_fit(self):
        rng = make_rng(0)
        X = rng.uniform(-1, 1, (100, 1))
        y = 2.0 * X[:, 0]
        spec = NetworkSpec(1, (Dense(1, "identity"), ScalarOutput()))
        net = Network.init(spec, 0)
        net.param(1, "W")[:] = 1.0
        trained, hist = train(net, X, y, TrainConfig(lr=0.05, epochs=200, batch_size=20))
        w = trained.param(0, "W")[0, 0] * trained.param(1, "W")[0, 0]
        assert w == pytest.approx(2.0, abs=0.05)
        assert hist[-1] < hist[0]

    def test_zero_learning_rate(self):
        net = Network.init(resnet_spec(2, width=4, blocks=1, output="scalar", gamma=0.9), 0)
        X = make_rng(1).standard_normal((10, 2))
        trained, _ = train(net, X, X[:, 0], TrainConfig(lr=0.0, epochs=3))
        np.testing.assert_array_equal(trained.theta, net.theta)

    def test_deterministic(self):
        spec = NetworkSpec(2, (Dense(8), Dropout(0.2), GaussianOutput()))
        X = make_rng(2).standard_normal((30, 2))
        y = X.sum(1)
        cfg = TrainConfig(lr=1e-2, epochs=5, loss="nll", seed=4)
        a, _ = train(Network.init(spec, 1), X, y, cfg)
        b, _ = train(Network.init(spec, 1), X, y, cfg)
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_loss_decreases_on_smoke_data(self):
        rng = make_rng(3)
        X = rng.uniform(-2, 2, (64, 1))
        y = np.sin(X[:, 0])
        _, hist = train(Network.init(resnet_spec(1, width=16, blocks=1), 0), X, y, TrainConfig(lr=3e-3, epochs=20, loss="nll"))
        assert hist[-1] < hist[0]

    def test_divergence_reported(self):
        X = make_rng(4).standard_normal((20, 1))
        net = identity_dense()
        with pytest.raises(DivergenceError) as err, np.errstate(all="ignore"):
            train(net, X, 1e3 * X[:, 0], TrainConfig(optimizer="sgd", lr=1e3, epochs=50))
        assert err.value.epoch >= 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(optimizer="rmsprop")
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


def test_json_round_trip():
    net = Network.init(resnet_spec(2, width=4, blocks=2, dropout_rate=0.1, gamma=0.8), 3)
    spectral_normalize(net)
    net2 = Network.from_json(net.to_json())
    X = make_rng(5).standard_normal((4, 2))
    np.testing.assert_array_equal(forward(net, X)[0], forward(net2, X)[0])
    assert net2.spec == net.spec
    assert nnet.Network.from_dict(net.to_dict()).n_params == net.n_params
