"""Distance-aware single-network models.

:func:`sngp_fit` trains a spectrally normalized residual feature extractor
jointly with a random-Fourier-feature output layer, then fits a Laplace
(Gaussian) posterior over the output weights in closed form. Predictive
variance grows with the distance of the extracted features from the
training features.

:func:`dnn_gpr_fit` is the deep-kernel baseline: an exact GP regressor on
the features of an already trained network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import gpr
from .kernels import KernelSpec
from .nnet import (
    DivergenceError,
    Network,
    NetworkSpec,
    TrainConfig,
    _Adam,
    _Sgd,
    spectral_normalize,
)
from .numerics import cholesky, make_rng, tri_solve
from .prediction import GaussianPrediction

__all__ = [
    "RffHead",
    "SngpModel",
    "DnnGprModel",
    "make_rff_head",
    "rff_features",
    "sngp_fit",
    "sngp_predict",
    "dnn_gpr_fit",
    "dnn_gpr_predict",
    "DEFAULT_GAMMA",
]

DEFAULT_GAMMA = 0.9
HEAD_STREAM = 10
SHUFFLE_STREAM = 11


@dataclass
class RffHead:
    """Random Fourier feature layer with a Gaussian posterior over its weights.

    Attributes
    ----------
    omega : ndarray, shape (m, H)
        Frozen projection with entries ``N(0, 1 / length_scale**2)``.
    phase : ndarray, shape (m,)
        Frozen phases ``U[0, 2 pi)``.
    beta : ndarray, shape (m,)
        Output weights (posterior mean after fitting).
    precision : ndarray, shape (m, m)
        ``I + Phi.T Phi / noise_std**2``.
    sigma_f, length_scale, noise_std : float
    """

    omega: np.ndarray
    phase: np.ndarray
    beta: np.ndarray
    precision: np.ndarray
    sigma_f: float
    length_scale: float
    noise_std: float
    _chol: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.omega.setflags(write=False)
        self.phase.setflags(write=False)

    @property
    def m(self) -> int:
        return self.phase.size

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol = cholesky(self.precision)
        return self._chol

    def set_precision(self, precision: np.ndarray) -> None:
        self.precision = 0.5 * (precision + precision.T)
        self._chol = None


def make_rff_head(
    m: int, input_dim: int, length_scale: float, sigma_f: float, noise_std: float, seed: int
) -> RffHead:
    """Draw the frozen projection and phases; ``beta = 0`` and ``precision = I``."""
    if m < 1 or length_scale <= 0 or sigma_f <= 0 or noise_std <= 0:
        raise ValueError("m, length_scale, sigma_f and noise_std must be positive")
    rng = make_rng(seed, HEAD_STREAM)
    omega = rng.standard_normal((int(m), int(input_dim))) / length_scale
    phase = rng.uniform(0.0, 2.0 * np.pi, int(m))
    return RffHead(omega, phase, np.zeros(int(m)), np.eye(int(m)), float(sigma_f), float(length_scale), float(noise_std))


def rff_features(head: RffHead, h) -> np.ndarray:
    """``sigma_f * sqrt(2/m) * cos(h @ omega.T + phase)`` for rows of ``h``."""
    h = np.asarray(h, dtype=float)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    if h.shape[1] != head.omega.shape[1]:
        raise ValueError(f"features have dimension {h.shape[1]}, head expects {head.omega.shape[1]}")
    phi = head.sigma_f * np.sqrt(2.0 / head.m) * np.cos(h @ head.omega.T + head.phase)
    return phi[0] if single else phi


@dataclass
class SngpModel:
    """Spectrally normalized extractor, RFF head and constant target offset."""

    network: Network
    head: RffHead
    offset: float = 0.0
    history: list = field(default_factory=list)

    def save(self, directory) -> None:
        """Write ``extractor.json``, ``head.npz`` and ``sngp.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "extractor.json").write_text(self.network.to_json(), encoding="utf-8")
        np.savez(
            d / "head.npz",
            omega=self.head.omega,
            phase=self.head.phase,
            beta=self.head.beta,
            precision=self.head.precision,
        )
        meta = {
            "sigma_f": self.head.sigma_f,
            "length_scale": self.head.length_scale,
            "noise_std": self.head.noise_std,
            "offset": self.offset,
        }
        (d / "sngp.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "SngpModel":
        d = Path(directory)
        net = Network.from_json((d / "extractor.json").read_text(encoding="utf-8"))
        meta = json.loads((d / "sngp.json").read_text(encoding="utf-8"))
        with np.load(d / "head.npz") as z:
            head = RffHead(
                z["omega"].copy(),
                z["phase"].copy(),
                z["beta"].copy(),
                z["precision"].copy(),
                meta["sigma_f"],
                meta["length_scale"],
                meta["noise_std"],
            )
        return cls(net, head, float(meta["offset"]))


def _check_extractor(spec: NetworkSpec) -> None:
    if not any(layer.kind == "ResidualBlock" for layer in spec.layers):
        raise ValueError("the feature extractor needs at least one ResidualBlock")


def _exact_posterior(net: Network, head: RffHead, X, yc, momentum: float, batch_size: int) -> None:
    """Set the head precision and posterior-mean weights from the full data."""
    m = head.m
    s2 = head.noise_std**2
    if X.shape[0] == 0:
        head.set_precision(np.eye(m))
        head.beta = np.zeros(m)
        return
    Phi = rff_features(head, net.features(X))
    if momentum < 0:
        gram = Phi.T @ Phi
    else:
        # running average of per-batch Gram matrices rescaled to the data size
        N = Phi.shape[0]
        gram = np.zeros((m, m))
        for start in range(0, N, batch_size):
            B = Phi[start : start + batch_size]
            gram = momentum * gram + (1.0 - momentum) * (N / B.shape[0]) * (B.T @ B)
    P = np.eye(m) + gram / s2
    head.set_precision(P)
    L = head.chol
    head.beta = tri_solve(L, tri_solve(L, Phi.T @ yc / s2), transposed=True)


def sngp_fit(
    spec_or_network,
    X,
    y,
    gamma: float = DEFAULT_GAMMA,
    m: int = 1024,
    config: TrainConfig = TrainConfig(),
    length_scale: float = 1.0,
    sigma_f: float = 1.0,
    noise_std: float = 0.1,
    covariance_momentum: float = -1.0,
) -> SngpModel:
    """Train an SNGP regressor.

    The extractor (every layer before the output layer of the network spec) and
    the RFF output weights are trained jointly on the penalized squared
    error ``mean((y - phi beta)^2) + noise_std^2 / N * |beta|^2``, with
    spectral normalization refreshed after every step. A final pass over
    the training set computes the Laplace precision
    ``P = I + Phi.T Phi / noise_std^2`` and sets ``beta`` to the exact
    posterior mean for the trained features.

    Parameters
    ----------
    spec_or_network : NetworkSpec or Network
        Architecture (initialized from ``config.seed``) or a ready network.
        Its output layer is ignored.
    X, y : ndarray
    gamma : float
        Spectral norm bound. Overrides the bound of every spectrally
        normalized layer in a ``NetworkSpec``.
    m : int
        Number of random features.
    config : TrainConfig
        ``config.loss`` is ignored; ``epochs=0`` keeps the extractor fixed.
    length_scale, sigma_f, noise_std : float
        Fixed head hyperparameters.
    covariance_momentum : float
        Negative (default) for the exact precision; a value in ``[0, 1)``
        accumulates per-batch Gram matrices with that momentum instead.
    """
    if isinstance(spec_or_network, NetworkSpec):
        spec = spec_or_network
        if gamma is not None:
            spec = NetworkSpec(
                spec.input_dim,
                tuple(replace(l, gamma=gamma) if l.is_spectral else l for l in spec.layers),
            )
        net = Network.init(spec, config.seed)
    else:
        net = spec_or_network.copy()
    _check_extractor(net.spec)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    N = y.size
    X = X.reshape(N, -1) if N else np.zeros((0, net.spec.input_dim))
    head = make_rff_head(m, net.spec.feature_dim, length_scale, sigma_f, noise_std, config.seed)
    offset = float(np.mean(y)) if N else 0.0
    yc = y - offset
    spectral_normalize(net)
    history: list[float] = []

    if N and config.epochs > 0:
        K = net.n_params
        params = np.r_[net.theta, head.beta]
        opt = (_Adam if config.optimizer == "adam" else _Sgd)(params.size, config.lr)
        rng = make_rng(config.seed, SHUFFLE_STREAM)
        drop_rng = make_rng(config.seed, SHUFFLE_STREAM + 1)
        penalty = noise_std**2 / N
        bs = min(config.batch_size, N)
        c = head.sigma_f * np.sqrt(2.0 / m)

        def objective(Xb, yb, mode, rng_):
            h, cache = net._forward(Xb, mode, rng_, features_only=True)
            Z = h @ head.omega.T + head.phase
            phi = c * np.cos(Z)
            r = phi @ head.beta - yb
            B = yb.size
            val = float(np.mean(r * r) + penalty * head.beta @ head.beta)
            g_phi = (2.0 / B) * r[:, None] * head.beta[None, :]
            g_beta = phi.T @ ((2.0 / B) * r) + 2.0 * penalty * head.beta
            g_h = (g_phi * (-c * np.sin(Z))) @ head.omega
            return val, np.r_[net._backward(cache, g_h, from_features=True), g_beta]

        history.append(objective(X, yc, "eval", None)[0])
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(N)
            for start in range(0, N, bs):
                idx = order[start : start + bs]
                val, g = objective(X[idx], yc[idx], "train", drop_rng)
                if not np.isfinite(val):
                    raise DivergenceError(epoch, val)
                if config.weight_decay:
                    g[:K] += config.weight_decay * params[:K]
                opt.step(params, g)
                net.theta[:] = params[:K]
                head.beta = params[K:].copy()
                spectral_normalize(net, iters=3, tol=0.0)
            loss = objective(X, yc, "eval", None)[0]
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            history.append(loss)
        spectral_normalize(net)

    _exact_posterior(net, head, X, yc, covariance_momentum, config.batch_size)
    return SngpModel(net, head, offset, history)


def sngp_predict(model: SngpModel, X) -> GaussianPrediction:
    """Posterior mean, feature-space variance and noise variance."""
    phi = rff_features(model.head, model.network.features(np.atleast_2d(np.asarray(X, dtype=float))))
    mean = model.offset + phi @ model.head.beta
    V = tri_solve(model.head.chol, phi.T)
    epi = np.einsum("ij,ij->j", V, V)
    return GaussianPrediction(mean, np.full_like(mean, model.head.noise_std**2), epi)


@dataclass(frozen=True)
class DnnGprModel:
    """Exact GP regressor operating on the features of a trained network."""

    extractor: Network
    gp: gpr.GpModel

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "extractor.json").write_text(self.extractor.to_json(), encoding="utf-8")
        (d / "gp.json").write_text(self.gp.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "DnnGprModel":
        d = Path(directory)
        net = Network.from_json((d / "extractor.json").read_text(encoding="utf-8"))
        return cls(net, gpr.GpModel.from_json((d / "gp.json").read_text(encoding="utf-8")))


def dnn_gpr_fit(
    extractor: Network,
    X,
    y,
    kernel: KernelSpec | None = None,
    noise_std: float = 0.1,
    optimize: bool = True,
    restarts: int = 2,
    rng: np.random.Generator | None = None,
) -> DnnGprModel:
    """Fit :func:`uqml.gpr.fit` on ``extractor.features(X)``."""
    H = extractor.features(np.asarray(X, dtype=float).reshape(-1, extractor.spec.input_dim))
    kernel = kernel or KernelSpec.squared_exponential()
    restarts = restarts if rng is not None else 0
    gp = gpr.fit(H, y, kernel, noise_std, optimize=optimize, restarts=restarts, rng=rng)
    return DnnGprModel(extractor, gp)


def dnn_gpr_predict(model: DnnGprModel, X, include_noise: bool = True) -> GaussianPrediction:
    H = model.extractor.features(np.asarray(X, dtype=float).reshape(-1, model.extractor.spec.input_dim))
    return gpr.predict(model.gp, H, include_noise)
