"""Small feedforward networks with hand-written reverse-mode gradients.

Layers operate on mini-batches stored as ``(B, width)`` arrays. All
weights and biases live in one flat parameter vector ``theta``; each layer
owns contiguous slices described by :attr:`Network.layout`, so a parameter
vector produced by one process can be loaded by another.

Parameter layout (per layer, in order):

* ``Dense`` / ``SpectralDense`` / ``ResidualBlock``: ``W`` with shape
  ``(fan_in, width)`` in row-major order, then ``b`` with shape ``(width,)``.
* ``ScalarOutput``: ``W`` ``(fan_in, 1)`` then ``b`` ``(1,)``.
* ``GaussianOutput``: mean head ``W_mean``, ``b_mean`` then variance head
  ``W_var``, ``b_var`` with the same shapes as ``ScalarOutput``.
* ``Dropout``: no parameters.

Forward modes are ``"eval"`` (dropout off), ``"train"`` and
``"eval_with_dropout"``. Both stochastic modes use inverted dropout: kept
units are divided by ``1 - rate`` so that every mode shares one scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import make_rng, power_iteration, softplus, softplus_grad

__all__ = [
    "LayerSpec",
    "Dense",
    "SpectralDense",
    "ResidualBlock",
    "Dropout",
    "GaussianOutput",
    "ScalarOutput",
    "NetworkSpec",
    "Network",
    "TrainConfig",
    "DivergenceError",
    "forward",
    "loss_and_grad",
    "train",
    "spectral_normalize",
    "lipschitz_bound",
    "table2_spec",
    "resnet_spec",
    "VARIANCE_FLOOR",
]

VARIANCE_FLOOR = 1e-6
ACTIVATIONS = ("relu", "tanh", "identity")
OUTPUT_KINDS = ("GaussianOutput", "ScalarOutput")
LAYER_KINDS = ("Dense", "SpectralDense", "ResidualBlock", "Dropout") + OUTPUT_KINDS
MODES = ("train", "eval", "eval_with_dropout")

# stream indices for make_rng
INIT_STREAM = 0
SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = int(epoch)
        self.loss = loss
        super().__init__(f"training diverged at epoch {self.epoch} (loss={loss})")


# --------------------------------------------------------------------------
# specs
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class LayerSpec:
    """One layer of a :class:`NetworkSpec`.

    Use the helper constructors :func:`Dense`, :func:`SpectralDense`,
    :func:`ResidualBlock`, :func:`Dropout`, :func:`GaussianOutput` and
    :func:`ScalarOutput` rather than building this directly.
    """

    kind: str
    width: int | None = None
    activation: str = "identity"
    rate: float = 0.0
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer type {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if self.kind in ("Dense", "SpectralDense", "ResidualBlock"):
            if self.width is None or int(self.width) <= 0:
                raise ValueError(f"{self.kind} needs a positive width")
            object.__setattr__(self, "width", int(self.width))
        if self.kind == "Dropout" and not (0.0 <= self.rate < 1.0):
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.kind == "SpectralDense" and self.gamma is None:
            raise ValueError("SpectralDense needs a norm bound gamma")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def is_output(self) -> bool:
        return self.kind in OUTPUT_KINDS

    @property
    def is_spectral(self) -> bool:
        return self.gamma is not None

    def to_dict(self) -> dict:
        d: dict = {"type": self.kind}
        if self.kind in ("Dense", "SpectralDense", "ResidualBlock"):
            d["width"] = self.width
            d["activation"] = self.activation
        if self.kind == "Dropout":
            d["rate"] = self.rate
        if self.gamma is not None:
            d["gamma"] = self.gamma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            d["type"],
            d.get("width"),
            d.get("activation", "identity"),
            float(d.get("rate", 0.0)),
            d.get("gamma"),
        )


def Dense(width: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec("Dense", width, activation)


def SpectralDense(width: int, activation: str = "relu", gamma: float = 0.9) -> LayerSpec:
    return LayerSpec("SpectralDense", width, activation, gamma=gamma)


def ResidualBlock(width: int, activation: str = "relu", gamma: float | None = None) -> LayerSpec:
    """Skip connection ``x + act(x W + b)``; input width must equal ``width``.

    Passing ``gamma`` spectrally normalizes the inner weight matrix.
    """
    return LayerSpec("ResidualBlock", width, activation, gamma=gamma)


def Dropout(rate: float) -> LayerSpec:
    return LayerSpec("Dropout", rate=float(rate))


def GaussianOutput() -> LayerSpec:
    return LayerSpec("GaussianOutput")


def ScalarOutput() -> LayerSpec:
    return LayerSpec("ScalarOutput")


@dataclass(frozen=True)
class NetworkSpec:
    """Input dimension plus an ordered tuple of layers ending in one output layer."""

    input_dim: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if int(self.input_dim) <= 0:
            raise ValueError("input_dim must be positive")
        object.__setattr__(self, "input_dim", int(self.input_dim))
        if not self.layers or not self.layers[-1].is_output:
            raise ValueError("the last layer must be GaussianOutput or ScalarOutput")
        if sum(layer.is_output for layer in self.layers) != 1:
            raise ValueError("a network has exactly one output layer")
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.kind == "ResidualBlock" and layer.width != width:
                raise ValueError(
                    f"layer {i}: ResidualBlock width {layer.width} must equal its input width {width}"
                )
            if layer.kind in ("Dense", "SpectralDense"):
                width = layer.width

    @property
    def output_kind(self) -> str:
        return self.layers[-1].kind

    @property
    def feature_dim(self) -> int:
        """Width of the representation fed to the output layer."""
        width = self.input_dim
        for layer in self.layers:
            if layer.kind in ("Dense", "SpectralDense"):
                width = layer.width
        return width

    @property
    def has_dropout(self) -> bool:
        return any(layer.kind == "Dropout" and layer.rate > 0 for layer in self.layers)

    def with_dropout_rate(self, rate: float) -> "NetworkSpec":
        layers = tuple(replace(l, rate=float(rate)) if l.kind == "Dropout" else l for l in self.layers)
        return NetworkSpec(self.input_dim, layers)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(int(d["input_dim"]), tuple(LayerSpec.from_dict(l) for l in d["layers"]))


def table2_spec(input_dim: int, activation: str = "relu") -> NetworkSpec:
    """Fully connected 100-50-50-50-50-10 network with a Gaussian output."""
    widths = (100, 50, 50, 50, 50, 10)
    return NetworkSpec(input_dim, tuple(Dense(w, activation) for w in widths) + (GaussianOutput(),))


def resnet_spec(
    input_dim: int,
    width: int = 64,
    blocks: int = 4,
    activation: str = "relu",
    dropout_rate: float = 0.0,
    output: str = "gaussian",
    gamma: float | None = None,
) -> NetworkSpec:
    """Residual backbone: each block is a dense layer followed by a skip layer.

    Parameters
    ----------
    input_dim : int
    width : int
        Hidden width shared by every block.
    blocks : int
        Number of ``Dense -> ResidualBlock`` pairs.
    activation : str
    dropout_rate : float
        Adds a ``Dropout`` layer after each block when positive.
    output : {"gaussian", "scalar"}
    gamma : float, optional
        Spectral norm bound; hidden layers become spectrally normalized.
    """
    layers: list[LayerSpec] = []
    for _ in range(int(blocks)):
        if gamma is None:
            layers.append(Dense(width, activation))
        else:
            layers.append(SpectralDense(width, activation, gamma))
        layers.append(ResidualBlock(width, activation, gamma))
        if dropout_rate > 0:
            layers.append(Dropout(dropout_rate))
    if output == "gaussian":
        layers.append(GaussianOutput())
    elif output == "scalar":
        layers.append(ScalarOutput())
    else:
        raise ValueError(f"output must be 'gaussian' or 'scalar', got {output!r}")
    return NetworkSpec(input_dim, tuple(layers))


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------
def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------
def _param_shapes(spec: NetworkSpec) -> list[list[tuple[str, tuple]]]:
    shapes = []
    width = spec.input_dim
    for layer in spec.layers:
        if layer.kind in ("Dense", "SpectralDense", "ResidualBlock"):
            shapes.append([("W", (width, layer.width)), ("b", (layer.width,))])
            width = layer.width
        elif layer.kind == "ScalarOutput":
            shapes.append([("W", (width, 1)), ("b", (1,))])
        elif layer.kind == "GaussianOutput":
            shapes.append(
                [("W_mean", (width, 1)), ("b_mean", (1,)), ("W_var", (width, 1)), ("b_var", (1,))]
            )
        else:
            shapes.append([])
    return shapes


@dataclass
class Network:
    """Parameters and spectral-normalization state of a :class:`NetworkSpec`.

    Attributes
    ----------
    spec : NetworkSpec
    theta : ndarray
        Flat parameter vector.
    layout : list of dict
        ``layout[i][name] = (offset, shape)`` for every parameter of layer ``i``.
    sn_scale : ndarray
        Per-layer multiplier applied to ``W`` (1.0 except for spectrally
        normalized layers whose norm exceeded the bound).
    sn_vectors : dict
        Warm-start right singular vectors for power iteration.
    """

    spec: NetworkSpec
    theta: np.ndarray
    layout: list = field(default_factory=list)
    sn_scale: np.ndarray | None = None
    sn_vectors: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if not self.layout:
            self.layout = []
            off = 0
            for shapes in _param_shapes(self.spec):
                entry = {}
                for name, shape in shapes:
                    entry[name] = (off, shape)
                    off += int(np.prod(shape))
                self.layout.append(entry)
            if off != self.theta.size:
                raise ValueError(f"parameter vector has {self.theta.size} entries, spec needs {off}")
        if self.sn_scale is None:
            self.sn_scale = np.ones(len(self.spec.layers))

    # -- construction -------------------------------------------------------
    @classmethod
    def init(cls, spec: NetworkSpec, seed: int) -> "Network":
        """He-uniform (relu) or Xavier-uniform (otherwise) weights, zero biases."""
        rng = make_rng(seed, INIT_STREAM)
        shapes = _param_shapes(spec)
        n = sum(int(np.prod(s)) for layer in shapes for _, s in layer)
        net = cls(spec, np.zeros(n))
        for i, layer in enumerate(spec.layers):
            for name, (off, shape) in net.layout[i].items():
                if not name.startswith("W"):
                    continue
                fan_in, fan_out = shape
                if layer.activation == "relu":
                    limit = np.sqrt(6.0 / fan_in)
                else:
                    limit = np.sqrt(6.0 / (fan_in + fan_out))
                net.theta[off : off + fan_in * fan_out] = rng.uniform(-limit, limit, fan_in * fan_out)
        return net

    @property
    def n_params(self) -> int:
        return self.theta.size

    def param(self, layer: int, name: str) -> np.ndarray:
        """Writable view of one parameter array."""
        off, shape = self.layout[layer][name]
        return self.theta[off : off + int(np.prod(shape))].reshape(shape)

    def effective_weight(self, layer: int) -> np.ndarray:
        """Weight matrix as used in the forward pass (after spectral scaling)."""
        return self.sn_scale[layer] * self.param(layer, "W")

    def copy(self) -> "Network":
        return Network(
            self.spec,
            self.theta.copy(),
            self.layout,
            self.sn_scale.copy(),
            {k: v.copy() for k, v in self.sn_vectors.items()},
        )

    def with_theta(self, theta: np.ndarray) -> "Network":
        """Network sharing layout and spectral state but using ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.theta.shape:
            raise ValueError(f"theta has shape {theta.shape}, expected {self.theta.shape}")
        return Network(self.spec, theta, self.layout, self.sn_scale, self.sn_vectors)

    # -- forward / backward ----------------------------------------------
    def _forward(self, X, mode: str, rng, features_only: bool = False):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.spec.input_dim:
            raise ValueError(f"input has dimension {X.shape[1]}, network expects {self.spec.input_dim}")
        stochastic = mode != "eval"
        if stochastic and self.spec.has_dropout and rng is None:
            raise ValueError(f"mode {mode!r} needs an rng for dropout masks")
        h = X
        cache = []
        for i, layer in enumerate(self.spec.layers):
            k = layer.kind
            if k in ("Dense", "SpectralDense", "ResidualBlock"):
                W = self.effective_weight(i)
                z = h @ W + self.param(i, "b")
                a = _act(layer.activation, z)
                cache.append((h, z, a))
                h = h + a if k == "ResidualBlock" else a
            elif k == "Dropout":
                if stochastic and layer.rate > 0:
                    keep = rng.random(h.shape) >= layer.rate
                    mask = keep / (1.0 - layer.rate)
                    h = h * mask
                    cache.append(mask)
                else:
                    cache.append(None)
            elif features_only:
                cache.append(None)
                return h, cache
            elif k == "ScalarOutput":
                out = (h @ self.param(i, "W"))[:, 0] + self.param(i, "b")[0]
                cache.append(h)
                return out, cache
            else:
                mu = (h @ self.param(i, "W_mean"))[:, 0] + self.param(i, "b_mean")[0]
                raw = (h @ self.param(i, "W_var"))[:, 0] + self.param(i, "b_var")[0]
                var = softplus(raw) + VARIANCE_FLOOR
                cache.append((h, raw))
                return (mu, var), cache
        raise AssertionError("network without output layer")  # pragma: no cover

    def _backward(self, cache, grad_out, from_features: bool = False) -> np.ndarray:
        """Gradient of a scalar objective given its gradient w.r.t. the output.

        ``grad_out`` is a ``(B,)`` array for scalar outputs, a pair
        ``(d_mean, d_var)`` for Gaussian outputs, or ``(B, F)`` feature
        gradients when ``from_features`` is set.
        """
        grad = np.zeros_like(self.theta)

        def put(i, name, g):
            off, shape = self.layout[i][name]
            grad[off : off + int(np.prod(shape))] += g.ravel()

        n = len(self.spec.layers)
        i = n - 1
        out_layer = self.spec.layers[i]
        if from_features:
            gh = np.asarray(grad_out, dtype=float)
        elif out_layer.kind == "ScalarOutput":
            h = cache[i]
            g = np.asarray(grad_out, dtype=float)
            put(i, "W", h.T @ g[:, None])
            put(i, "b", np.array([g.sum()]))
            gh = g[:, None] * self.param(i, "W")[:, 0][None, :]
        else:
            h, raw = cache[i]
            g_mu, g_var = (np.asarray(v, dtype=float) for v in grad_out)
            g_raw = g_var * softplus_grad(raw)
            put(i, "W_mean", h.T @ g_mu[:, None])
            put(i, "b_mean", np.array([g_mu.sum()]))
            put(i, "W_var", h.T @ g_raw[:, None])
            put(i, "b_var", np.array([g_raw.sum()]))
            gh = g_mu[:, None] * self.param(i, "W_mean")[:, 0][None, :] + g_raw[:, None] * self.param(
                i, "W_var"
            )[:, 0][None, :]
        for i in range(n - 2, -1, -1):
            layer = self.spec.layers[i]
            if layer.kind == "Dropout":
                if cache[i] is not None:
                    gh = gh * cache[i]
                continue
            h_in, z, a = cache[i]
            gz = gh * _act_grad(layer.activation, z, a)
            scale = self.sn_scale[i]
            put(i, "W", scale * (h_in.T @ gz))
            put(i, "b", gz.sum(axis=0))
            g_in = gz @ self.effective_weight(i).T
            gh = gh + g_in if layer.kind == "ResidualBlock" else g_in
        return grad

    def features(self, X, mode: str = "eval", rng=None) -> np.ndarray:
        """Representation entering the output layer, shape ``(B, feature_dim)``."""
        return self._forward(X, mode, rng, features_only=True)[0]

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "theta": self.theta.tolist(),
            "spectral_scales": self.sn_scale.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        spec = NetworkSpec.from_dict(d["spec"])
        net = cls(spec, np.asarray(d["theta"], dtype=float))
        if "spectral_scales" in d:
            net.sn_scale = np.asarray(d["spectral_scales"], dtype=float)
        return net

    @classmethod
    def from_json(cls, s: str) -> "Network":
        return cls.from_dict(json.loads(s))


def forward(net: Network, x, mode: str = "eval", rng: np.random.Generator | None = None):
    """Evaluate the network.

    Parameters
    ----------
    net : Network
    x : ndarray, shape (D,) or (B, D)
    mode : {"eval", "train", "eval_with_dropout"}
    rng : numpy.random.Generator, optional
        Required by the stochastic modes when the network has dropout.

    Returns
    -------
    ndarray or tuple of ndarray
        Predictions ``(B,)`` for scalar outputs or ``(mean, variance)`` for
        Gaussian outputs. A single input vector returns scalars.
    """
    single = np.ndim(x) == 1
    out, _ = net._forward(x, mode, rng)
    if single:
        if isinstance(out, tuple):
            return float(out[0][0]), float(out[1][0])
        return float(out[0])
    return out


# --------------------------------------------------------------------------
# losses and training
# --------------------------------------------------------------------------
def _loss_terms(out, y: np.ndarray, loss: str):
    B = y.shape[0]
    if loss == "mse":
        mu = out[0] if isinstance(out, tuple) else out
        r = mu - y
        val = float(np.mean(r * r))
        g_mu = 2.0 * r / B
        return val, ((g_mu, np.zeros(B)) if isinstance(out, tuple) else g_mu)
    if loss == "nll":
        if not isinstance(out, tuple):
            raise ValueError("the nll loss needs a GaussianOutput network")
        mu, var = out
        r = y - mu
        val = float(np.mean(0.5 * np.log(var) + r * r / (2.0 * var)))
        g_mu = -r / var / B
        g_var = (0.5 / var - r * r / (2.0 * var * var)) / B
        return val, (g_mu, g_var)
    raise ValueError(f"loss must be 'mse' or 'nll', got {loss!r}")


def loss_and_grad(
    net: Network,
    X,
    y,
    loss: str = "mse",
    mode: str = "eval",
    rng: np.random.Generator | None = None,
):
    """Mean loss over a batch and its gradient with respect to ``net.theta``.

    ``mse`` is the mean squared error of the (mean) prediction. ``nll`` is
    the Gaussian negative log-likelihood ``0.5 log var + (y - mu)^2 / (2 var)``
    averaged over the batch, without the ``0.5 log 2 pi`` constant.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty batch")
    out, cache = net._forward(X, mode, rng)
    val, g = _loss_terms(out, y, loss)
    return val, net._backward(cache, g)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    Parameters
    ----------
    optimizer : {"adam", "sgd"}
    lr : float
        Learning rate (zero leaves the parameters untouched).
    epochs : int
    batch_size : int
    seed : int
        Drives shuffling and dropout masks.
    loss : {"mse", "nll"}
    weight_decay : float
        L2 penalty coefficient added to the gradient.
    """

    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    loss: str = "mse"
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.loss not in ("mse", "nll"):
            raise ValueError(f"loss must be 'mse' or 'nll', got {self.loss!r}")
        if self.lr < 0 or self.epochs < 0 or self.batch_size <= 0 or self.weight_decay < 0:
            raise ValueError("learning rate, epochs, batch size and weight decay must be non-negative")


class _Adam:
    def __init__(self, n: int, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, g: np.ndarray) -> None:
        if self.lr == 0:
            return
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        theta -= self.lr * mh / (np.sqrt(vh) + self.eps)


class _Sgd:
    def __init__(self, n: int, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, g: np.ndarray) -> None:
        if self.lr == 0:
            return
        theta -= self.lr * g


def make_optimizer(name: str, n: int, lr: float):
    return _Adam(n, lr) if name == "adam" else _Sgd(n, lr)


def _has_spectral(net: Network) -> bool:
    return any(layer.is_spectral for layer in net.spec.layers)


def train(
    net: Network,
    X,
    y,
    config: TrainConfig,
    grad_fn=None,
    eval_loss=None,
) -> tuple[Network, list[float]]:
    """Mini-batch training; returns a trained copy and the loss history.

    ``history[0]`` is the full-data loss before training and
    ``history[k]`` the full-data loss after epoch ``k``, both in eval mode.

    Parameters
    ----------
    net : Network
        Left unchanged; training works on a copy.
    X, y : ndarray
    config : TrainConfig
    grad_fn : callable, optional
        ``grad_fn(net, Xb, yb, rng) -> (loss, grad)`` replacing the
        built-in loss. Used by heads that consume the network features.
    eval_loss : callable, optional
        ``eval_loss(net, X, y) -> float`` recorded in the history when
        ``grad_fn`` is given.

    Raises
    ------
    DivergenceError
        When the loss becomes NaN or infinite.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("training data are empty")
    net = net.copy()
    shuffle_rng = make_rng(config.seed, SHUFFLE_STREAM)
    drop_rng = make_rng(config.seed, DROPOUT_STREAM)
    opt = make_optimizer(config.optimizer, net.n_params, config.lr)
    spectral = _has_spectral(net) and config.lr > 0
    if spectral:
        spectral_normalize(net)

    if grad_fn is None:
        def grad_fn(n_, Xb, yb, rng):
            return loss_and_grad(n_, Xb, yb, config.loss, "train", rng)

    def full_loss():
        if eval_loss is not None:
            return float(eval_loss(net, X, y))
        out, _ = net._forward(X, "eval", None)
        return _loss_terms(out, y, config.loss)[0]

    history = [full_loss()]
    N = y.size
    bs = min(config.batch_size, N)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(N)
        for start in range(0, N, bs):
            idx = order[start : start + bs]
            val, g = grad_fn(net, X[idx], y[idx], drop_rng)
            if not np.isfinite(val):
                raise DivergenceError(epoch, val)
            if config.weight_decay:
                g = g + config.weight_decay * net.theta
            opt.step(net.theta, g)
            if spectral:
                spectral_normalize(net, iters=3, tol=0.0)
        loss = full_loss()
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss)
        history.append(loss)
    if spectral:
        spectral_normalize(net)
    return net, history


# --------------------------------------------------------------------------
# spectral normalization
# --------------------------------------------------------------------------
def spectral_normalize(net: Network, iters: int = 500, tol: float = 1e-9) -> Network:
    """Rescale spectrally normalized layers whose weight norm exceeds ``gamma``.

    The stored weights stay as they are; each layer gets a multiplier
    ``min(1, gamma / |W|_2)`` that the forward pass applies. The norm is
    estimated by warm-started power iteration. Gradients treat the
    multiplier as a constant. Works in place and returns ``net``.
    """
    for i, layer in enumerate(net.spec.layers):
        if not layer.is_spectral:
            continue
        W = net.param(i, "W")
        sigma, _, v = power_iteration(W, iters=iters, tol=tol, v0=net.sn_vectors.get(i))
        net.sn_vectors[i] = v
        net.sn_scale[i] = layer.gamma / sigma if sigma > layer.gamma else 1.0
    return net


def lipschitz_bound(net: Network) -> float:
    """Upper bound on the Lipschitz constant of ``net.features``.

    Product over hidden layers of ``|W|_2`` (dense) or ``1 + |W|_2``
    (residual); relu and tanh are 1-Lipschitz. Dropout in eval mode is the
    identity.
    """
    bound = 1.0
    for i, layer in enumerate(net.spec.layers):
        if layer.kind in ("Dense", "SpectralDense", "ResidualBlock"):
            s = float(np.linalg.norm(net.effective_weight(i), 2))
            bound *= (1.0 + s) if layer.kind == "ResidualBlock" else s
    return bound
