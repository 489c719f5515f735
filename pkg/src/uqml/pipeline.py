"""Config-driven training, model bundles and bundle prediction.

An experiment config is a flat JSON object: ``method``, a ``data``
source, a ``seed`` and method hyperparameters at the top level (so a
sweep can vary any of them by name). A trained model is stored as a
bundle directory::

    bundle/
      manifest.json      schema version, method, package version, config,
                         standardization record, feature and target names
      train_inputs.npy   standardized training inputs (for train_distance)
      model/             method-specific files

All work happens in standardized units; predictions are mapped back to
the original target units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
from scipy.spatial import cKDTree

from . import __version__, bnn, data, ensemble, gpr, nnet, sngp
from .kernels import KernelSpec
from .numerics import derive_seed, make_rng
from .prediction import GaussianPrediction

__all__ = [
    "BUNDLE_SCHEMA_VERSION",
    "CONFIG_SCHEMA",
    "METHODS",
    "ConfigError",
    "Bundle",
    "validate_config",
    "resolve_config",
    "load_training_data",
    "train_bundle",
    "load_bundle",
    "predict_bundle",
]

BUNDLE_SCHEMA_VERSION = 1
METHODS = ("gpr", "ensemble", "mc_dropout", "mfvi", "mh", "svgd", "sngp", "dnn_gpr")
PREDICT_STREAM = 20
MH_STREAM = 21
MFVI_STREAM = 22
SVGD_STREAM = 23
GPR_STREAM = 24

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["method", "data"],
    "properties": {
        "method": {"enum": list(METHODS)},
        "seed": _nonneg_int,
        "out": {"type": "string"},
        "data": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["preset"],
                    "properties": {
                        "preset": {"enum": ["toy1d", "toy2d"]},
                        "n": _count,
                        "seed": _nonneg_int,
                        "noise_std": _nonneg,
                        "heteroscedastic": {"type": "boolean"},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["path"],
                    "properties": {
                        "path": {"type": "string"},
                        "target": {"type": "string"},
                        "features": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    },
                },
            ]
        },
        "standardize": {"type": "boolean"},
        # network
        "architecture": {"enum": ["resnet", "table2"]},
        "width": _count,
        "blocks": _count,
        "activation": {"enum": list(nnet.ACTIVATIONS)},
        "dropout_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "gamma": _pos,
        # training
        "optimizer": {"enum": ["adam", "sgd"]},
        "lr": _nonneg,
        "epochs": _nonneg_int,
        "batch_size": _count,
        "weight_decay": _nonneg,
        # gaussian process
        "kernel": {"enum": ["se", "ard", "matern", "abs_exp"]},
        "nu": {"enum": [0.5, 1.5, 2.5]},
        "sigma_f": _pos,
        "length_scale": _pos,
        "noise_std": _nonneg,
        "optimize": {"type": "boolean"},
        "restarts": _nonneg_int,
        # ensembles and sampling
        "members": _count,
        "mc_samples": {"type": "integer", "minimum": 2},
        "prior_std": _pos,
        "posterior_samples": {"type": "integer", "minimum": 2},
        "mh_steps": _count,
        "proposal_std": _nonneg,
        "particles": {"type": "integer", "minimum": 2},
        "svgd_steps": _count,
        "svgd_lr": _pos,
        "mfvi_epochs": _count,
        "mfvi_lr": _pos,
        "n_mc": _count,
        # sngp
        "rff_features": _count,
    },
}

DEFAULTS = {
    "seed": 0,
    "standardize": True,
    "architecture": "resnet",
    "width": 32,
    "blocks": 2,
    "activation": "relu",
    "dropout_rate": 0.1,
    "gamma": 0.9,
    "optimizer": "adam",
    "lr": 3e-3,
    "epochs": 100,
    "batch_size": 32,
    "weight_decay": 0.0,
    "kernel": "se",
    "nu": 2.5,
    "sigma_f": 1.0,
    "length_scale": 1.0,
    "noise_std": 0.1,
    "optimize": True,
    "restarts": 2,
    "members": 5,
    "mc_samples": 100,
    "prior_std": 1.0,
    "posterior_samples": 100,
    "mh_steps": 20000,
    "proposal_std": 0.01,
    "particles": 20,
    "svgd_steps": 300,
    "svgd_lr": 1e-4,
    "mfvi_epochs": 500,
    "mfvi_lr": 1e-2,
    "n_mc": 4,
    "rff_features": 512,
}


class ConfigError(ValueError):
    """Invalid experiment configuration or command arguments."""


def validate_config(cfg: dict) -> None:
    """Raise :class:`ConfigError` unless ``cfg`` satisfies :data:`CONFIG_SCHEMA`."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def resolve_config(cfg: dict) -> dict:
    """Validated config with every default filled in."""
    validate_config(cfg)
    out = dict(DEFAULTS)
    out.update(cfg)
    return out


def load_training_data(cfg: dict, base_dir: Path | None = None) -> data.Dataset:
    """Generate or read the training set described by ``cfg["data"]``."""
    src = cfg["data"]
    if "preset" in src:
        seed = src.get("seed", cfg.get("seed", 0))
        if src["preset"] == "toy1d":
            return data.gen_toy_1d(src.get("n", 20), seed=seed, noise_std=src.get("noise_std", data.TOY_1D_NOISE))
        return data.gen_toy_2d_clusters(
            src.get("n", 400), seed=seed, heteroscedastic=src.get("heteroscedastic", False)
        )
    path = Path(src["path"])
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return data.load_csv(path, src.get("target", "y"), src.get("features"))


# --------------------------------------------------------------------------
# model construction
# --------------------------------------------------------------------------
def _network_spec(cfg: dict, D: int, output: str, spectral: bool = False, dropout: bool = False) -> nnet.NetworkSpec:
    rate = cfg["dropout_rate"] if dropout else 0.0
    if cfg["architecture"] == "table2":
        if spectral:
            raise ConfigError("the table2 architecture has no residual blocks; use resnet")
        base = nnet.table2_spec(D, cfg["activation"])
        layers = []
        for layer in base.layers[:-1]:
            layers.append(layer)
            if rate > 0:
                layers.append(nnet.Dropout(rate))
        tail = nnet.GaussianOutput() if output == "gaussian" else nnet.ScalarOutput()
        return nnet.NetworkSpec(D, tuple(layers) + (tail,))
    return nnet.resnet_spec(
        D,
        width=cfg["width"],
        blocks=cfg["blocks"],
        activation=cfg["activation"],
        dropout_rate=rate,
        output=output,
        gamma=cfg["gamma"] if spectral else None,
    )


def _train_config(cfg: dict, loss: str) -> nnet.TrainConfig:
    return nnet.TrainConfig(
        optimizer=cfg["optimizer"],
        lr=cfg["lr"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        loss=loss,
        weight_decay=cfg["weight_decay"],
    )


def _kernel(cfg: dict, D: int) -> KernelSpec:
    kind, sf, ls = cfg["kernel"], cfg["sigma_f"], cfg["length_scale"]
    if kind == "se":
        return KernelSpec.squared_exponential(ls, sf)
    if kind == "ard":
        return KernelSpec.ard([ls] * D, sf)
    if kind == "matern":
        return KernelSpec.matern(cfg["nu"], ls, sf)
    return KernelSpec("AbsoluteExponential", sf, (ls,))


def _fit_gp(cfg: dict, X, y, kernel: KernelSpec) -> gpr.GpModel:
    rng = make_rng(cfg["seed"], GPR_STREAM)
    restarts = cfg["restarts"] if cfg["optimize"] else 0
    return gpr.fit(X, y, kernel, cfg["noise_std"], optimize=cfg["optimize"], restarts=restarts, rng=rng)


def _write_net(path: Path, net: nnet.Network) -> None:
    path.write_text(net.to_json(), encoding="utf-8")


def _read_net(path: Path) -> nnet.Network:
    return nnet.Network.from_json(path.read_text(encoding="utf-8"))


def _fit_and_save(cfg: dict, X: np.ndarray, y: np.ndarray, model_dir: Path) -> None:
    method, D, seed = cfg["method"], X.shape[1], cfg["seed"]
    model_dir.mkdir(parents=True, exist_ok=True)
    if method == "gpr":
        gp = _fit_gp(cfg, X, y, _kernel(cfg, D))
        (model_dir / "gp.json").write_text(gp.to_json(), encoding="utf-8")
    elif method == "ensemble":
        spec = _network_spec(cfg, D, "gaussian")
        model = ensemble.train_ensemble(spec, X, y, cfg["members"], _train_config(cfg, "nll"), seed)
        model.save(model_dir)
    elif method == "mc_dropout":
        if not cfg["dropout_rate"] > 0:
            raise ConfigError("mc_dropout needs dropout_rate > 0")
        spec = _network_spec(cfg, D, "gaussian", dropout=True)
        net, _ = nnet.train(nnet.Network.init(spec, seed), X, y, _train_config(cfg, "nll"))
        _write_net(model_dir / "network.json", net)
    elif method in ("mfvi", "mh", "svgd"):
        spec = _network_spec(cfg, D, "scalar")
        net, _ = nnet.train(nnet.Network.init(spec, seed), X, y, _train_config(cfg, "mse"))
        _write_net(model_dir / "network.json", net)
        lp = bnn.LogPosterior(net, X, y, cfg["prior_std"], max(cfg["noise_std"], 1e-6))
        S = cfg["posterior_samples"]
        if method == "mh":
            res = bnn.mh_sample(lp, net.theta, cfg["mh_steps"], cfg["proposal_std"], make_rng(seed, MH_STREAM), adapt=True)
            kept = res.chain[res.chain.shape[0] // 2 :]
            idx = np.linspace(0, kept.shape[0] - 1, S).round().astype(int)
            bnn.save_samples_csv(model_dir / "samples.csv", kept[idx], net)
        elif method == "svgd":
            rng = make_rng(seed, SVGD_STREAM)
            P = net.theta + 0.01 * rng.standard_normal((cfg["particles"], net.n_params))
            P = bnn.svgd(lp, P, cfg["svgd_steps"], cfg["svgd_lr"])
            if not np.all(np.isfinite(P)):
                raise nnet.DivergenceError(cfg["svgd_steps"], float("nan"))
            bnn.save_samples_csv(model_dir / "samples.csv", P, net)
        else:
            q = bnn.mfvi_fit(lp, net.theta, cfg["n_mc"], cfg["mfvi_epochs"], cfg["mfvi_lr"], make_rng(seed, MFVI_STREAM))
            np.savez(model_dir / "mfvi.npz", mean=q.mean, log_std=q.log_std)
    elif method == "sngp":
        spec = _network_spec(cfg, D, "scalar", spectral=True)
        model = sngp.sngp_fit(
            spec,
            X,
            y,
            gamma=cfg["gamma"],
            m=cfg["rff_features"],
            config=_train_config(cfg, "mse"),
            length_scale=cfg["length_scale"],
            sigma_f=cfg["sigma_f"],
            noise_std=max(cfg["noise_std"], 1e-6),
        )
        model.save(model_dir)
    elif method == "dnn_gpr":
        spec = _network_spec(cfg, D, "scalar")
        net, _ = nnet.train(nnet.Network.init(spec, seed), X, y, _train_config(cfg, "mse"))
        H = net.features(X)
        gp = _fit_gp(cfg, H, y, _kernel(cfg, H.shape[1]))
        sngp.DnnGprModel(net, gp).save(model_dir)


# --------------------------------------------------------------------------
# bundles
# --------------------------------------------------------------------------
@dataclass
class Bundle:
    """A loaded model bundle."""

    path: Path
    manifest: dict
    standardization: data.Standardization
    train_inputs: np.ndarray

    @property
    def method(self) -> str:
        return self.manifest["method"]

    @property
    def config(self) -> dict:
        return self.manifest["config"]

    @property
    def feature_names(self) -> list[str]:
        return list(self.manifest["feature_names"])

    @property
    def target_name(self) -> str:
        return self.manifest["target_name"]

    @property
    def model_dir(self) -> Path:
        return self.path / "model"


def _identity_standardization(ds: data.Dataset) -> data.Standardization:
    D = ds.dim
    return data.Standardization(np.zeros(D), np.ones(D), 0.0, 1.0, np.ones(D, dtype=bool))


def train_bundle(cfg: dict, out, base_dir: Path | None = None) -> Bundle:
    """Train the configured method and write a bundle directory to ``out``."""
    cfg = resolve_config(cfg)
    ds = load_training_data(cfg, base_dir)
    if len(ds) < 2:
        raise data.DataError("training needs at least two rows")
    if not np.all(np.isfinite(ds.X)) or not np.all(np.isfinite(ds.y)):
        raise data.DataError("training data contain non-finite values")
    rec = data.standardize(ds)[1] if cfg["standardize"] else _identity_standardization(ds)
    X, y = rec.apply_x(ds.X), rec.apply_y(ds.y)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _fit_and_save(cfg, X, y, out / "model")
    np.save(out / "train_inputs.npy", X)
    manifest = {
        "schema_version": BUNDLE_SCHEMA_VERSION,
        "method": cfg["method"],
        "package_version": __version__,
        "numpy_version": np.__version__,
        "config": cfg,
        "standardization": rec.to_dict(),
        "feature_names": list(ds.feature_names),
        "target_name": ds.target_name,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return load_bundle(out)


def load_bundle(path) -> Bundle:
    """Read a bundle written by :func:`train_bundle`."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise data.DataError(f"cannot read bundle manifest in {path}: {exc.strerror}") from exc
    version = manifest.get("schema_version")
    if not isinstance(version, int) or version > BUNDLE_SCHEMA_VERSION:
        raise ConfigError(f"unsupported bundle schema version {version!r}")
    if manifest.get("method") not in METHODS:
        raise ConfigError(f"unknown method {manifest.get('method')!r} in bundle")
    rec = data.Standardization.from_dict(manifest["standardization"])
    return Bundle(path, manifest, rec, np.load(path / "train_inputs.npy"))


def load_gp(bundle: Bundle) -> gpr.GpModel:
    if bundle.method != "gpr":
        raise ConfigError(f"bundle holds a {bundle.method} model, a gpr model is required")
    return gpr.GpModel.from_json((bundle.model_dir / "gp.json").read_text(encoding="utf-8"))


def _predict_standardized(bundle: Bundle, Z: np.ndarray) -> GaussianPrediction:
    cfg, d = bundle.config, bundle.model_dir
    rng = make_rng(cfg["seed"], PREDICT_STREAM)
    method = bundle.method
    if method == "gpr":
        return gpr.predict(load_gp(bundle), Z)
    if method == "ensemble":
        return ensemble.ensemble_predict(ensemble.EnsembleModel.load(d), Z)
    if method == "mc_dropout":
        return bnn.mc_dropout_predict(_read_net(d / "network.json"), Z, cfg["mc_samples"], rng)
    if method in ("mh", "svgd"):
        net = _read_net(d / "network.json")
        samples = bnn.load_samples_csv(d / "samples.csv")
        return bnn.posterior_predict(samples, net, Z, "predictive", noise_std=cfg["noise_std"])
    if method == "mfvi":
        net = _read_net(d / "network.json")
        with np.load(d / "mfvi.npz") as z:
            q = bnn.MfviPosterior(z["mean"].copy(), z["log_std"].copy(), [])
        return bnn.posterior_predict(
            q, net, Z, "predictive", rng=rng, n_samples=cfg["posterior_samples"], noise_std=cfg["noise_std"]
        )
    if method == "sngp":
        return sngp.sngp_predict(sngp.SngpModel.load(d), Z)
    return sngp.dnn_gpr_predict(sngp.DnnGprModel.load(d), Z)


def predict_bundle(bundle: Bundle, X) -> tuple[GaussianPrediction, np.ndarray]:
    """Predict in original units; also returns the distance to the nearest
    training input (in standardized input space)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    D = bundle.train_inputs.shape[1]
    if X.shape[1] != D:
        raise data.DataError(f"inputs have {X.shape[1]} columns, the model expects {D}")
    if not np.all(np.isfinite(X)):
        raise data.DataError("inputs contain non-finite values")
    rec = bundle.standardization
    Z = rec.apply_x(X)
    pred = _predict_standardized(bundle, Z)
    dist = cKDTree(bundle.train_inputs).query(Z)[0] if Z.shape[0] else np.zeros(0)
    return pred.scaled(rec.y_mean, rec.y_std), np.asarray(dist, dtype=float)


def derived_run_seed(seed: int, index: int) -> int:
    """Seed for the ``index``-th entry of a batch of runs."""
    return derive_seed(seed, index) % (2**31)
