"""Deep ensembles of Gaussian-output networks.

Members share one architecture and see the full training set; they differ
only through their initialization and shuffling seeds. Predictions are
combined as an equal-weight Gaussian mixture, whose variance splits into
the average member variance (aleatory) and the spread of member means
(epistemic).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .nnet import DivergenceError, Network, NetworkSpec, TrainConfig, train
from .numerics import derive_seed
from .prediction import GaussianPrediction

__all__ = [
    "EnsembleModel",
    "MemberDivergenceError",
    "train_ensemble",
    "ensemble_predict",
    "aggregate",
    "decompose",
    "DEFAULT_SIZE",
]

DEFAULT_SIZE = 15


class MemberDivergenceError(DivergenceError):
    """A member diverged; ``member`` holds its index."""

    def __init__(self, member: int, cause: DivergenceError):
        self.member = int(member)
        super().__init__(cause.epoch, cause.loss)
        self.args = (f"ensemble member {member} diverged at epoch {cause.epoch}",)


@dataclass(frozen=True)
class EnsembleModel:
    """Trained members plus the configuration that produced them."""

    members: tuple
    config: TrainConfig
    master_seed: int

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        spec = self.members[0].spec
        if any(m.spec != spec for m in self.members):
            raise ValueError("ensemble members must share one NetworkSpec")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def spec(self) -> NetworkSpec:
        return self.members[0].spec

    def save(self, directory) -> None:
        """Write ``manifest.json`` and ``member_<i>.json`` files."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = []
        for i, m in enumerate(self.members):
            name = f"member_{i:03d}.json"
            (d / name).write_text(m.to_json(), encoding="utf-8")
            files.append(name)
        manifest = {
            "kind": "ensemble",
            "master_seed": self.master_seed,
            "config": self.config.__dict__,
            "members": files,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "EnsembleModel":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        members = [Network.from_json((d / f).read_text(encoding="utf-8")) for f in manifest["members"]]
        return cls(tuple(members), TrainConfig(**manifest["config"]), int(manifest["master_seed"]))


def train_ensemble(
    spec: NetworkSpec,
    X,
    y,
    M: int = DEFAULT_SIZE,
    config: TrainConfig = TrainConfig(loss="nll"),
    master_seed: int = 0,
) -> EnsembleModel:
    """Train ``M`` members with seeds derived from ``(master_seed, i)``.

    The derived seed drives both the weight initialization and the
    mini-batch order of member ``i``.

    Raises
    ------
    MemberDivergenceError
        If any member diverges.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    members = []
    for i in range(int(M)):
        seed = derive_seed(master_seed, i)
        net = Network.init(spec, seed)
        try:
            trained, _ = train(net, X, y, replace(config, seed=seed))
        except DivergenceError as exc:
            raise MemberDivergenceError(i, exc) from exc
        members.append(trained)
    return EnsembleModel(tuple(members), config, int(master_seed))


def decompose(means, variances) -> tuple[np.ndarray, np.ndarray]:
    """Law-of-total-variance split of member predictions.

    Parameters
    ----------
    means, variances : ndarray, shape (M, B)

    Returns
    -------
    aleatory : ndarray
        Average member variance.
    epistemic : ndarray
        Population variance of the member means.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    if means.shape != variances.shape:
        raise ValueError("means and variances must have the same shape")
    aleatory = variances.mean(axis=0)
    center = means.mean(axis=0)
    epistemic = np.mean((means - center) ** 2, axis=0)
    return aleatory, epistemic


def aggregate(means, variances) -> GaussianPrediction:
    """Moment-matched single Gaussian of an equal-weight mixture."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    aleatory, epistemic = decompose(means, variances)
    return GaussianPrediction(means.mean(axis=0), aleatory, epistemic)


def ensemble_predict(model: EnsembleModel, X) -> GaussianPrediction:
    """Mixture prediction of all members in eval mode.

    Scalar-output members contribute zero variance, so only the epistemic
    part is non-zero for them.
    """
    mus, vars_ = [], []
    for m in model.members:
        out = m._forward(X, "eval", None)[0]
        if isinstance(out, tuple):
            mus.append(out[0])
            vars_.append(out[1])
        else:
            mus.append(out)
            vars_.append(np.zeros_like(out))
    return aggregate(np.array(mus), np.array(vars_))
