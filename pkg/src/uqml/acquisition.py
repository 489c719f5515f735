"""Acquisition functions and a GP refinement loop.

* Expected feasibility (EFF) and the U function target a level set
  ``f(x) = e`` (reliability analysis, contour estimation).
* Expected improvement (EI) targets the global minimum.

All functions accept arrays of predictive means and standard deviations
and return one value per candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import gpr

__all__ = [
    "AcquisitionSpec",
    "RefineTrace",
    "OracleError",
    "eff",
    "u_function",
    "ei",
    "evaluate",
    "refine",
]

INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class OracleError(RuntimeError):
    """The truth oracle failed during refinement."""

    def __init__(self, iteration: int, cause: BaseException):
        self.iteration = int(iteration)
        super().__init__(f"oracle failed at iteration {iteration}: {cause}")


def _pdf(z):
    return INV_SQRT_2PI * np.exp(-0.5 * z * z)


def eff(mean, std, e: float, tau=None) -> np.ndarray:
    """Expected feasibility ``E[max(tau - |e - Y|, 0)]`` for ``Y ~ N(mean, std^2)``.

    Parameters
    ----------
    mean, std : array_like
    e : float
        Level-set threshold.
    tau : float or array_like, optional
        Half-width of the feasibility band; defaults to ``2 * std``.
        Zero standard deviation returns the point-mass limit
        ``max(tau - |e - mean|, 0)``.
    """
    mu = np.asarray(mean, dtype=float)
    sd = np.asarray(std, dtype=float)
    if np.any(sd < 0):
        raise ValueError("standard deviations must be non-negative")
    t = 2.0 * sd if tau is None else np.broadcast_to(np.asarray(tau, dtype=float), np.broadcast(mu, sd).shape)
    if np.any(t < 0):
        raise ValueError("tau must be non-negative")
    pos = sd > 0
    s = np.where(pos, sd, 1.0)
    z = (e - mu) / s
    zl = (e - t - mu) / s
    zu = (e + t - mu) / s
    val = (
        (mu - e) * (2.0 * ndtr(z) - ndtr(zl) - ndtr(zu))
        - s * (2.0 * _pdf(z) - _pdf(zl) - _pdf(zu))
        + t * (ndtr(zu) - ndtr(zl))
    )
    limit = np.maximum(t - np.abs(e - mu), 0.0)
    return np.where(pos, val, limit)


def u_function(mean, std, e: float, return_flag: bool = False):
    """``|mean - e| / std``; zero std gives ``+inf`` (flagged when requested)."""
    mu = np.asarray(mean, dtype=float)
    sd = np.asarray(std, dtype=float)
    flag = sd <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(flag, np.inf, np.abs(mu - e) / np.where(flag, 1.0, sd))
    return (val, flag) if return_flag else val


def ei(mean, std, f_min: float) -> np.ndarray:
    """Expected improvement below ``f_min`` for minimization."""
    mu = np.asarray(mean, dtype=float)
    sd = np.asarray(std, dtype=float)
    if np.any(sd < 0):
        raise ValueError("standard deviations must be non-negative")
    pos = sd > 0
    s = np.where(pos, sd, 1.0)
    d = f_min - mu
    z = d / s
    val = d * ndtr(z) + s * _pdf(z)
    return np.where(pos, val, np.maximum(d, 0.0))


@dataclass(frozen=True)
class AcquisitionSpec:
    """Which acquisition function to use and its parameters.

    Parameters
    ----------
    kind : {"eff", "u", "ei"}
    threshold : float
        Level ``e`` for EFF and U.
    tau : float, optional
        Fixed EFF half-width; ``None`` uses ``2 * std``.
    """

    kind: str
    threshold: float = 0.0
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("eff", "u", "ei"):
            raise ValueError(f"acquisition must be 'eff', 'u' or 'ei', got {self.kind!r}")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def maximize(self) -> bool:
        return self.kind != "u"


def evaluate(spec: AcquisitionSpec, mean, std, f_min: float | None = None) -> np.ndarray:
    if spec.kind == "eff":
        return eff(mean, std, spec.threshold, spec.tau)
    if spec.kind == "u":
        return u_function(mean, std, spec.threshold)
    if f_min is None:
        raise ValueError("expected improvement needs f_min")
    return ei(mean, std, f_min)


@dataclass(frozen=True)
class RefineTrace:
    """One row per refinement iteration."""

    iteration: np.ndarray
    x: np.ndarray
    acquisition: np.ndarray
    observed: np.ndarray
    candidate_index: np.ndarray

    def to_columns(self) -> dict:
        cols = {"iteration": self.iteration}
        for j in range(self.x.shape[1] if self.x.ndim == 2 else 0):
            cols[f"x{j + 1}"] = self.x[:, j]
        cols["acquisition"] = self.acquisition
        cols["oracle"] = self.observed
        return cols


def refine(
    model: gpr.GpModel,
    oracle,
    acquisition: AcquisitionSpec,
    candidates,
    budget: int,
    rng: np.random.Generator | None = None,
    optimize: bool = True,
    restarts: int = 0,
) -> tuple[gpr.GpModel, RefineTrace]:
    """Sequentially add the best candidate to the GP training set.

    Each iteration predicts the latent function (no noise term) at every
    candidate, picks the argmax of EFF/EI or the argmin of U (lowest index
    on ties), queries ``oracle`` there and refits the GP. Hyperparameters
    are re-optimized from the current values when ``optimize`` is set; the
    noise level stays fixed.

    Parameters
    ----------
    model : GpModel
    oracle : callable
        ``oracle(x) -> float`` for a single candidate row.
    acquisition : AcquisitionSpec
    candidates : ndarray, shape (C, D)
    budget : int
    rng : numpy.random.Generator, optional
        Needed when ``restarts > 0``.

    Raises
    ------
    OracleError
        When ``oracle`` raises; carries the iteration index.
    """
    C = np.asarray(candidates, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    if C.shape[0] == 0:
        raise ValueError("candidate set is empty")
    if budget < 0:
        raise ValueError("budget must be non-negative")
    X = model.X_train.copy()
    y = model.y_train + model.offset
    its, xs, vals, obs, idxs = [], [], [], [], []
    for it in range(1, int(budget) + 1):
        pred = gpr.predict(model, C, include_noise=False)
        sd = np.sqrt(pred.variance_epistemic)
        a = evaluate(acquisition, pred.mean, sd, float(np.min(y)))
        k = int(np.argmax(a) if acquisition.maximize else np.argmin(a))
        try:
            f = float(oracle(C[k]))
        except Exception as exc:  # propagate with context
            raise OracleError(it, exc) from exc
        X = np.vstack([X, C[k]])
        y = np.r_[y, f]
        model = gpr.fit(
            X,
            y,
            model.kernel,
            model.noise_std,
            optimize=optimize,
            restarts=restarts,
            rng=rng,
            optimize_noise=False,
        )
        its.append(it)
        xs.append(C[k])
        vals.append(float(a[k]))
        obs.append(f)
        idxs.append(k)
    trace = RefineTrace(
        np.asarray(its, dtype=int),
        np.asarray(xs, dtype=float).reshape(len(its), C.shape[1]),
        np.asarray(vals),
        np.asarray(obs),
        np.asarray(idxs, dtype=int),
    )
    return model, trace
