"""Exact Gaussian process regression.

The model centers the targets on their training mean and treats that
offset as a constant prior mean. Hyperparameters (signal amplitude,
length scales and observation noise) are optimized in log space by
maximizing the log marginal likelihood from several starting points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .kernels import KernelSpec, cov_matrix, kernel_grad
from .numerics import cholesky_with_nugget, sample_mvn, tri_solve
from .prediction import GaussianPrediction

__all__ = [
    "GpModel",
    "GaussianPrediction",
    "fit",
    "log_marginal_likelihood",
    "predict",
    "sample_prior",
    "sample_posterior",
]

LOG_2PI = np.log(2.0 * np.pi)
NOISE_FLOOR = 1e-5  # lower bound of the noise search relative to target std


@dataclass(frozen=True)
class GpModel:
    """Fitted GP regressor with cached Cholesky factor and weights.

    Attributes
    ----------
    X_train : ndarray, shape (N, D)
    y_train : ndarray, shape (N,)
        Centered targets.
    offset : float
        Constant prior mean added back at prediction time.
    kernel : KernelSpec
    noise_std : float
    L : ndarray
        Lower Cholesky factor of ``K + (noise_std**2 + jitter) I``.
    alpha : ndarray
        ``(K + noise_std**2 I)^{-1} y_train``.
    jitter : float
        Diagonal nugget that was needed to factorize, usually 0.
    """

    X_train: np.ndarray
    y_train: np.ndarray
    offset: float
    kernel: KernelSpec
    noise_std: float
    L: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def n_train(self) -> int:
        return self.X_train.shape[0]

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "noise_std": self.noise_std,
            "X_train": self.X_train.tolist(),
            "y_train": self.y_train.tolist(),
            "offset": self.offset,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        X = np.asarray(d["X_train"], dtype=float).reshape(len(d["y_train"]), -1)
        y = np.asarray(d["y_train"], dtype=float)
        return _build(X, y, float(d["offset"]), KernelSpec.from_dict(d["kernel"]), float(d["noise_std"]))

    @classmethod
    def from_json(cls, s: str) -> "GpModel":
        return cls.from_dict(json.loads(s))


def _as_inputs(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _build(X, yc, offset, kernel, noise_std) -> GpModel:
    K = cov_matrix(kernel, X)
    K[np.diag_indices_from(K)] += noise_std**2
    L, jitter = cholesky_with_nugget(K)
    alpha = tri_solve(L, tri_solve(L, yc), transposed=True)
    return GpModel(X, yc, offset, kernel, float(noise_std), L, alpha, jitter)


def _lml_and_grad(kernel: KernelSpec, X, yc, log_noise, with_noise_grad: bool):
    """Log marginal likelihood and its gradient in log-hyperparameters."""
    noise2 = np.exp(2.0 * log_noise)
    K = cov_matrix(kernel, X)
    K[np.diag_indices_from(K)] += noise2
    L, _ = cholesky_with_nugget(K)
    alpha = tri_solve(L, tri_solve(L, yc), transposed=True)
    N = X.shape[0]
    lml = -0.5 * yc @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * N * LOG_2PI
    Linv = tri_solve(L, np.eye(N))
    Kinv = Linv.T @ Linv
    W = np.outer(alpha, alpha) - Kinv
    dK = kernel_grad(kernel, X)
    grad = 0.5 * np.einsum("ij,kji->k", W, dK)
    if with_noise_grad:
        grad = np.r_[grad, noise2 * np.trace(W)]
    return float(lml), grad


def log_marginal_likelihood(model: GpModel, return_grad: bool = False):
    """Log marginal likelihood of the (centered) training targets.

    Parameters
    ----------
    model : GpModel
    return_grad : bool
        Also return the gradient with respect to
        ``[log sigma_f, log l..., log noise_std]``. The noise entry is
        omitted when ``noise_std`` is zero.
    """
    N = model.n_train
    lml = float(-0.5 * model.y_train @ model.alpha - np.sum(np.log(np.diag(model.L))) - 0.5 * N * LOG_2PI)
    if not return_grad:
        return lml
    with_noise = model.noise_std > 0
    log_noise = np.log(model.noise_std) if with_noise else -np.inf
    _, grad = _lml_and_grad(model.kernel, model.X_train, model.y_train, log_noise, with_noise)
    return lml, grad


def fit(
    X,
    y,
    kernel: KernelSpec,
    noise_std: float = 0.1,
    optimize: bool = True,
    restarts: int = 5,
    rng: np.random.Generator | None = None,
    optimize_noise: bool = True,
) -> GpModel:
    """Condition a GP on training data, optionally tuning hyperparameters.

    Parameters
    ----------
    X : ndarray, shape (N, D)
    y : ndarray, shape (N,)
    kernel : KernelSpec
        Kernel family and starting hyperparameters.
    noise_std : float
        Observation noise standard deviation (starting value when optimized).
    optimize : bool
        Maximize the log marginal likelihood over hyperparameters.
    restarts : int
        Extra random starting points besides the supplied hyperparameters.
    rng : numpy.random.Generator, optional
        Source of random restarts; required when ``restarts > 0``.
    optimize_noise : bool
        When false, ``noise_std`` is held fixed (noise-free surrogate mode
        uses ``noise_std=0``).

    Returns
    -------
    GpModel
    """
    X = _as_inputs(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("cannot fit a Gaussian process to zero training points")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data contain non-finite values")
    kernel.check_dim(X.shape[1])
    offset = float(np.mean(y))
    yc = y - offset
    if not optimize:
        return _build(X, yc, offset, kernel, noise_std)

    tune_noise = optimize_noise and noise_std > 0
    kernel, noise_std = _optimize(X, yc, kernel, noise_std, tune_noise, restarts, rng)
    return _build(X, yc, offset, kernel, noise_std)


def _optimize(X, yc, kernel, noise_std, tune_noise, restarts, rng):
    ystd = float(np.std(yc)) if yc.size > 1 and np.std(yc) > 0 else 1.0
    xspan = float(np.max(np.ptp(X, axis=0))) if X.shape[0] > 1 else 1.0
    xspan = xspan if xspan > 0 else 1.0
    n_k = kernel.n_params
    # generous box in log space keeps the search away from degenerate limits
    lo = np.r_[np.log(1e-3 * ystd), np.full(n_k - 1, np.log(1e-3 * xspan))]
    hi = np.r_[np.log(1e3 * ystd), np.full(n_k - 1, np.log(1e3 * xspan))]
    if tune_noise:
        lo = np.r_[lo, np.log(NOISE_FLOOR * ystd)]
        hi = np.r_[hi, np.log(10.0 * ystd)]
    bounds = list(zip(lo, hi))

    fixed_log_noise = np.log(noise_std) if noise_std > 0 else -np.inf

    def split(theta):
        if tune_noise:
            return kernel.with_log_params(theta[:-1]), theta[-1]
        return kernel.with_log_params(theta), fixed_log_noise

    def objective(theta):
        k, ln = split(theta)
        try:
            val, g = _lml_and_grad(k, X, yc, ln, tune_noise)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        return -val, -g

    starts = [np.r_[kernel.log_params, np.log(noise_std)] if tune_noise else kernel.log_params]
    if restarts > 0:
        if rng is None:
            raise ValueError("rng is required for random restarts")
        for _ in range(int(restarts)):
            s = np.r_[
                np.log(ystd) + rng.uniform(np.log(1e-2), np.log(1e2)),
                np.log(xspan) + rng.uniform(np.log(1e-2), np.log(1e2), size=n_k - 1),
            ]
            if tune_noise:
                s = np.r_[s, np.log(ystd) + rng.uniform(np.log(1e-3), np.log(1.0))]
            starts.append(s)

    best_theta, best_val = None, np.inf
    for s in starts:
        s = np.clip(s, lo, hi)
        res = minimize(objective, s, jac=True, method="L-BFGS-B", bounds=bounds)
        cand = [(res.fun, res.x), (objective(s)[0], s)]
        for val, theta in cand:
            if val < best_val:
                best_val, best_theta = val, theta
    k, ln = split(best_theta)
    return k, float(np.exp(ln)) if np.isfinite(ln) else 0.0


def _posterior_moments(model: GpModel, Xs: np.ndarray, full_cov: bool):
    Xs = _as_inputs(Xs)
    if Xs.shape[1] != model.X_train.shape[1]:
        raise ValueError(f"dimension mismatch: model has D={model.X_train.shape[1]}, inputs have {Xs.shape[1]}")
    Ks = cov_matrix(model.kernel, model.X_train, Xs)
    mean = model.offset + Ks.T @ model.alpha
    V = tri_solve(model.L, Ks)
    if full_cov:
        cov = cov_matrix(model.kernel, Xs) - V.T @ V
        return mean, 0.5 * (cov + cov.T)
    var = model.kernel.sigma_f**2 - np.einsum("ij,ij->j", V, V)
    return mean, np.maximum(var, 0.0)


def predict(model: GpModel, Xs, include_noise: bool = True) -> GaussianPrediction:
    """Posterior predictive mean and variance split at ``Xs``.

    The epistemic part is the posterior variance of the latent function;
    the aleatory part is ``noise_std**2`` when ``include_noise`` is set.
    """
    mean, var = _posterior_moments(model, Xs, full_cov=False)
    ale = model.noise_std**2 if include_noise else 0.0
    return GaussianPrediction(mean, np.full_like(mean, ale), var)


def sample_prior(kernel: KernelSpec, Xs, n: int, rng: np.random.Generator, mean: float = 0.0) -> np.ndarray:
    """Draw ``n`` prior function samples at ``Xs``; returns ``n x M``."""
    Xs = _as_inputs(Xs)
    K = cov_matrix(kernel, Xs)
    return sample_mvn(rng, np.full(Xs.shape[0], float(mean)), K, n)


def sample_posterior(model: GpModel, Xs, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` posterior latent-function samples at ``Xs``; returns ``n x M``."""
    mean, cov = _posterior_moments(model, Xs, full_cov=True)
    return sample_mvn(rng, mean, cov, n)
