"""Stationary covariance functions with log-space hyperparameters.

Supported families are the squared exponential (isotropic or with one
length scale per input dimension) and the Matérn class at the three
half-integer orders with closed forms. ``AbsoluteExponential`` is the
Matérn 1/2 kernel under its other common name.

Hyperparameter vectors are ordered ``[log sigma_f, log l_1, ..., log l_p]``
where ``p`` is 1 for isotropic kernels and ``D`` for ARD kernels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "KernelSpec",
    "UnsupportedOrderError",
    "kernel_eval",
    "cov_matrix",
    "kernel_grad",
    "FAMILIES",
]

FAMILIES = ("SquaredExponential", "ArdSquaredExponential", "Matern", "AbsoluteExponential")
MATERN_ORDERS = (Fraction(1, 2), Fraction(3, 2), Fraction(5, 2))
SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)


class UnsupportedOrderError(ValueError):
    """Matérn smoothness other than 1/2, 3/2 or 5/2."""


def _parse_nu(nu) -> Fraction:
    try:
        f = Fraction(nu).limit_denominator(8)
    except (TypeError, ValueError) as exc:
        raise UnsupportedOrderError(f"Matérn order {nu!r} is not a number") from exc
    if f not in MATERN_ORDERS or abs(float(nu) - float(f)) > 1e-12:
        raise UnsupportedOrderError(f"Matérn order {nu} unsupported; use 1/2, 3/2 or 5/2")
    return f


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel description.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``.
    sigma_f : float
        Signal amplitude; the prior variance is ``sigma_f**2``.
    length_scales : float or sequence of float
        A scalar for isotropic kernels, one entry per input dimension for
        ARD kernels. Matérn kernels accept either form.
    nu : float, optional
        Matérn order (required for ``family="Matern"``).
    """

    family: str
    sigma_f: float = 1.0
    length_scales: tuple = (1.0,)
    nu: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        ls = tuple(float(v) for v in np.atleast_1d(np.asarray(self.length_scales, dtype=float)))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "sigma_f", float(self.sigma_f))
        if not (np.isfinite(self.sigma_f) and self.sigma_f > 0):
            raise ValueError(f"sigma_f must be positive, got {self.sigma_f}")
        if len(ls) == 0 or not all(np.isfinite(v) and v > 0 for v in ls):
            raise ValueError(f"length scales must be positive, got {ls}")
        if self.family == "SquaredExponential" and len(ls) != 1:
            raise ValueError("SquaredExponential takes a single length scale; use ArdSquaredExponential")
        if self.family == "Matern":
            if self.nu is None:
                raise UnsupportedOrderError("Matern kernel requires nu")
            object.__setattr__(self, "nu", float(_parse_nu(self.nu)))
        elif self.family == "AbsoluteExponential":
            object.__setattr__(self, "nu", 0.5)
        elif self.nu is not None:
            raise ValueError(f"{self.family} does not take nu")

    # -- constructors -----------------------------------------------------
    @classmethod
    def squared_exponential(cls, length_scale: float = 1.0, sigma_f: float = 1.0) -> "KernelSpec":
        return cls("SquaredExponential", sigma_f, (length_scale,))

    @classmethod
    def ard(cls, length_scales, sigma_f: float = 1.0) -> "KernelSpec":
        return cls("ArdSquaredExponential", sigma_f, tuple(length_scales))

    @classmethod
    def matern(cls, nu: float, length_scales=1.0, sigma_f: float = 1.0) -> "KernelSpec":
        return cls("Matern", sigma_f, length_scales, nu)

    # -- properties -------------------------------------------------------
    @property
    def is_ard(self) -> bool:
        return len(self.length_scales) > 1 or self.family == "ArdSquaredExponential"

    @property
    def order(self) -> float | None:
        """Matérn order, or ``None`` for squared exponential kernels."""
        return self.nu

    @property
    def n_params(self) -> int:
        return 1 + len(self.length_scales)

    @property
    def log_params(self) -> np.ndarray:
        return np.log(np.r_[self.sigma_f, self.length_scales])

    def with_log_params(self, theta) -> "KernelSpec":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} log-parameters, got {theta.shape}")
        p = np.exp(theta)
        nu = self.nu if self.family == "Matern" else None
        return KernelSpec(self.family, p[0], tuple(p[1:]), nu)

    def check_dim(self, D: int) -> None:
        if self.family == "ArdSquaredExponential" or len(self.length_scales) > 1:
            if len(self.length_scales) != D:
                raise ValueError(
                    f"kernel has {len(self.length_scales)} length scales but inputs have {D} dimensions"
                )

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        d = {"family": self.family, "sigma_f": self.sigma_f, "length_scales": list(self.length_scales)}
        if self.family == "Matern":
            d["nu"] = self.nu
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        unknown = set(d) - {"family", "nu", "sigma_f", "length_scales"}
        if unknown:
            raise ValueError(f"unknown kernel keys {sorted(unknown)}")
        nu = d.get("nu") if d["family"] == "Matern" else None
        return cls(d["family"], d["sigma_f"], tuple(d["length_scales"]), nu)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "KernelSpec":
        return cls.from_dict(json.loads(s))


def _as_2d(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be an N x D array")
    return X


def _profile(kernel: KernelSpec, r: np.ndarray) -> np.ndarray:
    """Kernel value divided by ``sigma_f**2`` as a function of scaled distance."""
    nu = kernel.nu
    if nu is None:
        return np.exp(-0.5 * r * r)
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        s = SQRT3 * r
        return (1.0 + s) * np.exp(-s)
    s = SQRT5 * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _scaled_sqdist(kernel: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    ls = np.asarray(kernel.length_scales)
    return cdist(X / ls, Y / ls, "sqeuclidean")


def cov_matrix(kernel: KernelSpec, X, Y=None) -> np.ndarray:
    """Covariance matrix ``K[i, j] = k(X[i], Y[j])``.

    ``Y`` defaults to ``X``; the result is then exactly symmetric with
    ``sigma_f**2`` on the diagonal.
    """
    X = _as_2d(X, "X")
    Y = X if Y is None else _as_2d(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    kernel.check_dim(X.shape[1])
    r2 = _scaled_sqdist(kernel, X, Y)
    r = r2 if kernel.nu is None else np.sqrt(r2)
    if kernel.nu is None:
        K = kernel.sigma_f**2 * np.exp(-0.5 * r2)
    else:
        K = kernel.sigma_f**2 * _profile(kernel, r)
    if Y is X:
        K = 0.5 * (K + K.T)
    return K


def kernel_eval(kernel: KernelSpec, x, x2) -> float:
    """Covariance between two single input vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    kernel.check_dim(x.shape[0])
    ls = np.asarray(kernel.length_scales)
    d = (x - x2) / ls
    r2 = float(np.dot(d, d))
    if kernel.nu is None:
        return float(kernel.sigma_f**2 * np.exp(-0.5 * r2))
    return float(kernel.sigma_f**2 * _profile(kernel, np.sqrt(r2)))


def kernel_grad(kernel: KernelSpec, X, log_space: bool = True) -> np.ndarray:
    """Derivatives of ``cov_matrix(kernel, X)`` with respect to hyperparameters.

    Parameters
    ----------
    kernel : KernelSpec
    X : ndarray, shape (N, D)
    log_space : bool
        Differentiate with respect to ``log sigma_f`` and ``log l``
        (default) or with respect to the raw parameters.

    Returns
    -------
    ndarray, shape (n_params, N, N)
        Stacked in the order ``[sigma_f, l_1, ..., l_p]``.
    """
    X = _as_2d(X, "X")
    N, D = X.shape
    kernel.check_dim(D)
    ls = np.asarray(kernel.length_scales)
    K = cov_matrix(kernel, X)
    grads = np.empty((kernel.n_params, N, N))
    grads[0] = 2.0 * K

    # per-dimension scaled squared differences, summed for isotropic kernels
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2 / ls**2
    comps = diff2 if len(ls) > 1 else diff2.sum(axis=2, keepdims=True)
    r2 = diff2.sum(axis=2)
    r = np.sqrt(r2)
    s2 = kernel.sigma_f**2
    nu = kernel.nu
    if nu is None:
        factor = K
    elif nu == 0.5:
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(r > 0, s2 * np.exp(-r) / np.where(r > 0, r, 1.0), 0.0)
    elif nu == 1.5:
        factor = 3.0 * s2 * np.exp(-SQRT3 * r)
    else:
        factor = (5.0 / 3.0) * s2 * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)
    for j in range(comps.shape[2]):
        grads[1 + j] = factor * comps[:, :, j]

    if not log_space:
        params = np.r_[kernel.sigma_f, ls]
        grads = grads / params[:, None, None]
    return grads
