"""Dense linear algebra, seeded sampling and small numeric helpers.

Every stochastic routine in the package takes an explicit
:class:`numpy.random.Generator`; nothing touches global random state.
Generators are built on the counter-based Philox bit generator and child
streams are derived deterministically from ``(seed, index, ...)`` keys so
that serial and parallel runs draw identical numbers.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.special import expit

__all__ = [
    "DecompositionError",
    "SingularSystemError",
    "make_rng",
    "derive_seed",
    "cholesky",
    "cholesky_with_nugget",
    "tri_solve",
    "sample_mvn",
    "power_iteration",
    "softplus",
    "softplus_grad",
]

NUGGET_START = 1e-6
NUGGET_STOP = 1e-2


class DecompositionError(np.linalg.LinAlgError):
    """Cholesky factorization failed.

    Attributes
    ----------
    pivot : int
        Zero-based index of the leading minor that was not positive.
    """

    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = int(pivot)
        super().__init__(
            message or f"matrix is not positive definite (failing pivot index {self.pivot})"
        )


class SingularSystemError(np.linalg.LinAlgError):
    """Triangular system with a zero on the diagonal."""


def make_rng(seed: int | None, *keys: int) -> np.random.Generator:
    """Return a Philox generator for the stream identified by ``(seed, *keys)``.

    Parameters
    ----------
    seed : int or None
        Master seed. ``None`` draws fresh OS entropy.
    *keys : int
        Child-stream indices, for example ``(member_index,)``.
    """
    if seed is None:
        ss = np.random.SeedSequence()
    else:
        ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _check_square(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


def cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == A``.

    Raises
    ------
    DecompositionError
        If ``A`` is not positive definite. ``err.pivot`` names the first
        leading minor that failed.
    """
    A = _check_square(A)
    if A.shape[0] == 0:
        return A.copy()
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    L, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise DecompositionError(info - 1)
    if info < 0:  # pragma: no cover - argument error inside LAPACK
        raise ValueError(f"dpotrf argument {-info} invalid")
    return L


def cholesky_with_nugget(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky with diagonal jitter escalation.

    Tries the plain factorization first. On failure, adds
    ``1e-6 * mean(diag(A))`` to the diagonal and multiplies the jitter by
    ten until it reaches ``1e-2 * mean(diag(A))``.

    Returns
    -------
    L : ndarray
        Lower factor of ``A + jitter * I``.
    jitter : float
        Amount added to the diagonal (0.0 when none was needed).
    """
    A = _check_square(A)
    try:
        return cholesky(A), 0.0
    except DecompositionError as first:
        scale = float(np.mean(np.abs(np.diag(A))))
        if not scale > 0:
            raise first
        eye = np.eye(A.shape[0])
        factor = NUGGET_START
        while factor <= NUGGET_STOP * (1 + 1e-9):
            jitter = factor * scale
            try:
                return cholesky(A + jitter * eye), jitter
            except DecompositionError:
                factor *= 10.0
        raise DecompositionError(
            first.pivot,
            f"matrix is not positive definite even with jitter {NUGGET_STOP:g}*mean(diag) "
            f"(failing pivot index {first.pivot})",
        )


def tri_solve(L: np.ndarray, b: np.ndarray, transposed: bool = False) -> np.ndarray:
    """Solve ``L x = b`` (or ``L.T x = b``) for lower-triangular ``L``.

    ``b`` may be a vector or a matrix of right-hand sides.
    """
    L = _check_square(L)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != L.shape[0]:
        raise ValueError(f"shape mismatch: L is {L.shape}, b is {b.shape}")
    diag = np.diag(L)
    if np.any(diag == 0):
        raise SingularSystemError(
            f"triangular matrix is singular (zero diagonal at index {int(np.argmin(np.abs(diag)))})"
        )
    return solve_triangular(L, b, lower=True, trans=1 if transposed else 0, check_finite=False)


def sample_mvn(
    rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray, n: int
) -> np.ndarray:
    """Draw ``n`` samples from ``N(mean, cov)``; returns an ``n x d`` array.

    The covariance is factorized with :func:`cholesky_with_nugget`. An
    all-zero covariance yields ``n`` copies of the mean.
    """
    mean = np.asarray(mean, dtype=float).ravel()
    cov = _check_square(cov)
    d = mean.shape[0]
    if cov.shape[0] != d:
        raise ValueError(f"mean has length {d} but covariance is {cov.shape}")
    if not np.any(cov):
        return np.tile(mean, (int(n), 1))
    L, _ = cholesky_with_nugget(cov)
    z = rng.standard_normal((int(n), d))
    return mean + z @ L.T


def power_iteration(
    W: np.ndarray,
    iters: int = 100,
    tol: float = 1e-10,
    v0: np.ndarray | None = None,
    return_history: bool = False,
):
    """Estimate the largest singular value of ``W`` by power iteration.

    Iterates ``v <- W.T W v / |W.T W v|`` and reports ``|W v|``. The
    estimate never exceeds the true norm and, for positive semi-definite
    ``W.T W``, increases monotonically.

    Parameters
    ----------
    W : ndarray, shape (m, n)
    iters : int
        Maximum number of iterations.
    tol : float
        Stop once the relative change of the estimate falls below ``tol``.
    v0 : ndarray, optional
        Warm-start right vector. Defaults to a normalized ones vector.
    return_history : bool
        Also return the estimate after every iteration.

    Returns
    -------
    sigma : float
    u : ndarray, shape (m,)
        Left singular vector estimate.
    v : ndarray, shape (n,)
        Right singular vector estimate.
    history : list of float
        Only when ``return_history`` is true.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ValueError("W must be a matrix")
    m, n = W.shape
    v = np.ones(n) if v0 is None else np.array(v0, dtype=float).ravel()
    nv = np.linalg.norm(v)
    if nv == 0:
        v = np.ones(n)
        nv = np.linalg.norm(v)
    v = v / nv
    history: list[float] = []
    if not np.any(W):
        u = np.zeros(m)
        return (0.0, u, v, history) if return_history else (0.0, u, v)

    Wv = W @ v
    sigma = float(np.linalg.norm(Wv))
    history.append(sigma)
    for _ in range(int(iters)):
        w = W.T @ Wv
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
        Wv = W @ v
        new = float(np.linalg.norm(Wv))
        history.append(new)
        done = abs(new - sigma) <= tol * new
        sigma = new
        if done:
            break
    u = Wv / sigma if sigma > 0 else np.zeros(m)
    if return_history:
        return sigma, u, v, history
    return sigma, u, v


def softplus(x: np.ndarray) -> np.ndarray:
    """Numerically stable ``log(1 + exp(x))``."""
    return np.logaddexp(0.0, x)


def softplus_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of :func:`softplus`, the logistic sigmoid."""
    return expit(x)
