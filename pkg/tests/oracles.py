"""Independent reference computations shared by the test modules.

Each oracle uses a different numerical route than the library (explicit
inverses, brute-force sampling, quadrature) so agreement is meaningful.
"""

import numpy as np


def se_kernel(A, B, length_scale, sigma_f):
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return sigma_f**2 * np.exp(-0.5 * d2 / length_scale**2)


def joint_gaussian_conditioning(K_full, n_train, y, prior_mean, noise_std):
    """Condition the joint prior of (train, test) blocks with a dense inverse.

    ``K_full`` is the (N+M) x (N+M) latent covariance with the training
    block first. Returns the latent posterior mean and covariance of the
    test block.
    """
    N = n_train
    Kxx = K_full[:N, :N] + noise_std**2 * np.eye(N)
    Kxs = K_full[:N, N:]
    Kss = K_full[N:, N:]
    inv = np.linalg.inv(Kxx)
    mean = prior_mean + Kxs.T @ inv @ (y - prior_mean)
    cov = Kss - Kxs.T @ inv @ Kxs
    return mean, cov


def dense_lml(K, y, noise_std):
    """Log marginal likelihood via explicit inverse and determinant."""
    N = y.size
    C = K + noise_std**2 * np.eye(N)
    sign, logdet = np.linalg.slogdet(C)
    assert sign > 0
    return float(-0.5 * y @ np.linalg.inv(C) @ y - 0.5 * logdet - 0.5 * N * np.log(2 * np.pi))


def mixture_moments_by_sampling(means, variances, n, rng):
    """Two-stage sampling: member index, then a Gaussian draw."""
    means = np.asarray(means)
    variances = np.asarray(variances)
    M = means.shape[0]
    idx = rng.integers(0, M, size=(n,) + means.shape[1:])
    mu = np.take_along_axis(means, idx, axis=0)
    sd = np.sqrt(np.take_along_axis(variances, idx, axis=0))
    draws = mu + sd * rng.standard_normal(mu.shape)
    return draws.mean(axis=0), draws.var(axis=0)


def central_difference(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2 * h)
    return g


def max_relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
