"""Posterior inference over network parameters.

A :class:`LogPosterior` couples a network with a dataset, an isotropic
Gaussian prior and (for scalar-output networks) a fixed Gaussian noise
level. Samplers and variational fits only need ``lp(theta) -> (value,
grad)``; any callable with that signature, such as :class:`GaussianTarget`,
can stand in for a network posterior.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .ensemble import aggregate
from .nnet import DivergenceError, Network, NetworkSpec, _Adam
from .prediction import GaussianPrediction

__all__ = [
    "LogPosterior",
    "GaussianTarget",
    "MfviPosterior",
    "MhResult",
    "log_posterior",
    "mh_sample",
    "mfvi_fit",
    "gaussian_kl",
    "svgd_step",
    "svgd",
    "median_bandwidth",
    "mc_dropout_predict",
    "posterior_predict",
    "save_samples_csv",
    "load_samples_csv",
    "parameter_names",
]

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class LogPosterior:
    """Unnormalized log posterior of network parameters.

    ``log p(theta | D) = log p(y | X, theta) + log p(theta) + const`` with

    * likelihood ``N(y | f(x; theta), noise_std^2)`` for scalar outputs, or
      ``N(y | mu(x; theta), var(x; theta))`` for Gaussian outputs;
    * prior ``N(0, prior_std^2 I)``.

    Parameters
    ----------
    net : Network or NetworkSpec or None
        Network template (its parameter values are ignored). ``None`` gives
        the parameter-free model ``f = 0``.
    X, y : ndarray
        Training data; may be empty.
    prior_std : float
    noise_std : float
        Observation noise for scalar-output networks.
    """

    def __init__(self, net, X, y, prior_std: float = 1.0, noise_std: float = 0.1):
        if isinstance(net, NetworkSpec):
            net = Network.init(net, 0)
        self.net = net
        y = np.asarray(y, dtype=float).ravel()
        D = net.spec.input_dim if net is not None else 1
        self.X = np.asarray(X, dtype=float).reshape(y.size, -1) if y.size else np.zeros((0, D))
        self.y = y
        if prior_std <= 0 or noise_std <= 0:
            raise ValueError("prior_std and noise_std must be positive")
        self.prior_std = float(prior_std)
        self.noise_std = float(noise_std)
        self.gaussian_output = net is not None and net.spec.output_kind == "GaussianOutput"

    @property
    def dim(self) -> int:
        return 0 if self.net is None else self.net.n_params

    def log_prior(self, theta):
        theta = self._check(theta)
        s2 = self.prior_std**2
        val = -theta.size * (HALF_LOG_2PI + np.log(self.prior_std)) - 0.5 * theta @ theta / s2
        return float(val), -theta / s2

    def log_likelihood(self, theta):
        theta = self._check(theta)
        N = self.y.size
        if N == 0:
            return 0.0, np.zeros_like(theta)
        if self.net is None:
            r = self.y
            return float(-N * (HALF_LOG_2PI + np.log(self.noise_std)) - 0.5 * r @ r / self.noise_std**2), theta
        net = self.net.with_theta(theta)
        out, cache = net._forward(self.X, "eval", None)
        if self.gaussian_output:
            mu, var = out
            r = self.y - mu
            val = -np.sum(HALF_LOG_2PI + 0.5 * np.log(var) + 0.5 * r * r / var)
            g_mu = r / var
            g_var = -0.5 / var + 0.5 * r * r / (var * var)
            grad = net._backward(cache, (g_mu, g_var))
        else:
            r = self.y - out
            s2 = self.noise_std**2
            val = -N * (HALF_LOG_2PI + np.log(self.noise_std)) - 0.5 * r @ r / s2
            grad = net._backward(cache, r / s2)
        return float(val), grad

    def __call__(self, theta):
        lv, lg = self.log_likelihood(theta)
        pv, pg = self.log_prior(theta)
        return lv + pv, lg + pg

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.dim:
            raise ValueError(f"theta has {theta.size} entries, posterior expects {self.dim}")
        return theta


class GaussianTarget:
    """Multivariate normal log density with gradient, for testing samplers."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.precision = np.linalg.inv(self.cov)
        _, logdet = np.linalg.slogdet(self.cov)
        self._const = -self.mean.size * HALF_LOG_2PI - 0.5 * logdet

    @property
    def dim(self) -> int:
        return self.mean.size

    def __call__(self, theta):
        d = np.asarray(theta, dtype=float).ravel() - self.mean
        Pd = self.precision @ d
        return float(self._const - 0.5 * d @ Pd), -Pd


def log_posterior(lp, theta):
    """Evaluate ``lp`` at ``theta``; returns ``(value, gradient)``."""
    return lp(theta)


def _value(lp, theta) -> float:
    out = lp(theta)
    return float(out[0]) if isinstance(out, tuple) else float(out)


# --------------------------------------------------------------------------
# Metropolis-Hastings
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class MhResult:
    """Random-walk Metropolis-Hastings output.

    Attributes
    ----------
    chain : ndarray, shape (steps, K)
        State after each step.
    log_prob : ndarray, shape (steps,)
    acceptance_rate : float
        Fraction of accepted proposals over all steps.
    proposal_std : float
        Final proposal scale (differs from the initial one when adapted).
    """

    chain: np.ndarray
    log_prob: np.ndarray
    acceptance_rate: float
    proposal_std: float


def mh_sample(
    lp,
    theta0,
    steps: int,
    proposal_std: float,
    rng: np.random.Generator,
    adapt: bool = False,
    adapt_steps: int | None = None,
    target_acceptance: float = 0.3,
) -> MhResult:
    """Random-walk Metropolis-Hastings with an isotropic Gaussian proposal.

    Parameters
    ----------
    lp : callable
        ``lp(theta)`` returning the log density (or ``(value, grad)``).
    theta0 : ndarray, shape (K,)
    steps : int
    proposal_std : float
    rng : numpy.random.Generator
    adapt : bool
        Tune the proposal scale toward ``target_acceptance`` every 100
        steps during the first ``adapt_steps`` steps (default half the
        run). The scale is frozen afterwards, so later samples follow an
        ordinary symmetric-proposal chain.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    theta = np.array(theta0, dtype=float).ravel()
    K = theta.size
    cur = _value(lp, theta)
    chain = np.empty((steps, K))
    logp = np.empty(steps)
    scale = float(proposal_std)
    adapt_until = (steps // 2 if adapt_steps is None else int(adapt_steps)) if adapt else 0
    accepted = 0
    window = 0
    noise = rng.standard_normal((steps, K))
    log_u = np.log(rng.random(steps))
    for t in range(steps):
        prop = theta + scale * noise[t]
        new = _value(lp, prop)
        if log_u[t] < new - cur:
            theta, cur = prop, new
            accepted += 1
            window += 1
        chain[t] = theta
        logp[t] = cur
        if t < adapt_until and (t + 1) % 100 == 0:
            scale *= float(np.exp(window / 100.0 - target_acceptance))
            window = 0
    return MhResult(chain, logp, accepted / steps, scale)


# --------------------------------------------------------------------------
# mean-field variational inference
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class MfviPosterior:
    """Factorized Gaussian ``q(theta) = prod_k N(mean_k, exp(log_std_k)^2)``."""

    mean: np.ndarray
    log_std: np.ndarray
    elbo_history: tuple = ()

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((int(n), self.mean.size))


def gaussian_kl(mean_q, std_q, mean_p, std_p) -> float:
    """``KL(N(mean_q, std_q^2) || N(mean_p, std_p^2))`` summed over coordinates."""
    mean_q, std_q = np.asarray(mean_q, float), np.asarray(std_q, float)
    mean_p, std_p = np.asarray(mean_p, float), np.asarray(std_p, float)
    r = std_q / std_p
    return float(np.sum(-np.log(r) + 0.5 * (r * r + ((mean_q - mean_p) / std_p) ** 2) - 0.5))


def mfvi_fit(
    lp,
    init: np.ndarray | MfviPosterior,
    n_mc: int,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    init_std: float = 0.1,
    average_last: float = 0.1,
) -> MfviPosterior:
    """Fit a mean-field Gaussian by stochastic ELBO ascent.

    With a :class:`LogPosterior` the ELBO is
    ``E_q[log p(y | theta)] - KL(q || prior)`` with the KL term in closed
    form. For any other target the ELBO is ``E_q[log lp] + H(q)``.
    Expectations use ``n_mc`` reparameterized draws
    ``theta = mean + std * eps`` and parameters are updated with Adam.

    Parameters
    ----------
    lp : LogPosterior or callable
    init : ndarray or MfviPosterior
        Initial mean (the initial std is ``init_std``) or a full posterior.
    n_mc : int
    epochs : int
        Number of gradient steps.
    lr : float
    rng : numpy.random.Generator
    init_std : float
    average_last : float
        Fraction of final iterates averaged into the returned parameters,
        which suppresses the Monte Carlo jitter of the last step.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    if isinstance(init, MfviPosterior):
        mean, log_std = init.mean.copy(), init.log_std.copy()
    else:
        mean = np.array(init, dtype=float).ravel()
        log_std = np.full(mean.size, np.log(init_std))
    K = mean.size
    structured = isinstance(lp, LogPosterior)
    opt = _Adam(2 * K, lr)
    params = np.r_[mean, log_std]
    history: list[float] = []
    n_avg = max(1, int(round(average_last * epochs))) if epochs else 0
    acc = np.zeros(2 * K)
    for epoch in range(1, epochs + 1):
        mean, log_std = params[:K], params[K:]
        std = np.exp(log_std)
        eps = rng.standard_normal((n_mc, K))
        g_mean = np.zeros(K)
        g_logstd = np.zeros(K)
        expect = 0.0
        for e in eps:
            theta = mean + std * e
            val, g = lp.log_likelihood(theta) if structured else lp(theta)
            expect += val
            g_mean += g
            g_logstd += g * std * e
        expect /= n_mc
        g_mean /= n_mc
        g_logstd /= n_mc
        if structured:
            s2 = lp.prior_std**2
            kl = gaussian_kl(mean, std, 0.0, lp.prior_std)
            elbo = expect - kl
            g_mean -= mean / s2
            g_logstd -= std * std / s2 - 1.0
        else:
            elbo = expect + float(np.sum(log_std)) + K * (HALF_LOG_2PI + 0.5)
            g_logstd += 1.0
        if not np.isfinite(elbo):
            raise DivergenceError(epoch, elbo)
        history.append(float(elbo))
        opt.step(params, -np.r_[g_mean, g_logstd])
        if epoch > epochs - n_avg:
            acc += params
    if n_avg:
        params = acc / n_avg
    return MfviPosterior(params[:K].copy(), params[K:].copy(), tuple(history))


# --------------------------------------------------------------------------
# Stein variational gradient descent
# --------------------------------------------------------------------------
def median_bandwidth(particles: np.ndarray) -> float:
    """Median pairwise squared distance divided by ``log(Np + 1)``.

    Falls back to 1 when fewer than two distinct particles exist.
    """
    Np = particles.shape[0]
    if Np < 2:
        return 1.0
    med = float(np.median(pdist(particles, "sqeuclidean")))
    return med / np.log(Np + 1.0) if med > 0 else 1.0


def svgd_step(particles, lp, lr: float, bandwidth="median") -> np.ndarray:
    """One Stein variational update with an RBF kernel.

    ``phi(theta_i) = 1/Np sum_j [k(theta_j, theta_i) grad log p(theta_j)
    + grad_{theta_j} k(theta_j, theta_i)]`` with
    ``k(a, b) = exp(-|a - b|^2 / h)``.

    Parameters
    ----------
    particles : ndarray, shape (Np, K)
    lp : callable
        ``lp(theta) -> (value, grad)``.
    lr : float
    bandwidth : "median" or float
        ``h``; the median rule is recomputed at every call.
    """
    P = np.atleast_2d(np.asarray(particles, dtype=float))
    Np = P.shape[0]
    grads = np.array([lp(p)[1] for p in P]).reshape(P.shape)
    h = median_bandwidth(P) if bandwidth == "median" else float(bandwidth)
    Kmat = np.exp(-squareform(pdist(P, "sqeuclidean")) / h)
    drive = Kmat @ grads
    # grad_{theta_j} k(theta_j, theta_i) = -2/h (theta_j - theta_i) k_ji, summed over j
    repulse = (2.0 / h) * (P * Kmat.sum(axis=0)[:, None] - Kmat @ P)
    phi = (drive + repulse) / Np
    return P + lr * phi


def svgd(lp, particles, steps: int, lr: float, bandwidth="median") -> np.ndarray:
    """Run ``steps`` SVGD updates; returns the final particles."""
    P = np.atleast_2d(np.asarray(particles, dtype=float)).copy()
    for t in range(int(steps)):
        P = svgd_step(P, lp, lr, bandwidth)
        if not np.all(np.isfinite(P)):
            raise DivergenceError(t + 1, float("nan"))
    return P


# --------------------------------------------------------------------------
# predictive aggregation
# --------------------------------------------------------------------------
def mc_dropout_predict(net: Network, X, T: int, rng: np.random.Generator) -> GaussianPrediction:
    """Aggregate ``T`` forward passes with freshly sampled dropout masks.

    Scalar-output networks report the unbiased sample variance of the
    passes as a total (``split_available=False``). Gaussian-output
    networks combine the ``T`` ``(mean, variance)`` pairs as an
    equal-weight mixture: aleatory is the average variance and epistemic
    the spread of the means.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    if not any(layer.kind == "Dropout" for layer in net.spec.layers):
        raise ValueError("network has no Dropout layers")
    outs = [net._forward(X, "eval_with_dropout", rng)[0] for _ in range(int(T))]
    if isinstance(outs[0], tuple):
        mus = np.array([o[0] for o in outs])
        vars_ = np.array([o[1] for o in outs])
        return aggregate(mus, vars_)
    F = np.array(outs)
    mean = F.mean(axis=0)
    return GaussianPrediction(mean, np.zeros_like(mean), F.var(axis=0, ddof=1), split_available=False)


def posterior_predict(
    source,
    net,
    X,
    mode: str = "predictive",
    rng: np.random.Generator | None = None,
    n_samples: int = 200,
    noise_std: float | None = None,
) -> GaussianPrediction:
    """Predictive moments from posterior parameter samples.

    Parameters
    ----------
    source : ndarray of shape (S, K), or MfviPosterior
        Parameter samples; a variational posterior is sampled ``n_samples``
        times with ``rng``.
    net : Network or NetworkSpec
        Architecture the samples belong to.
    X : ndarray
    mode : {"pushforward", "predictive"}
        ``pushforward`` reports the spread of ``f(x; theta)`` only.
        ``predictive`` adds observation noise as the aleatory part:
        ``noise_std**2`` for scalar outputs, the average predicted
        variance for Gaussian outputs.
    noise_std : float, optional
        Required for predictive mode with scalar outputs.
    """
    if mode not in ("pushforward", "predictive"):
        raise ValueError("mode must be 'pushforward' or 'predictive'")
    if isinstance(net, NetworkSpec):
        net = Network.init(net, 0)
    if isinstance(source, MfviPosterior):
        if rng is None:
            raise ValueError("rng is required to sample a variational posterior")
        samples = source.sample(rng, n_samples)
    else:
        samples = np.atleast_2d(np.asarray(source, dtype=float))
    if samples.shape[0] < 2:
        raise ValueError("need at least two parameter samples")
    mus, vars_ = [], []
    for theta in samples:
        out = net.with_theta(theta)._forward(X, "eval", None)[0]
        if isinstance(out, tuple):
            mus.append(out[0])
            vars_.append(out[1])
        else:
            mus.append(out)
    mus = np.array(mus)
    mean = mus.mean(axis=0)
    epi = mus.var(axis=0)
    if mode == "pushforward":
        return GaussianPrediction(mean, np.zeros_like(mean), epi)
    if vars_:
        ale = np.mean(vars_, axis=0)
    else:
        if noise_std is None:
            raise ValueError("noise_std is required for predictive mode")
        ale = np.full_like(mean, float(noise_std) ** 2)
    return GaussianPrediction(mean, ale, epi)


# --------------------------------------------------------------------------
# CSV export
# --------------------------------------------------------------------------
def parameter_names(net: Network | None, K: int | None = None) -> list[str]:
    """Column names following the flat parameter layout, e.g. ``L0.W[2,1]``."""
    if net is None:
        return [f"theta{k}" for k in range(int(K or 0))]
    names = []
    for i, entry in enumerate(net.layout):
        for name, (_, shape) in entry.items():
            for idx in np.ndindex(*shape):
                names.append(f"L{i}.{name}[{','.join(map(str, idx))}]")
    return names


def save_samples_csv(path, samples: np.ndarray, net: Network | None = None) -> None:
    """Write one row per sample with one column per parameter."""
    samples = np.atleast_2d(samples)
    header = parameter_names(net, samples.shape[1])
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in samples:
            w.writerow([repr(float(v)) for v in row])


def load_samples_csv(path) -> np.ndarray:
    """Read a sample matrix written by :func:`save_samples_csv`."""
    return np.atleast_2d(np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2))
