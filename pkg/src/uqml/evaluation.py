"""Metrics for the quality of predictive uncertainty.

Regression calibration works on probability-integral-transform values
``u = Phi((y - mu) / sigma)``: a target lies inside the two-sided level-c
interval exactly when ``|2u - 1| <= c`` and inside the one-sided interval
``(-inf, mu + sigma Phi^-1(c)]`` when ``u <= c``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import ndtr, ndtri

from .numerics import make_rng
from .prediction import GaussianPrediction

__all__ = [
    "CalibrationCurve",
    "SparsificationReport",
    "RecalibrationMap",
    "DEFAULT_LEVELS",
    "pit_values",
    "regression_calibration",
    "classification_calibration",
    "ece",
    "miscalibration_area",
    "u_pool",
    "nll",
    "rmse",
    "sparsification",
    "isotonic_recalibrate",
    "recalibrated_interval",
]

DEFAULT_LEVELS = np.linspace(0.0, 1.0, 11)
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
MIN_RECAL_SAMPLES = 20


@dataclass(frozen=True)
class CalibrationCurve:
    """Expected versus observed confidence.

    Attributes
    ----------
    levels : ndarray
        Expected confidence ``c_j`` (bin centers for classification).
    observed : ndarray
        Observed confidence; NaN marks an empty classification bin.
    counts : ndarray
        Samples inside each interval (regression) or bin (classification).
    mode : {"two_sided", "one_sided", "classification"}
    n : int
        Number of samples.
    """

    levels: np.ndarray
    observed: np.ndarray
    counts: np.ndarray
    mode: str
    n: int

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.observed)

    def weights(self, weighting: str = "uniform") -> np.ndarray:
        """Normalized weights; entries of empty bins are zero."""
        present = self.present.astype(float)
        if weighting == "uniform":
            w = present
        elif weighting == "count":
            w = np.where(self.present, self.counts, 0.0).astype(float)
        else:
            raise ValueError(f"weighting must be 'uniform' or 'count', got {weighting!r}")
        total = w.sum()
        return w / total if total > 0 else w

    def to_columns(self, weighting: str = "uniform") -> dict:
        return {"level": self.levels, "observed": self.observed, "weight": self.weights(weighting)}


def _moments(preds, variance=None):
    if isinstance(preds, GaussianPrediction):
        return preds.mean, preds.variance_total
    return np.asarray(preds, dtype=float).ravel(), np.asarray(variance, dtype=float).ravel()


def pit_values(preds, targets, variance=None) -> np.ndarray:
    """``u_i = Phi((y_i - mu_i) / sigma_i)``; zero variance gives 0, 0.5 or 1."""
    mu, var = _moments(preds, variance)
    y = np.asarray(targets, dtype=float).ravel()
    if not (mu.shape == var.shape == y.shape):
        raise ValueError("predictions and targets must be aligned")
    d = y - mu
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, d / np.where(sd > 0, sd, 1.0), np.sign(d) * np.inf)
    return ndtr(z)


def _inside(u: np.ndarray, c: float, sided: str) -> np.ndarray:
    if sided == "two_sided":
        return np.abs(2.0 * u - 1.0) <= c
    return u <= c


def regression_calibration(
    preds, targets, levels=DEFAULT_LEVELS, sided: str = "two_sided", variance=None, u=None
) -> CalibrationCurve:
    """Observed coverage of Gaussian prediction intervals.

    Parameters
    ----------
    preds : GaussianPrediction or ndarray of means
    targets : ndarray
    levels : ndarray
        Strictly increasing confidence levels in ``[0, 1]``.
    sided : {"two_sided", "one_sided"}
    variance : ndarray, optional
        Predictive variances when ``preds`` is an array of means.
    u : ndarray, optional
        Precomputed (for example recalibrated) PIT values; ``preds`` and
        ``targets`` are then ignored.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size < 1 or np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing")
    if np.any((levels < 0) | (levels > 1)):
        raise ValueError("levels must lie in [0, 1]")
    if sided not in ("two_sided", "one_sided"):
        raise ValueError("sided must be 'two_sided' or 'one_sided'")
    if u is None:
        u = pit_values(preds, targets, variance)
    n = u.size
    counts = np.array([np.count_nonzero(_inside(u, c, sided)) for c in levels])
    if sided == "one_sided":
        counts = np.where(levels >= 1.0, n, counts)
    observed = counts / n
    return CalibrationCurve(levels, observed, counts, sided, n)


def classification_calibration(probs, labels, n_bins: int = 10) -> CalibrationCurve:
    """Reliability curve for binary probabilities.

    Bins are ``[0, 1/K], (1/K, 2/K], ..., ((K-1)/K, 1]`` and the expected
    confidence of a bin is its center.
    """
    p = np.asarray(probs, dtype=float).ravel()
    yl = np.asarray(labels, dtype=float).ravel()
    if p.shape != yl.shape:
        raise ValueError("probs and labels must be aligned")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.all((yl == 0) | (yl == 1)):
        raise ValueError("labels must be 0 or 1")
    K = int(n_bins)
    idx = np.clip(np.ceil(p * K).astype(int) - 1, 0, K - 1)
    counts = np.bincount(idx, minlength=K)
    hits = np.bincount(idx, weights=yl, minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        observed = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    centers = (np.arange(K) + 0.5) / K
    return CalibrationCurve(centers, observed, counts, "classification", p.size)


def ece(curve: CalibrationCurve, weighting: str = "uniform") -> float:
    """Weighted mean absolute gap between observed and expected confidence."""
    w = curve.weights(weighting)
    gap = np.where(curve.present, np.abs(curve.observed - curve.levels), 0.0)
    return float(np.sum(w * gap))


def miscalibration_area(curve: CalibrationCurve) -> float:
    """Area between the (piecewise-linear) curve and the diagonal.

    Lobes above and below the diagonal add up; segments that cross the
    diagonal are split at the crossing.
    """
    keep = curve.present
    c = curve.levels[keep]
    d = curve.observed[keep] - c
    if c.size < 2:
        raise ValueError("need at least two levels")
    h = np.diff(c)
    a, b = d[:-1], d[1:]
    same = a * b >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = 0.5 * h * (a * a + b * b) / (np.abs(a) + np.abs(b))
    seg = np.where(same, 0.5 * h * (np.abs(a) + np.abs(b)), np.nan_to_num(cross))
    return float(np.sum(seg))


def u_pool(preds, targets, variance=None) -> tuple[np.ndarray, float]:
    """PIT values and the area between their empirical CDF and the uniform CDF."""
    u = pit_values(preds, targets, variance)
    return u, _uniform_area(u)


def _uniform_area(u: np.ndarray) -> float:
    s = np.sort(u)
    n = s.size
    edges = np.r_[0.0, s, 1.0]
    level = np.arange(n + 1) / n  # empirical CDF on [edges[k], edges[k+1])

    def prim(t, f):
        return 0.5 * (t - f) * np.abs(t - f)

    return float(np.sum(prim(edges[1:], level) - prim(edges[:-1], level)))


def nll(preds, targets, include_constant: bool = False, variance=None) -> float:
    """Mean Gaussian negative log-likelihood ``0.5 log var + r^2 / (2 var)``.

    ``include_constant`` adds ``0.5 log(2 pi)`` per sample.
    """
    mu, var = _moments(preds, variance)
    y = np.asarray(targets, dtype=float).ravel()
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    r = y - mu
    val = float(np.mean(0.5 * np.log(var) + r * r / (2.0 * var)))
    return val + HALF_LOG_2PI if include_constant else val


def rmse(preds, targets) -> float:
    mu = preds.mean if isinstance(preds, GaussianPrediction) else np.asarray(preds, dtype=float)
    return float(np.sqrt(np.mean((np.asarray(targets, dtype=float).ravel() - mu) ** 2)))


# --------------------------------------------------------------------------
# sparsification
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class SparsificationReport:
    """Error after removing the most uncertain samples.

    Attributes
    ----------
    fractions : ndarray
        Fraction of samples removed at each point.
    curve, oracle, random : ndarray
        Error of the retained samples when ranking by uncertainty, by the
        true absolute error, and by random order (averaged).
    ause, aurg : float
    metric : {"rmse", "mae"}
    """

    fractions: np.ndarray
    curve: np.ndarray
    oracle: np.ndarray
    random: np.ndarray
    ause: float
    aurg: float
    metric: str

    def to_columns(self) -> dict:
        return {"fraction": self.fractions, self.metric: self.curve, "oracle": self.oracle, "random": self.random}


def _retained_error(sorted_err: np.ndarray, removed: np.ndarray, metric: str) -> np.ndarray:
    """Error of the tail ``sorted_err[k:]`` for each ``k`` in ``removed``."""
    vals = sorted_err * sorted_err if metric == "rmse" else np.abs(sorted_err)
    tail = np.cumsum(vals[::-1])[::-1]
    n = sorted_err.size
    mean = tail[removed] / (n - removed)
    return np.sqrt(mean) if metric == "rmse" else mean


def sparsification(
    uncertainties,
    errors,
    step: float = 0.02,
    metric: str = "rmse",
    n_random: int = 20,
    seed: int = 0,
) -> SparsificationReport:
    """Sparsification curves with AUSE and AURG.

    At removal fraction ``f`` the ``round(f N)`` samples with the largest
    uncertainty are dropped and the error of the rest is recorded, for
    ``f = 0, step, 2 step, ...`` below 1. Ties keep the original order.

    Parameters
    ----------
    uncertainties : ndarray
        Any score where larger means less trustworthy (std, variance, ...).
    errors : ndarray
        Prediction errors (signed or absolute).
    step : float
        Removal increment as a fraction of the full set.
    metric : {"rmse", "mae"}
    n_random : int
        Shuffles averaged into the random baseline.
    seed : int
    """
    unc = np.asarray(uncertainties, dtype=float).ravel()
    err = np.abs(np.asarray(errors, dtype=float).ravel())
    if unc.shape != err.shape:
        raise ValueError("uncertainties and errors must be aligned")
    N = err.size
    if N < 10:
        raise ValueError("sparsification needs at least 10 samples")
    if metric not in ("rmse", "mae"):
        raise ValueError("metric must be 'rmse' or 'mae'")
    if not 0 < step < 1:
        raise ValueError("step must lie in (0, 1)")
    fractions = np.arange(0.0, 1.0 - 1e-12, step)
    removed = np.minimum(np.rint(fractions * N).astype(int), N - 1)

    def curve_for(order):
        return _retained_error(err[order], removed, metric)

    curve = curve_for(np.argsort(-unc, kind="stable"))
    oracle = curve_for(np.argsort(-err, kind="stable"))
    rng = make_rng(seed)
    random = np.mean([curve_for(rng.permutation(N)) for _ in range(int(n_random))], axis=0)
    ause = float(np.trapezoid(curve - oracle, fractions))
    aurg = float(np.trapezoid(random - curve, fractions))
    return SparsificationReport(fractions, curve, oracle, random, ause, aurg, metric)


# --------------------------------------------------------------------------
# isotonic recalibration
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class RecalibrationMap:
    """Nondecreasing piecewise-linear map ``R`` on ``[0, 1]`` with fixed ends.

    ``R`` sends a predicted CDF level to the observed frequency of PIT
    values at or below it.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray

    def __call__(self, p) -> np.ndarray:
        return np.interp(np.asarray(p, dtype=float), self.knots_x, self.knots_y)

    def inverse(self, q) -> np.ndarray:
        """Smallest ``p`` with ``R(p) >= q`` (generalized inverse)."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        x, y = self.knots_x, self.knots_y
        j = np.clip(np.searchsorted(y, q, side="left"), 1, y.size - 1)
        y0, y1 = y[j - 1], y[j]
        x0, x1 = x[j - 1], x[j]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(y1 > y0, (q - y0) / (y1 - y0), 0.0)
        out = np.where(q <= y[0], x[0], x0 + np.clip(t, 0.0, 1.0) * (x1 - x0))
        return out

    def to_dict(self) -> dict:
        return {"kind": "isotonic_cdf_map", "knots_x": self.knots_x.tolist(), "knots_y": self.knots_y.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RecalibrationMap":
        return cls(np.asarray(d["knots_x"], dtype=float), np.asarray(d["knots_y"], dtype=float))


def isotonic_recalibrate(preds, targets, variance=None) -> RecalibrationMap:
    """Fit a monotone map from predicted CDF levels to observed frequencies.

    Each validation PIT value ``u_i`` is paired with the fraction of PIT
    values ``<= u_i``; the pairs are smoothed by isotonic regression
    (pool adjacent violators) and anchored at ``(0, 0)`` and ``(1, 1)``.
    """
    u = pit_values(preds, targets, variance)
    n = u.size
    if n < MIN_RECAL_SAMPLES:
        raise ValueError(f"recalibration needs at least {MIN_RECAL_SAMPLES} samples, got {n}")
    s = np.sort(u)
    freq = np.searchsorted(s, s, side="right") / n
    fitted = isotonic_regression(freq, increasing=True).x
    xs = np.r_[0.0, s, 1.0]
    ys = np.clip(np.r_[0.0, fitted, 1.0], 0.0, 1.0)
    ys = np.maximum.accumulate(ys)
    # collapse duplicated abscissae (keep the largest ordinate)
    keep = np.r_[xs[1:] != xs[:-1], True]
    xs, ys = xs[keep], ys[keep]
    if xs[0] != 0.0:
        xs, ys = np.r_[0.0, xs], np.r_[0.0, ys]
    ys[0] = 0.0
    ys[-1] = 1.0
    return RecalibrationMap(xs, ys)


def recalibrated_interval(rmap: RecalibrationMap, preds, c: float, variance=None):
    """Two-sided level-``c`` interval of the recalibrated predictive CDF."""
    mu, var = _moments(preds, variance)
    sd = np.sqrt(var)
    lo_p = rmap.inverse((1.0 - c) / 2.0)
    hi_p = rmap.inverse((1.0 + c) / 2.0)
    return mu + sd * ndtri(lo_p), mu + sd * ndtri(hi_p)
