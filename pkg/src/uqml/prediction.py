"""Gaussian predictive summaries shared by every regression method."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["GaussianPrediction"]

CLAMP_TOL = 1e-12


def _clamp(v: np.ndarray, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float)).copy()
    if np.any(v < -CLAMP_TOL * np.maximum(1.0, np.max(np.abs(v), initial=0.0))):
        raise ValueError(f"{name} has negative entries (min {v.min():.3e})")
    v[v < 0] = 0.0
    return v


@dataclass(frozen=True)
class GaussianPrediction:
    """Per-point predictive mean and a split of the predictive variance.

    ``variance_total`` is always ``variance_aleatory + variance_epistemic``.
    Small negative variances from round-off are clamped to zero.

    Parameters
    ----------
    mean : ndarray, shape (M,)
    variance_aleatory : ndarray, shape (M,)
        Irreducible observation noise.
    variance_epistemic : ndarray, shape (M,)
        Model (knowledge) uncertainty.
    split_available : bool
        False when a method only estimates the total; the whole variance is
        then reported as epistemic and the aleatory part is zero.
    """

    mean: np.ndarray
    variance_aleatory: np.ndarray
    variance_epistemic: np.ndarray
    split_available: bool = True
    variance_total: np.ndarray = field(init=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        ale = _clamp(np.broadcast_to(self.variance_aleatory, mean.shape), "variance_aleatory")
        epi = _clamp(np.broadcast_to(self.variance_epistemic, mean.shape), "variance_epistemic")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance_aleatory", ale)
        object.__setattr__(self, "variance_epistemic", epi)
        object.__setattr__(self, "variance_total", ale + epi)
        object.__setattr__(self, "split_available", bool(self.split_available))

    def __len__(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        """Total predictive standard deviation."""
        return np.sqrt(self.variance_total)

    def scaled(self, shift: float, scale: float) -> "GaussianPrediction":
        """Map predictions through ``y -> shift + scale * y``."""
        s2 = float(scale) ** 2
        return GaussianPrediction(
            shift + scale * self.mean,
            s2 * self.variance_aleatory,
            s2 * self.variance_epistemic,
            self.split_available,
        )

    def as_columns(self) -> dict[str, np.ndarray]:
        """Column dictionary in the CSV layout used by the command line."""
        return {
            "mean": self.mean,
            "var_total": self.variance_total,
            "var_aleatory": self.variance_aleatory,
            "var_epistemic": self.variance_epistemic,
            "split_available": np.full(len(self), int(self.split_available)),
        }
