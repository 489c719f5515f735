"""Toy problems, CSV ingestion, standardization and 2D evaluation grids.

CSV files are comma separated, UTF-8 encoded, start with a header row and
use ``.`` as the decimal separator.

:func:`grid2d` returns points in row-major order: the second coordinate
is the slow (row) index and the first coordinate varies fastest, so point
``k`` sits at ``(x1[k % r], x2[k // r])`` for resolution ``r``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import make_rng

__all__ = [
    "Dataset",
    "Standardization",
    "DataError",
    "gen_toy_1d",
    "toy_1d_true",
    "toy_2d_true",
    "gen_toy_2d_clusters",
    "gen_ood_cluster",
    "grid2d",
    "load_csv",
    "save_csv",
    "read_table",
    "write_table",
    "standardize",
    "CLUSTER_MEANS",
    "CLUSTER_COV",
    "OOD_MEAN",
]

CLUSTER_MEANS = ((8.0, 3.5), (-2.5, -2.5))
CLUSTER_COV = ((0.4, -0.32), (-0.32, 0.4))
OOD_MEAN = (-11.0, -11.0)
TOY_1D_NOISE = 0.1


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Standardization:
    """Per-feature and target location/scale computed on a training split.

    ``scaled`` flags features whose sample std was positive; the others
    pass through unchanged.
    """

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    scaled: np.ndarray

    def apply_x(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.where(self.scaled, (X - self.x_mean) / self.x_std, X)

    def invert_x(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return np.where(self.scaled, Z * self.x_std + self.x_mean, Z)

    def apply_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def invert_y(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.y_std + self.y_mean

    @property
    def unscaled_features(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(~self.scaled)]

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "scaled": self.scaled.astype(bool).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(
            np.asarray(d["x_mean"], dtype=float),
            np.asarray(d["x_std"], dtype=float),
            float(d["y_mean"]),
            float(d["y_std"]),
            np.asarray(d["scaled"], dtype=bool),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Dataset:
    """Inputs ``X`` (N x D), targets ``y`` (N) and optional metadata."""

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple = ()
    target_name: str = "y"
    standardization: Standardization | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        names = tuple(self.feature_names) or tuple(f"x{i + 1}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("feature_names length does not match the number of columns")
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------
def toy_1d_true(x) -> np.ndarray:
    """Noise-free one-dimensional response ``sin(0.9 x)``."""
    return np.sin(0.9 * np.asarray(x, dtype=float))


def gen_toy_1d(
    n: int,
    x_range=(-5.0, 5.0),
    seed: int = 0,
    noise_std: float = TOY_1D_NOISE,
) -> Dataset:
    """Sample ``y = sin(0.9 x) + N(0, noise_std^2)`` with uniform ``x``.

    Parameters
    ----------
    n : int
    x_range : (lo, hi) or sequence of (lo, hi)
        Several intervals share the ``n`` points as evenly as possible,
        earlier intervals receiving the remainder.
    seed : int
    noise_std : float
        Zero gives the noise-free variant.
    """
    if n < 1:
        raise DataError("n must be at least 1")
    ranges = np.atleast_2d(np.asarray(x_range, dtype=float))
    if ranges.shape[1] != 2 or np.any(ranges[:, 1] <= ranges[:, 0]):
        raise DataError(f"empty or inverted x range {x_range}")
    rng = make_rng(seed)
    counts = np.full(len(ranges), n // len(ranges))
    counts[: n % len(ranges)] += 1
    x = np.concatenate([rng.uniform(lo, hi, c) for (lo, hi), c in zip(ranges, counts)])
    noise = rng.standard_normal(n) * noise_std
    return Dataset(x[:, None], toy_1d_true(x) + noise, ("x",))


def toy_2d_true(x1, x2) -> np.ndarray:
    """``((1.5 + x1)^2 + 4)(1.5 + x2) / 20 - sin(5 (1.5 + x1) / 2)``."""
    a = 1.5 + np.asarray(x1, dtype=float)
    b = 1.5 + np.asarray(x2, dtype=float)
    return (a * a + 4.0) * b / 20.0 - np.sin(5.0 * a / 2.0)


def _heteroscedastic_noise(rng, y):
    return rng.standard_normal(y.shape) * np.sqrt(0.5) * np.abs(np.sin(y))


def gen_toy_2d_clusters(n_per_cluster: int = 400, seed: int = 0, heteroscedastic: bool = False) -> Dataset:
    """Two correlated Gaussian input clusters with the 2D toy response.

    With ``heteroscedastic`` set, ``y`` gets noise ``N(0, 0.5 sin(y)^2)``.
    """
    if n_per_cluster < 1:
        raise DataError("n_per_cluster must be at least 1")
    rng = make_rng(seed)
    X = np.vstack([rng.multivariate_normal(m, CLUSTER_COV, n_per_cluster) for m in CLUSTER_MEANS])
    y = toy_2d_true(X[:, 0], X[:, 1])
    if heteroscedastic:
        y = y + _heteroscedastic_noise(rng, y)
    return Dataset(X, y, ("x1", "x2"))


def gen_ood_cluster(n: int = 200, seed: int = 0, mean=OOD_MEAN, heteroscedastic: bool = False) -> Dataset:
    """Out-of-distribution test cluster sharing the training covariance."""
    rng = make_rng(seed, 1)
    X = rng.multivariate_normal(mean, CLUSTER_COV, int(n))
    y = toy_2d_true(X[:, 0], X[:, 1])
    if heteroscedastic:
        y = y + _heteroscedastic_noise(rng, y)
    return Dataset(X, y, ("x1", "x2"))


def grid2d(bounds=(-15.0, 15.0, -15.0, 15.0), resolution: int = 200) -> np.ndarray:
    """Uniform ``resolution x resolution`` grid, shape ``(resolution**2, 2)``.

    ``bounds`` is ``(x1_min, x1_max, x2_min, x2_max)``. Ordering is
    row-major with ``x1`` varying fastest.
    """
    if resolution < 2:
        raise DataError("resolution must be at least 2")
    x1lo, x1hi, x2lo, x2hi = (float(b) for b in bounds)
    if x1hi <= x1lo or x2hi <= x2lo:
        raise DataError(f"inverted or empty bounds {bounds}")
    g1 = np.linspace(x1lo, x1hi, resolution)
    g2 = np.linspace(x2lo, x2hi, resolution)
    A, B = np.meshgrid(g1, g2, indexing="xy")
    return np.column_stack([A.ravel(), B.ravel()])


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------
def read_table(path) -> tuple[list[str], np.ndarray]:
    """Parse a numeric CSV; returns the header and an ``N x C`` array.

    Raises
    ------
    DataError
        On a missing header, ragged rows or non-numeric cells (the message
        names the 1-based file row and the column).
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty (a header row is required)") from None
        if len(set(header)) != len(header) or any(h == "" for h in header):
            raise DataError(f"{path}: header has empty or duplicate column names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col!r}"
                    ) from None
            rows.append(vals)
    return header, np.asarray(rows, dtype=float).reshape(len(rows), len(header))


def write_table(path, columns: dict) -> None:
    """Write equal-length columns with full ``repr`` float precision."""
    names = list(columns)
    arrays = [np.asarray(columns[n]).ravel() for n in names]
    n = arrays[0].shape[0] if arrays else 0
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(a[i]) for a in arrays])


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def load_csv(path, target: str | None = "y", features: list[str] | None = None) -> Dataset:
    """Load a dataset; every non-target column is a feature unless ``features`` is given.

    ``target=None`` loads features only (``y`` is filled with NaN).
    """
    header, data = read_table(path)
    if target is not None and target not in header:
        raise DataError(f"{path}: target column {target!r} not found (columns: {header})")
    if features is None:
        features = [h for h in header if h != target]
    missing = [f for f in features if f not in header]
    if missing:
        raise DataError(f"{path}: feature columns {missing} not found")
    X = data[:, [header.index(f) for f in features]]
    y = data[:, header.index(target)] if target is not None else np.full(data.shape[0], np.nan)
    return Dataset(X, y, tuple(features), target or "y")


def save_csv(path, ds: Dataset) -> None:
    cols = {name: ds.X[:, i] for i, name in enumerate(ds.feature_names)}
    cols[ds.target_name] = ds.y
    write_table(path, cols)


def standardize(ds: Dataset) -> tuple[Dataset, Standardization]:
    """Zero-mean, unit sample-std (``N - 1``) features and target.

    Constant features are flagged in ``Standardization.scaled`` and left
    as they are. A constant target is centered but not scaled.
    """
    if len(ds) < 2:
        raise DataError("standardization needs at least two rows")
    x_mean = ds.X.mean(axis=0)
    x_std = ds.X.std(axis=0, ddof=1)
    scaled = x_std > 0
    x_std = np.where(scaled, x_std, 1.0)
    y_mean = float(ds.y.mean())
    y_std = float(ds.y.std(ddof=1))
    y_std = y_std if y_std > 0 else 1.0
    rec = Standardization(x_mean, x_std, y_mean, y_std, scaled)
    out = Dataset(rec.apply_x(ds.X), rec.apply_y(ds.y), ds.feature_names, ds.target_name, rec)
    return out, rec
