"""Labeled tabular datasets: loading, validation, splitting, standardization,
and synthetic generators.

A :class:`Dataset` is a plain container; invariants are enforced by the
factory :func:`make_dataset`, which every loader and generator goes through.
Sample ids are stable row indices of the original source and are carried
through splits so downstream neighbor queries can exclude a sample from its
own neighborhood.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptyFileError,
    MissingColumnError,
    NaNCellError,
    NonNumericCellError,
)

# Floor for per-feature standard deviations; keeps constant columns finite
# without distorting informative ones.
EPS_STD = 1e-12


@dataclass(eq=False)
class Dataset:
    """Feature matrix with integer labels, class count, and stable sample ids."""

    features: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) int64, each in [0, num_classes)
    num_classes: int
    sample_ids: np.ndarray  # (N,) int64, unique
    feature_names: tuple = ()
    label_name: str = "label"

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Row subset sharing num_classes and column metadata; no re-validation."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            sample_ids=self.sample_ids[idx],
            feature_names=self.feature_names,
            label_name=self.label_name,
        )


def make_dataset(features, labels, num_classes=None, sample_ids=None,
                 feature_names=None, label_name="label") -> Dataset:
    """Validate and freeze raw arrays into a Dataset.

    Checks: finite features, labels in [0, C) with every class present,
    unique sample ids. Raises DataError on violation.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        raise DataError(f"features must be 2-D, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise DataError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
    if x.shape[0] == 0:
        raise DataError("dataset has no rows")
    if not np.isfinite(x).all():
        bad = np.argwhere(~np.isfinite(x))[0]
        raise DataError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
    if y.min(initial=0) < 0:
        raise DataError(f"negative label {y.min()}")
    c = int(num_classes) if num_classes is not None else int(y.max()) + 1
    if c < 2:
        raise DataError(f"need at least 2 classes, got {c}")
    if y.max(initial=0) >= c:
        raise DataError(f"label {y.max()} out of range for {c} classes")
    present = np.bincount(y, minlength=c)
    for cls in range(c):
        if present[cls] == 0:
            raise DataError(f"class {cls} absent")
    ids = (np.arange(x.shape[0], dtype=np.int64) if sample_ids is None
           else np.asarray(sample_ids, dtype=np.int64))
    if ids.shape != (x.shape[0],):
        raise DataError("sample_ids length mismatch")
    if len(np.unique(ids)) != len(ids):
        raise DataError("sample_ids are not unique")
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"f{j}" for j in range(x.shape[1]))
    if len(names) != x.shape[1]:
        raise DataError("feature_names length mismatch")
    x.setflags(write=False)
    y.setflags(write=False)
    ids.setflags(write=False)
    return Dataset(x, y, c, ids, names, label_name)


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, label_column: str = "label") -> Dataset:
    """Load a UTF-8 CSV with a header row into a Dataset.

    All non-label columns must be numeric; the label column must hold
    nonnegative integers. num_classes = 1 + max(label); ids are assigned
    by data-row order. Error messages carry 1-based data-row numbers.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise EmptyFileError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise MissingColumnError(
            f"{path}: label column {label_column!r} not in header {header}")
    if len(rows) < 2:
        raise EmptyFileError(f"{path}: no data rows")
    label_idx = header.index(label_column)
    feature_names = [h for j, h in enumerate(header) if j != label_idx]

    features = []
    labels = []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        vec = []
        for j, cell in enumerate(row):
            name = header[j]
            try:
                value = float(cell)
            except ValueError:
                raise NonNumericCellError(r, name, cell) from None
            if not math.isfinite(value):
                raise NaNCellError(r, name)
            if j == label_idx:
                if value != int(value) or value < 0:
                    raise DataError(
                        f"{path}: label {cell!r} at row {r} is not a nonnegative integer")
                labels.append(int(value))
            else:
                vec.append(value)
        features.append(vec)
    return make_dataset(features, labels, feature_names=feature_names,
                        label_name=label_column)


def save_csv(ds: Dataset, path) -> None:
    """Serialize with the same column order the dataset was loaded with."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(ds.feature_names) + [ds.label_name])
        for i in range(ds.n):
            writer.writerow(["%.17g" % v for v in ds.features[i]] + [int(ds.labels[i])])


# ---------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.4
    val_frac: float = 0.1
    test_frac: float = 0.5
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise ConfigError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ConfigError(f"fractions must sum to 1, got {fracs} (sum {sum(fracs)})")


def _allocate(n: int, fracs) -> list:
    """Largest-remainder allocation of n items to the three splits.

    Ties in remainders resolve in (train, val, test) order. Each split is
    then topped up to at least one item from the largest split.
    """
    raw = [f * n for f in fracs]
    counts = [int(math.floor(v)) for v in raw]
    short = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(short):
        counts[order[i]] += 1
    for i in range(3):
        while counts[i] == 0:
            donor = max(range(3), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split(ds: Dataset, spec: SplitSpec):
    """Stratified, seeded 3-way split into (train, val, test).

    Deterministic given the seed; the three index sets partition
    range(N), and each class appears in every split.
    """
    fracs = (spec.train_frac, spec.val_frac, spec.test_frac)
    rng = np.random.default_rng(spec.seed)
    parts = [[], [], []]
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        if len(members) < 3:
            raise DataError(
                f"class {c} has {len(members)} samples; need at least 3 to stratify")
        perm = rng.permutation(len(members))
        shuffled = members[perm]
        n_tr, n_va, n_te = _allocate(len(members), fracs)
        parts[0].append(shuffled[:n_tr])
        parts[1].append(shuffled[n_tr:n_tr + n_va])
        parts[2].append(shuffled[n_tr + n_va:])
    out = []
    for chunks in parts:
        idx = np.sort(np.concatenate(chunks))
        out.append(ds.subset(idx))
    return tuple(out)


# ---------------------------------------------------------------------------
# Standardization


@dataclass(frozen=True)
class Standardizer:
    """Per-feature centering/scaling fitted on the training split only.

    Standard deviation uses the population convention (divide by N);
    constant features are floored at EPS_STD so the transform stays finite.
    """

    mean: np.ndarray
    std: np.ndarray


def fit_standardizer(train: Dataset) -> Standardizer:
    if train.n == 0:
        raise DataError("cannot fit standardizer on an empty dataset")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)  # ddof=0
    std = np.maximum(std, EPS_STD)
    return Standardizer(mean=mean, std=std)


def apply_standardizer(std: Standardizer, ds: Dataset) -> Dataset:
    x = (ds.features - std.mean) / std.std
    return make_dataset(x, ds.labels, ds.num_classes, ds.sample_ids,
                        ds.feature_names, ds.label_name)


def invert_standardizer(std: Standardizer, ds: Dataset) -> Dataset:
    x = ds.features * std.std + std.mean
    return make_dataset(x, ds.labels, ds.num_classes, ds.sample_ids,
                        ds.feature_names, ds.label_name)


# ---------------------------------------------------------------------------
# Synthetic generators


def make_two_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half-circles with Gaussian perturbation of scale noise.

    Class 0 lies on the upper unit half-circle centered at the origin;
    class 1 on the lower half-circle shifted to interleave. noise=0 puts
    every point exactly on its arc.
    """
    if n < 4:
        raise ConfigError(f"need n >= 4, got {n}")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    x0 = np.column_stack([np.cos(t0), np.sin(t0)])
    x1 = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([x0, x1])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    x = x + rng.normal(scale=noise, size=x.shape) if noise > 0 else x
    return make_dataset(x, y, num_classes=2, feature_names=("x0", "x1"))


def make_gaussian_blobs(n: int, centers, scale: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters, one per row of centers, near-balanced."""
    centers = np.asarray(centers, dtype=np.float64)
    c, d = centers.shape
    if n < c:
        raise ConfigError(f"need n >= {c} samples for {c} classes")
    if scale < 0:
        raise ConfigError(f"scale must be >= 0, got {scale}")
    counts = [n // c + (1 if i < n % c else 0) for i in range(c)]
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for cls, cnt in enumerate(counts):
        xs.append(centers[cls] + rng.normal(scale=scale, size=(cnt, d)))
        ys.append(np.full(cnt, cls, dtype=np.int64))
    return make_dataset(np.vstack(xs), np.concatenate(ys), num_classes=c)


def ring_centers(num_classes: int, radius: float = 3.0, dim: int = 2) -> np.ndarray:
    """Class centers evenly spaced on a circle, zero-padded to dim."""
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = np.zeros((num_classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def inject_label_noise(ds: Dataset, rate: float, seed: int):
    """Relabel exactly floor(rate * N) samples to a uniformly chosen other class.

    Returns (noisy dataset, boolean flipped mask). Assumes enough class
    redundancy that every class stays represented.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"noise rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    m = int(math.floor(rate * ds.n))
    mask = np.zeros(ds.n, dtype=bool)
    labels = ds.labels.copy()
    if m > 0:
        picked = rng.choice(ds.n, size=m, replace=False)
        offsets = rng.integers(1, ds.num_classes, size=m)
        labels[picked] = (labels[picked] + offsets) % ds.num_classes
        mask[picked] = True
    noisy = make_dataset(ds.features, labels, ds.num_classes, ds.sample_ids,
                         ds.feature_names, ds.label_name)
    return noisy, mask
