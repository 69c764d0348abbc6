"""Shared types: datasets, standardization, splits and seeded random streams."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MASK64 = (1 << 64) - 1


class DdsvrError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DdsvrError, ValueError):
    """Bad input detected before any computation starts."""


class ComputationError(DdsvrError):
    """A numerical routine could not produce a valid result."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus target vector.

    ``feature_means``/``feature_stds`` are set once the features have been
    standardized; they are what test rows must be transformed with.
    """

    features: np.ndarray
    targets: np.ndarray
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        y = np.asarray(self.targets, dtype=float).ravel()
        if x.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        if x.shape[0] != y.shape[0]:
            raise ValidationError(
                f"{x.shape[0]} feature rows but {y.shape[0]} targets")
        if x.shape[1] < 1:
            raise ValidationError("at least one feature column is required")
        _check_finite(x, "features")
        _check_finite(y.reshape(-1, 1), "targets")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "targets", _frozen(y))
        for name in ("feature_means", "feature_stds"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.shape[0] != x.shape[1]:
                    raise ValidationError(f"{name} has wrong length")
                object.__setattr__(self, name, _frozen(v))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def standardized(self) -> bool:
        return self.feature_means is not None

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.targets[idx],
                       self.feature_means, self.feature_stds,
                       self.feature_names)

    def with_targets(self, targets) -> Dataset:
        return Dataset(self.features, targets, self.feature_means,
                       self.feature_stds, self.feature_names)


def _check_finite(a: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(a)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValidationError(
            f"non-finite value in {what} at row {r}, column {c}")


def standardize_features(raw: Dataset) -> Dataset:
    """Center and scale every feature column using sample std (ddof=1).

    Constant columns get a recorded std of 1 so they map to zeros.
    """
    if raw.n < 2:
        raise ValidationError("standardization needs at least 2 rows")
    x = raw.features
    means = x.mean(axis=0)
    stds = x.std(axis=0, ddof=1)
    stds = np.where(stds > 0, stds, 1.0)
    return Dataset((x - means) / stds, raw.targets, means, stds,
                   raw.feature_names)


def apply_standardization(raw: Dataset, reference: Dataset) -> Dataset:
    """Transform ``raw`` with the statistics recorded on ``reference``."""
    if not reference.standardized:
        raise ValidationError("reference dataset is not standardized")
    if raw.d != reference.d:
        raise ValidationError(
            f"dimension mismatch: {raw.d} columns vs {reference.d}")
    x = (raw.features - reference.feature_means) / reference.feature_stds
    return Dataset(x, raw.targets, reference.feature_means,
                   reference.feature_stds, raw.feature_names)


def unstandardize_features(data: Dataset) -> np.ndarray:
    if not data.standardized:
        return np.array(data.features)
    return data.features * data.feature_stds + data.feature_means


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngStream:
    """Counter-based random stream: Philox4x64-10 keyed by (seed, stream_id).

    Uniform doubles are ``((w >> 11) + 0.5) * 2**-53`` for each raw 64-bit
    word ``w`` so they lie strictly inside (0, 1). Normals use the
    Box-Muller cosine branch on two consecutive uniforms. Sub-streams from
    :meth:`child` re-key with SplitMix64(seed ^ SplitMix64(tag)).

    A stream has a single owner; do not share one across threads.
    """

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        if not (0 <= seed <= _MASK64 and 0 <= stream_id <= _MASK64):
            raise ValidationError("seed and stream_id must be unsigned 64-bit")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, tag: int) -> RngStream:
        mixed = _splitmix64(self.seed ^ _splitmix64(int(tag) & _MASK64))
        return RngStream(mixed, self.stream_id)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(int(n)).astype(np.uint64)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        w = self.raw(n) >> np.uint64(11)
        u = (w.astype(float) + 0.5) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])

    def permutation(self, n: int) -> np.ndarray:
        # stable argsort of uniform keys; ties are practically impossible
        return np.argsort(self.uniform(n), kind="stable")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(n * spec.train_fraction))
    if n_train < 2 or n_train >= n:
        raise ValidationError(
            f"split of {n} rows at {spec.train_fraction} leaves "
            f"{n_train} train and {n - n_train} test rows")
    perm = RngStream(spec.seed, 0).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Random train/test partition; train size is round(n * fraction)."""
    tr, te = split_indices(data.n, spec)
    return data.subset(tr), data.subset(te)


def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV; rows with gaps are rejected."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header) or any(not c.strip() for c in row):
                raise ValidationError(
                    f"{path}: row {lineno} has missing fields")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ValidationError(
                    f"{path}: row {lineno} has a non-numeric field") from None
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    a = np.array(rows)
    bad = ~np.isfinite(a)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValidationError(
            f"{path}: non-finite value at row {r + 2}, column {header[c]!r}")
    return header, a


def read_csv(path: str | Path, target: str | None = None) -> Dataset:
    """Load a numeric CSV with a header row.

    The last column is the target unless ``target`` names another one.
    """
    header, a = read_table(path)
    if target is None:
        t_col = len(header) - 1
    elif target in header:
        t_col = header.index(target)
    else:
        raise ValidationError(f"{path}: no column named {target!r}")
    if a.shape[0] < 2:
        raise ValidationError(f"{path}: need at least 2 data rows")
    if len(header) < 2:
        raise ValidationError(f"{path}: need at least one feature column")
    feat_cols = [j for j in range(len(header)) if j != t_col]
    return Dataset(a[:, feat_cols], a[:, t_col],
                   feature_names=tuple(header[j] for j in feat_cols))


def read_vector_csv(path: str | Path) -> np.ndarray:
    """Read a single numeric column (header optional), e.g. residuals."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    values = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            try:
                values.append(float(row[-1]))
            except ValueError:
                if lineno == 1:
                    continue
                raise ValidationError(
                    f"{path}: row {lineno} is not numeric") from None
    v = np.array(values)
    if v.size == 0 or not np.isfinite(v).all():
        raise ValidationError(f"{path}: no usable numeric values")
    return v
