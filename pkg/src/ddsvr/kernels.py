"""Kernel functions, Gram rows and the row cache used by the solver."""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist

from .core import Dataset, ValidationError


class KernelFamily(str, Enum):
    LINEAR = "linear"
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily = KernelFamily.RBF
    gamma: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.family is KernelFamily.RBF and not self.gamma > 0:
            raise ValidationError(f"RBF gamma must be positive, got {self.gamma}")

    @classmethod
    def linear(cls) -> KernelSpec:
        return cls(KernelFamily.LINEAR, 1.0)

    @classmethod
    def rbf(cls, gamma: float | None = None, d: int | None = None) -> KernelSpec:
        """RBF kernel; ``gamma`` defaults to 1/d."""
        if gamma is None:
            if not d:
                raise ValidationError("need gamma or the feature count d")
            gamma = 1.0 / d
        return cls(KernelFamily.RBF, float(gamma))


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.size} vs {b.size}")
    if spec.family is KernelFamily.LINEAR:
        return float(np.dot(a, b))
    diff = a - b
    return float(np.exp(-spec.gamma * np.dot(diff, diff)))


def kernel_matrix(spec: KernelSpec, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """K[i, j] = k(xa[i], xb[j]) for two row-matrices."""
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    if xa.shape[1] != xb.shape[1]:
        raise ValidationError(
            f"dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}")
    if spec.family is KernelFamily.LINEAR:
        return xa @ xb.T
    return np.exp(-spec.gamma * cdist(xa, xb, "sqeuclidean"))


def gram_row(spec: KernelSpec, data: Dataset | np.ndarray, i: int) -> np.ndarray:
    x = data.features if isinstance(data, Dataset) else np.asarray(data, float)
    n = x.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"row {i} out of range for {n} samples")
    return kernel_matrix(spec, x[i:i + 1], x)[0]


class KernelCache:
    """LRU cache of Gram rows bounded by a byte budget (default 64 MiB)."""

    def __init__(self, spec: KernelSpec, x: np.ndarray,
                 max_bytes: int = 64 * 2**20) -> None:
        self.spec = spec
        self.x = np.asarray(x, dtype=float)
        self.n = self.x.shape[0]
        self.max_rows = max(2, int(max_bytes // (8 * max(self.n, 1))))
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.diag = (np.ones(self.n) if spec.family is KernelFamily.RBF
                     else np.einsum("ij,ij->i", self.x, self.x))

    def row(self, i: int) -> np.ndarray:
        with self._lock:
            r = self._rows.get(i)
            if r is not None:
                self._rows.move_to_end(i)
                self.hits += 1
                return r
        r = gram_row(self.spec, self.x, i)
        r.setflags(write=False)
        with self._lock:
            self.misses += 1
            self._rows[i] = r
            while len(self._rows) > self.max_rows:
                self._rows.popitem(last=False)
        return r
