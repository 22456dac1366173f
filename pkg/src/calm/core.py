"""Unit-hypersphere vector primitives.

All embeddings live on the unit sphere in R^M, where cosine similarity s
and L2 distance d are linked by the bijection d = sqrt(2 - 2s), s in
[-1, 1], d in [0, 2].  Internal arithmetic is float64 throughout; file
formats may store float32, widened on load.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, OutOfRange, ZeroVector

NORM_TOL = 1e-9
ZERO_TOL = 1e-12

# norms this close to 1 are "already unit" at fixed precision; the early
# exit below is what makes normalize bitwise idempotent
_UNIT_EPS = 32 * np.finfo(np.float64).eps


@dataclass
class EmbeddingSet:
    """N labeled unit vectors of dimension M.

    vectors: (N, M) float64 matrix, every row unit-norm to within 1e-9.
    labels:  (N,) non-negative integer class ids; every class that appears
             does so at least once by construction.
    """

    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise DimensionMismatch(f"vectors must be 2-D, got ndim={self.vectors.ndim}")
        n, m = self.vectors.shape
        if n < 1 or m < 2:
            raise DimensionMismatch(f"need N >= 1 and M >= 2, got shape {(n, m)}")
        if self.labels.shape != (n,):
            raise DimensionMismatch(
                f"labels shape {self.labels.shape} does not match N={n}"
            )
        if np.any(self.labels < 0):
            raise OutOfRange("labels must be non-negative integers")
        norms = np.linalg.norm(self.vectors, axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > NORM_TOL:
            raise OutOfRange(f"rows must be unit-norm to {NORM_TOL}, worst deviation {worst:.3e}")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def classes(self) -> np.ndarray:
        """Sorted unique class ids."""
        return np.unique(self.labels)

    def class_indices(self, class_id: int) -> np.ndarray:
        """Sorted sample indices belonging to one class."""
        return np.flatnonzero(self.labels == class_id)


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm, preserving direction.

    Vectors already unit-norm at fixed precision are returned unchanged,
    so a second application is a bitwise no-op.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= ZERO_TOL:
        raise ZeroVector(f"norm {norm:.3e} <= {ZERO_TOL}")
    if abs(norm - 1.0) <= _UNIT_EPS:
        return v.copy()
    return v / norm


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization; rows already unit at fixed precision pass through."""
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms <= ZERO_TOL):
        bad = int(np.argmin(norms))
        raise ZeroVector(f"row {bad} has norm {float(norms[bad, 0]):.3e}")
    divisors = np.where(np.abs(norms - 1.0) <= _UNIT_EPS, 1.0, norms)
    return mat / divisors


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two unit vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"shapes {u.shape} and {v.shape} are incompatible")
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Pairwise cosine similarities between rows of unit matrices, clamped."""
    a = np.asarray(a, dtype=np.float64)
    b = a if b is None else np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"dims {a.shape[1]} and {b.shape[1]} differ")
    return np.clip(a @ b.T, -1.0, 1.0)


def cos_to_l2(s):
    """Map cosine similarity to L2 distance on the unit sphere: sqrt(2 - 2s)."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < -1.0 - NORM_TOL) or np.any(s > 1.0 + NORM_TOL):
        raise OutOfRange("similarity outside [-1, 1]")
    d = np.sqrt(2.0 - 2.0 * np.clip(s, -1.0, 1.0))
    return float(d) if d.ndim == 0 else d


def l2_to_cos(d):
    """Inverse of :func:`cos_to_l2`: s = 1 - d^2 / 2."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < -NORM_TOL) or np.any(d > 2.0 + NORM_TOL):
        raise OutOfRange("distance outside [0, 2]")
    s = 1.0 - np.clip(d, 0.0, 2.0) ** 2 / 2.0
    return float(s) if s.ndim == 0 else s
