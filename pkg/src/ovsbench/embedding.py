"""Embedding primitives: labeled row sets, cosine similarity, normalization, mask pooling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, EmptyRegionError, ShapeError


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """N x d matrix of row embeddings with optional unique labels.

    Rows are stored as float64 regardless of the precision they were loaded with.
    """

    rows: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if rows.ndim != 2:
            raise ShapeError(f"embedding rows must be 2-D, got shape {rows.shape}")
        if rows.shape[1] < 1:
            raise ShapeError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(rows)):
            raise DegenerateInputError("embedding rows contain NaN or Inf")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != rows.shape[0]:
                raise ShapeError(f"{len(labels)} labels for {rows.shape[0]} rows")
            if len(set(labels)) != len(labels):
                raise ShapeError("embedding labels must be unique")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def index_of(self, label: str) -> int:
        if self.labels is None:
            raise KeyError(label)
        return self.labels.index(label)

    def subset(self, indices: Sequence[int]) -> "EmbeddingSet":
        idx = list(indices)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return EmbeddingSet(self.rows[idx], labels)


def _as_vector(a) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64).ravel()
    if v.size < 1:
        raise ShapeError("embedding must have dimension >= 1")
    if not np.all(np.isfinite(v)):
        raise DegenerateInputError("embedding contains NaN or Inf")
    return v


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two nonzero vectors, accumulated in float64."""
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    c = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, c))


def cosine_matrix(x, y) -> np.ndarray:
    """Pairwise cosine similarities between the rows of ``x`` and ``y``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    if np.any(nx == 0.0) or np.any(ny == 0.0):
        raise DegenerateInputError("cosine similarity of a zero-norm row is undefined")
    c = (x / nx[:, None]) @ (y / ny[:, None]).T
    return np.clip(c, -1.0, 1.0)


def l2_normalize(a) -> np.ndarray:
    v = _as_vector(a)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DegenerateInputError("cannot normalize a zero-norm vector")
    return v / n


def l2_normalize_rows(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(n == 0.0)
    if bad.size:
        raise DegenerateInputError(f"zero-norm rows: {bad.tolist()}")
    return x / n[:, None]


def mask_pool(features, mask) -> np.ndarray:
    """Mean feature vector over the pixels selected by a binary mask.

    ``features`` is an H x W x d grid and ``mask`` an H x W boolean (or 0/1) array.
    """
    f = np.asarray(features, dtype=np.float64)
    m = np.asarray(mask)
    if f.ndim != 3:
        raise ShapeError(f"feature map must be H x W x d, got shape {f.shape}")
    if m.shape != f.shape[:2]:
        raise ShapeError(f"mask shape {m.shape} does not match feature map {f.shape[:2]}")
    if not np.all(np.isfinite(f)):
        raise DegenerateInputError("feature map contains NaN or Inf")
    sel = m.astype(bool)
    count = int(sel.sum())
    if count == 0:
        raise EmptyRegionError("mask selects no pixels")
    return f[sel].sum(axis=0) / count
