"""Exact inner-product k-nearest-neighbor search and the similarity kernel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .features import FeatureSet

_BLOCK_BYTES = 64 << 20


@dataclass(frozen=True)
class SimilarityConfig:
    """Kernel ``s(x, y) = max(<x, y>, 0) ** gamma``.

    With ``clamp_negative=False`` the sign is kept: ``sign(t) * |t| ** gamma``.
    """

    gamma: float = 3.0
    clamp_negative: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def apply(self, inner: np.ndarray) -> np.ndarray:
        t = np.asarray(inner, dtype=np.float64)
        if self.clamp_negative:
            return np.maximum(t, 0.0) ** self.gamma
        return np.sign(t) * np.abs(t) ** self.gamma


@dataclass(frozen=True)
class KnnResult:
    ids: np.ndarray   # (m, k) int32
    sims: np.ndarray  # (m, k) inner products in the feature dtype, rows non-increasing

    @property
    def k(self) -> int:
        return self.ids.shape[1]


class NeighborSearch(Protocol):
    """Anything that returns the top-k database rows for a batch of queries."""

    def search(self, queries: np.ndarray, k: int) -> KnnResult: ...


class BruteForceSearch:
    """Exhaustive inner-product search over a fixed database.

    Ties are broken by ascending database index, so results are fully
    deterministic.
    """

    def __init__(self, database: FeatureSet):
        self.database = database
        self._x = database.vectors

    def search(self, queries: np.ndarray, k: int) -> KnnResult:
        queries = np.atleast_2d(np.asarray(queries))
        n, d = self._x.shape
        if queries.shape[1] != d:
            raise ValueError(f"query dimension {queries.shape[1]} does not match database dimension {d}")
        if not 1 <= k <= n:
            raise ValueError(f"k={k} must be in [1, n={n}]")
        q = queries.astype(self._x.dtype, copy=False)
        m = q.shape[0]
        ids = np.empty((m, k), dtype=np.int32)
        sims = np.empty((m, k), dtype=self._x.dtype)
        block = max(1, _BLOCK_BYTES // max(1, n * self._x.itemsize))
        for lo in range(0, m, block):
            hi = min(m, lo + block)
            ids[lo:hi], sims[lo:hi] = topk_rows(q[lo:hi] @ self._x.T, k)
        return KnnResult(ids, sims)


def topk_rows(sims: np.ndarray, k: int):
    """Per-row top-k of a score block: (ids, values), sorted descending.

    Equal scores are ordered by ascending column index, including at the
    selection boundary.
    """
    m, n = sims.shape
    if k < n:
        part = np.argpartition(sims, n - k, axis=1)[:, n - k:]
        kth = np.take_along_axis(sims, part, axis=1).min(axis=1)
        # rows where the boundary value is shared with an unselected column
        crowded = np.flatnonzero((sims >= kth[:, None]).sum(axis=1) > k)
        for r in crowded:
            row = sims[r]
            above = np.flatnonzero(row > kth[r])
            tied = np.flatnonzero(row == kth[r])[: k - above.size]
            part[r] = np.concatenate([above, tied])
    else:
        part = np.broadcast_to(np.arange(n), (m, n)).copy()
    top = np.take_along_axis(sims, part, axis=1)
    order = np.lexsort((part, -top), axis=-1)
    return np.take_along_axis(part, order, axis=1), np.take_along_axis(top, order, axis=1)


def knn_search(queries: FeatureSet, database: FeatureSet, k: int) -> KnnResult:
    return BruteForceSearch(database).search(queries.vectors, k)
