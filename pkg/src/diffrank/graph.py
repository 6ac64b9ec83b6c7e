"""Mutual-kNN affinity graph, symmetric normalization and the regularized Laplacian.

All matrices are ``scipy.sparse.csr_matrix`` in canonical form: sorted column
indices, no duplicates, no stored zeros (the Laplacian diagonal excepted).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp

from .features import FeatureSet
from .knn import BruteForceSearch, KnnResult, SimilarityConfig


def _canonical(m: sp.spmatrix) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def mutual_pairs(ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairs ``(i, j)``, ``i < j``, where each is in the other's neighbor list.

    ``ids[i]`` holds the neighbor list of row ``i``; self entries are ignored.
    """
    n, k = ids.shape
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = ids.astype(np.int64).ravel()
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    fwd = rows * n + cols
    hit = np.isin(fwd, cols * n + rows)
    lower = hit & (rows < cols)
    return rows[lower], cols[lower]


def build_affinity(
    db: FeatureSet,
    k: int,
    sim: SimilarityConfig = SimilarityConfig(),
    knn: Optional[KnnResult] = None,
) -> sp.csr_matrix:
    """Affinity restricted to reciprocal k-nearest neighbors.

    Neighbor lists come from an exact self-search (each point counts as one
    of its own k neighbors). ``knn`` may be passed to reuse a search with at
    least ``k`` columns.
    """
    n = db.n
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, n={n}]")
    if knn is None:
        knn = BruteForceSearch(db).search(db.vectors, k)
    elif knn.k < k or knn.ids.shape[0] != n:
        raise ValueError("precomputed neighbor lists do not cover k neighbors of every point")
    i, j = mutual_pairs(knn.ids[:, :k])
    x = db.vectors
    # one float64 dot per unordered pair keeps a_ij == a_ji bit for bit
    w = sim.apply(np.einsum("ij,ij->i", x[i].astype(np.float64), x[j].astype(np.float64)))
    a = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))
    return _canonical(a)


def degrees(a: sp.csr_matrix) -> np.ndarray:
    return np.asarray(a.sum(axis=1)).ravel()


def normalize_symmetric(a: sp.csr_matrix) -> sp.csr_matrix:
    """``D^-1/2 A D^-1/2``; zero-degree rows stay zero."""
    a = _canonical(a)
    if a.nnz and a.data.min() < 0:
        raise ValueError("affinity matrix has negative entries")
    deg = degrees(a)
    inv_sqrt = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=inv_sqrt, where=deg > 0)
    rows = np.repeat(np.arange(a.shape[0]), np.diff(a.indptr))
    s = a.copy()
    s.data = a.data * (inv_sqrt[rows] * inv_sqrt[a.indices])
    return _canonical(s)


def build_laplacian(s: sp.csr_matrix, alpha: float = 0.99) -> sp.csr_matrix:
    """``I - alpha * S`` with the unit diagonal stored explicitly."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = s.shape[0]
    lap = sp.csr_matrix(sp.identity(n, format="csr") - alpha * sp.csr_matrix(s))
    lap.sum_duplicates()
    lap.sort_indices()
    return lap


def laplacian_from_features(
    db: FeatureSet,
    k: int,
    alpha: float = 0.99,
    sim: SimilarityConfig = SimilarityConfig(),
    knn: Optional[KnnResult] = None,
) -> sp.csr_matrix:
    return build_laplacian(normalize_symmetric(build_affinity(db, k, sim, knn)), alpha)
