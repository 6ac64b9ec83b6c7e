"""Comparison methods: plain kNN, average query expansion, online diffusion.

Online diffusion solves the truncated system per query with CG, either on a
subgraph normalized on its own ("early" truncation) or on a slice of the
full-graph Laplacian ("late" truncation).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp

from .cg import ONLINE_CG, CgConfig, solve_cg
from .features import FeatureSet
from .graph import build_affinity, build_laplacian, normalize_symmetric
from .knn import BruteForceSearch, NeighborSearch, SimilarityConfig
from .online import RankedResult, aggregate_regional

MODES = ("early", "late")

# rank sentinel for items outside the truncated set; finite so scores stay finite
NON_MEMBER = -np.finfo(np.float64).max


def _query_vectors(query) -> np.ndarray:
    return np.atleast_2d(query.vectors if isinstance(query, FeatureSet) else np.asarray(query))


def knn_rank(db: FeatureSet, query, sim: SimilarityConfig = SimilarityConfig(), aggregate: str = "sum") -> RankedResult:
    q = _query_vectors(query)
    if q.shape[1] != db.d:
        raise ValueError(f"query dimension {q.shape[1]} does not match database dimension {db.d}")
    scores = sim.apply(q.astype(db.vectors.dtype) @ db.vectors.T).sum(axis=0)
    return RankedResult(aggregate_regional(scores, db.image_of, aggregate))


def expand_query(db: FeatureSet, query, k_exp: int, searcher: Optional[NeighborSearch] = None) -> np.ndarray:
    """L2-normalized mean of each query feature and its ``k_exp`` neighbors."""
    if not 1 <= k_exp <= db.n:
        raise ValueError(f"k_exp={k_exp} must be in [1, n={db.n}]")
    q = _query_vectors(query).astype(np.float64)
    searcher = searcher or BruteForceSearch(db)
    ids = searcher.search(q, k_exp).ids
    expanded = q + db.vectors[ids].astype(np.float64).sum(axis=1)
    return expanded / np.linalg.norm(expanded, axis=1, keepdims=True)


def aqe(db: FeatureSet, query, k_exp: int = 10, sim: SimilarityConfig = SimilarityConfig(), aggregate: str = "sum") -> RankedResult:
    return knn_rank(db, expand_query(db, query, k_exp), sim, aggregate)


class OnlineDiffusion:
    """Per-query diffusion with truncation to the query's top-L neighbors.

    ``laplacian`` (the full-graph ``I - alpha S``) is required for late mode.
    """

    def __init__(
        self,
        db: FeatureSet,
        L: int,
        k: int = 50,
        alpha: float = 0.99,
        cg: CgConfig = ONLINE_CG,
        mode: str = "early",
        h: int = 10,
        sim: SimilarityConfig = SimilarityConfig(),
        laplacian: Optional[sp.csr_matrix] = None,
        searcher: Optional[NeighborSearch] = None,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown truncation mode {mode!r}; expected one of {MODES}")
        if not 1 <= L <= db.n:
            raise ValueError(f"L={L} must be in [1, n={db.n}]")
        if mode == "late" and laplacian is None:
            raise ValueError("late truncation needs the full-graph Laplacian")
        if db.is_regional:
            raise ValueError("online diffusion baselines take global features only")
        self.db, self.L, self.k, self.alpha, self.cg, self.mode = db, L, k, alpha, cg, mode
        self.h, self.sim, self.laplacian = min(h, L), sim, laplacian
        self.searcher = searcher or BruteForceSearch(db)

    def truncated_system(self, q: np.ndarray) -> tuple[np.ndarray, sp.csr_matrix, np.ndarray]:
        """Member ids, the L x L system matrix and the truncated initial state."""
        knn = self.searcher.search(q[None, :], self.L)
        ids = knn.ids[0]
        y = np.zeros(self.L)
        y[: self.h] = self.sim.apply(knn.sims[0, : self.h])
        if self.mode == "early":
            sub = self.db.subset(ids)
            a = build_affinity(sub, min(self.k, self.L), self.sim)
            lap = build_laplacian(normalize_symmetric(a), self.alpha)
        else:
            lap = sp.csr_matrix(self.laplacian[ids][:, ids])
        return ids, lap, y

    def scores(self, query) -> np.ndarray:
        q = _query_vectors(query)
        if q.shape[0] != 1:
            raise ValueError("online diffusion expects a single global query feature")
        ids, lap, y = self.truncated_system(q[0])
        f = solve_cg(lap, y, self.cg)
        out = np.full(self.db.n, NON_MEMBER)
        out[ids] = f
        return out

    def search(self, query) -> RankedResult:
        return RankedResult(self.scores(query))

    def search_top(self, query, topk: int) -> tuple[np.ndarray, np.ndarray]:
        # members already outrank everything else; rank within the truncated set
        q = _query_vectors(query)
        ids, lap, y = self.truncated_system(q[0])
        f = solve_cg(lap, y, self.cg)
        order = np.lexsort((ids, -f))[:topk]
        return ids[order], f[order]


def online_diffusion(
    db: FeatureSet,
    query,
    L: int,
    k: int = 50,
    alpha: float = 0.99,
    cg: CgConfig = ONLINE_CG,
    trunc_mode: str = "early",
    h: int = 10,
    sim: SimilarityConfig = SimilarityConfig(),
    laplacian: Optional[sp.csr_matrix] = None,
) -> RankedResult:
    return OnlineDiffusion(db, L, k, alpha, cg, trunc_mode, h, sim, laplacian).search(query)
