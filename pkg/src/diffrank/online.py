"""Online search: kNN lookup plus a sparse combination of precomputed columns."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .features import FeatureSet
from .knn import BruteForceSearch, NeighborSearch, SimilarityConfig, topk_rows
from .offline import SparsifiedInverse

AGGREGATIONS = ("sum", "max")


@dataclass(frozen=True)
class InitialState:
    """Sparse right-hand side: query similarity mass on ``ids``."""

    ids: np.ndarray
    weights: np.ndarray
    fallback: bool = False  # every similarity clamped to zero; weights are uniform

    def __post_init__(self):
        if len(self.ids) == 0:
            raise ValueError("initial state needs at least one entry")
        if len(self.ids) != len(self.weights):
            raise ValueError("ids and weights differ in length")

    def scaled(self, factor: float) -> "InitialState":
        return InitialState(self.ids, self.weights * factor, self.fallback)


@dataclass(eq=False)
class RankedResult:
    scores: np.ndarray

    @cached_property
    def order(self) -> np.ndarray:
        """All ids by descending score; ties by ascending id."""
        return np.argsort(-self.scores, kind="stable")

    def top(self, k: int) -> np.ndarray:
        return top_k(self.scores, k)

    def __len__(self) -> int:
        return self.scores.shape[0]


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """First ``k`` entries of the full ranking, without sorting everything.

    Diffusion score vectors are mostly exact zeros, so when at least ``k``
    entries are strictly positive only those are ranked.
    """
    n = scores.shape[0]
    k = min(k, n)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    pos = np.flatnonzero(scores > 0)
    if pos.size >= k:
        ids, _ = topk_rows(scores[pos][None, :], k)
        return pos[ids[0]]
    ids, _ = topk_rows(scores[None, :], k)
    return ids[0]


def build_initial_state(
    query: FeatureSet,
    db: FeatureSet,
    h: int = 10,
    sim: SimilarityConfig = SimilarityConfig(),
    searcher: Optional[NeighborSearch] = None,
) -> list[InitialState]:
    """One initial state per query feature, from its ``h`` nearest database rows.

    Weights are raw kernel similarities; the query is not part of the graph,
    so no degree normalization applies.
    """
    if not 1 <= h <= db.n:
        raise ValueError(f"h={h} must be in [1, n={db.n}]")
    searcher = searcher or BruteForceSearch(db)
    knn = searcher.search(query.vectors, h)
    return [_state(ids, sim.apply(ips)) for ids, ips in zip(knn.ids, knn.sims)]


def _state(ids: np.ndarray, weights: np.ndarray) -> InitialState:
    keep = weights > 0
    if not keep.any():
        return InitialState(ids, np.ones(ids.shape[0]), fallback=True)
    return InitialState(ids[keep], weights[keep])


def accumulate(idx: SparsifiedInverse, y: InitialState, scores: np.ndarray) -> np.ndarray:
    """``scores[row_ids(j)] += w_j * c_j`` for every entry of ``y``."""
    ids = np.asarray(y.ids)
    if ids.size and (ids.min() < 0 or ids.max() >= idx.n):
        raise IndexError(f"initial state references a column outside [0, {idx.n})")
    for col, w in zip(ids, y.weights):
        rows = idx.ids[col]
        scores[rows] += w * idx.values[col]
    return scores


def diffuse_query(idx: SparsifiedInverse, y: InitialState) -> RankedResult:
    return RankedResult(accumulate(idx, y, np.zeros(idx.n, dtype=np.float64)))


def aggregate_regional(scores: np.ndarray, image_of: Optional[np.ndarray], rule: str = "sum") -> np.ndarray:
    """Feature scores to image scores (sum, or max over the image's features)."""
    if image_of is None:
        return scores
    image_of = np.asarray(image_of)
    if image_of.shape[0] != scores.shape[0]:
        raise ValueError(f"image map covers {image_of.shape[0]} features, got {scores.shape[0]} scores")
    n_images = int(image_of.max()) + 1 if image_of.size else 0
    if rule == "sum":
        return np.bincount(image_of, weights=scores, minlength=n_images)
    if rule == "max":
        out = np.full(n_images, -np.inf)
        np.maximum.at(out, image_of, scores)
        return out
    raise ValueError(f"unknown aggregation {rule!r}; expected one of {AGGREGATIONS}")


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def late_fusion(global_: RankedResult, regional: RankedResult, w: float = 0.75) -> RankedResult:
    """``w * regional + (1 - w) * global`` after min-max scaling each to [0, 1]."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"fusion weight must be in [0, 1], got {w}")
    g, r = np.asarray(global_.scores, dtype=np.float64), np.asarray(regional.scores, dtype=np.float64)
    if g.shape != r.shape:
        raise ValueError(f"cannot fuse {g.shape[0]} global scores with {r.shape[0]} regional scores")
    return RankedResult(w * _minmax(r) + (1.0 - w) * _minmax(g))


class DiffusionEngine:
    """Query-time state: a loaded index, the database features and a searcher.

    The engine keeps no per-query mutable state, so one instance can serve
    concurrent queries.
    """

    def __init__(
        self,
        idx: SparsifiedInverse,
        db: FeatureSet,
        h: int = 10,
        sim: Optional[SimilarityConfig] = None,
        aggregate: str = "sum",
        searcher: Optional[NeighborSearch] = None,
    ):
        if idx.n != db.n:
            raise ValueError(f"index has {idx.n} columns but the database has {db.n} features")
        if not 1 <= h <= db.n:
            raise ValueError(f"h={h} must be in [1, n={db.n}]")
        if aggregate not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {aggregate!r}")
        if sim is None:
            sim = SimilarityConfig(idx.meta.get("gamma", 3.0), idx.meta.get("clamp_negative", True))
        self.idx, self.db, self.h, self.sim, self.aggregate = idx, db, h, sim, aggregate
        self.searcher = searcher or BruteForceSearch(db)

    def feature_scores(self, query_vectors: np.ndarray) -> np.ndarray:
        knn = self.searcher.search(np.atleast_2d(query_vectors), self.h)
        scores = np.zeros(self.idx.n, dtype=np.float64)
        for ids, ips in zip(knn.ids, knn.sims):
            accumulate(self.idx, _state(ids, self.sim.apply(ips)), scores)
        return scores

    def scores(self, query_vectors: np.ndarray) -> np.ndarray:
        return aggregate_regional(self.feature_scores(query_vectors), self.db.image_of, self.aggregate)

    def search(self, query_vectors: np.ndarray) -> RankedResult:
        return RankedResult(self.scores(query_vectors))

    def search_top(self, query_vectors: np.ndarray, topk: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.scores(query_vectors)
        ids = top_k(s, topk)
        return ids, s[ids]


def search(
    idx: SparsifiedInverse,
    db: FeatureSet,
    query: FeatureSet,
    h: int = 10,
    sim: Optional[SimilarityConfig] = None,
    aggregate: str = "sum",
) -> RankedResult:
    """Initial state, column combination (summed over query features), aggregation."""
    return DiffusionEngine(idx, db, h, sim, aggregate).search(query.vectors)


def split_queries(query: FeatureSet) -> Sequence[FeatureSet]:
    """Group a multi-query feature file by its query map (one FeatureSet per query)."""
    if query.image_of is None:
        return [FeatureSet(query.vectors[i : i + 1]) for i in range(query.n)]
    order = np.argsort(query.image_of, kind="stable")
    bounds = np.searchsorted(query.image_of[order], np.arange(query.n_images + 1))
    return [FeatureSet(query.vectors[order[a:b]]) for a, b in zip(bounds[:-1], bounds[1:])]
