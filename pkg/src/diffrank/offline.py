"""Offline database-side diffusion: the sparsified inverse Laplacian.

For every database element ``i`` the Laplacian is sliced to the element's
top-L neighbor ids (self first) and ``L_hat c_i = e_0`` is solved with CG.
The pair (neighbor ids, c_i) is column ``i`` of the index.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .cg import OFFLINE_CG, CgConfig, SolverError, solve_sliced_columns
from .features import FeatureSet
from .graph import build_affinity, build_laplacian, normalize_symmetric
from .knn import BruteForceSearch, KnnResult, NeighborSearch, SimilarityConfig


@dataclass(frozen=True, eq=False)
class TruncationIndex:
    lists: np.ndarray  # (n, L); row i starts with i, then neighbors by similarity

    @property
    def L(self) -> int:
        return self.lists.shape[1]

    @property
    def n(self) -> int:
        return self.lists.shape[0]


def self_first(ids: np.ndarray) -> np.ndarray:
    """Move each row's own index to the front.

    If duplicates pushed a row's own index out of its list, it replaces the
    last entry.
    """
    ids = np.array(ids, dtype=np.int32, copy=True)
    rows = np.arange(ids.shape[0])
    is_self = ids == rows[:, None]
    missing = ~is_self.any(axis=1)
    ids[missing, -1] = rows[missing]
    is_self[missing, -1] = True
    at = is_self.argmax(axis=1)
    for i in np.flatnonzero(at):
        ids[i, 1 : at[i] + 1] = ids[i, : at[i]].copy()
        ids[i, 0] = i
    return ids


def truncation_lists(db: FeatureSet, L: int, searcher: Optional[NeighborSearch] = None) -> TruncationIndex:
    if not 1 <= L <= db.n:
        raise ValueError(f"L={L} must be in [1, n={db.n}]")
    searcher = searcher or BruteForceSearch(db)
    return TruncationIndex(self_first(searcher.search(db.vectors, L).ids))


def _check_ids(ids, n: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"slice ids must lie in [0, {n})")
    if np.unique(ids).size != ids.size:
        raise ValueError("slice ids must be distinct")
    return ids


def slice_laplacian(lap: sp.csr_matrix, ids) -> np.ndarray:
    """Dense ``lap[ids][:, ids]``: only edges with both endpoints in ``ids`` survive."""
    ids = _check_ids(ids, lap.shape[0])
    return lap[ids][:, ids].toarray()


def slice_laplacian_sparse(lap: sp.csr_matrix, ids) -> sp.csr_matrix:
    ids = _check_ids(ids, lap.shape[0])
    return sp.csr_matrix(lap[ids][:, ids])


@dataclass(eq=False)
class SparsifiedInverse:
    """Column ``i``: values ``values[i]`` at rows ``ids[i]`` (ids[i][0] == i)."""

    ids: np.ndarray     # (n, L) int32
    values: np.ndarray  # (n, L) float64 or float32
    alpha: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def L(self) -> int:
        return self.ids.shape[1]

    @property
    def nnz(self) -> int:
        return self.ids.size

    def column(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= i < self.n:
            raise IndexError(f"column {i} out of range for n={self.n}")
        return self.ids[i], self.values[i]

    def astype(self, dtype) -> "SparsifiedInverse":
        return SparsifiedInverse(self.ids, self.values.astype(dtype), self.alpha, dict(self.meta))

    def to_dense(self) -> np.ndarray:
        """Reassembled ``n x n`` approximation of the inverse (column i = c_i)."""
        out = np.zeros((self.n, self.n), dtype=np.float64)
        cols = np.repeat(np.arange(self.n), self.L)
        out[self.ids.ravel(), cols] = self.values.ravel()
        return out

    def to_sparse(self) -> sp.csc_matrix:
        n, L = self.ids.shape
        return sp.csc_matrix(
            (self.values.ravel().astype(np.float64), self.ids.ravel(), np.arange(0, n * L + 1, L)), shape=(n, n)
        )


def precompute_inverse(
    lap: sp.csr_matrix,
    trunc: TruncationIndex,
    cfg: CgConfig = OFFLINE_CG,
    alpha: float = float("nan"),
    n_jobs: int = 1,
    chunk: int = 4096,
    progress=None,
) -> SparsifiedInverse:
    """Solve one sliced system per database element.

    Columns are independent; ``n_jobs`` worker threads split them into
    chunks and the result does not depend on scheduling. ``progress`` is an
    optional callable receiving the number of finished columns.
    """
    n = lap.shape[0]
    if trunc.n != n:
        raise ValueError(f"truncation index covers {trunc.n} elements, Laplacian has {n}")
    if trunc.lists.size and (trunc.lists.min() < 0 or trunc.lists.max() >= n):
        raise IndexError("truncation list ids out of range")
    lap = sp.csr_matrix(lap)
    lap.sort_indices()
    L = trunc.L
    values = np.empty((n, L), dtype=np.float64)
    iters = np.zeros(n, dtype=np.int64)
    resid = np.zeros(n, dtype=np.float64)

    def run(lo: int) -> int:
        hi = min(n, lo + chunk)
        try:
            solve_sliced_columns(lap, trunc.lists[lo:hi], cfg, values[lo:hi], iters[lo:hi], resid[lo:hi])
        except SolverError as exc:
            col = lo + exc.column
            raise SolverError(f"CG broke down solving column {col}", column=col) from None
        return hi - lo

    t0 = time.perf_counter()
    starts = range(0, n, chunk)
    done = 0
    if n_jobs == 1:
        for lo in starts:
            done += run(lo)
            if progress:
                progress(done)
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            for count in pool.map(run, starts):
                done += count
                if progress:
                    progress(done)
    meta = {
        "cg_max_iters": cfg.max_iters,
        "cg_residual_tol": cfg.residual_tol,
        "cg_mean_iters": float(iters.mean()) if n else 0.0,
        "cg_max_residual": float(resid.max()) if n else 0.0,
        "solve_seconds": time.perf_counter() - t0,
    }
    return SparsifiedInverse(trunc.lists.astype(np.int32, copy=False), values, alpha=float(alpha), meta=meta)


@dataclass(frozen=True)
class BuildParams:
    k: int = 50
    L: int = 5000
    alpha: float = 0.99
    sim: SimilarityConfig = SimilarityConfig()
    cg: CgConfig = OFFLINE_CG


@dataclass(eq=False)
class BuiltGraph:
    laplacian: sp.csr_matrix
    trunc: TruncationIndex
    params: BuildParams


def build_graph(db: FeatureSet, params: BuildParams, searcher: Optional[NeighborSearch] = None) -> BuiltGraph:
    """Graph and truncation lists from a single search of depth max(k, L)."""
    if not 1 <= params.L <= db.n:
        raise ValueError(f"L={params.L} must be in [1, n={db.n}]")
    if not 1 <= params.k <= db.n:
        raise ValueError(f"k={params.k} must be in [1, n={db.n}]")
    searcher = searcher or BruteForceSearch(db)
    depth = max(params.k, params.L)
    knn = searcher.search(db.vectors, depth)
    graph_knn = KnnResult(knn.ids[:, : params.k], knn.sims[:, : params.k])
    lap = build_laplacian(normalize_symmetric(build_affinity(db, params.k, params.sim, graph_knn)), params.alpha)
    trunc = TruncationIndex(self_first(knn.ids[:, : params.L]))
    return BuiltGraph(lap, trunc, params)


def build_index(
    db: FeatureSet,
    params: BuildParams = BuildParams(),
    searcher: Optional[NeighborSearch] = None,
    n_jobs: int = 1,
    progress=None,
) -> SparsifiedInverse:
    """Features in, sparsified inverse out."""
    t0 = time.perf_counter()
    built = build_graph(db, params, searcher)
    t_graph = time.perf_counter() - t0
    idx = precompute_inverse(built.laplacian, built.trunc, params.cg, params.alpha, n_jobs=n_jobs, progress=progress)
    idx.meta.update(
        k=params.k,
        gamma=params.sim.gamma,
        clamp_negative=params.sim.clamp_negative,
        graph_seconds=t_graph,
        built_at=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    )
    return idx
