"""Evaluation and latency harness shared by the CLI and the acceptance tests."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .baselines import OnlineDiffusion, expand_query
from .cg import ONLINE_CG, CgConfig, solve_cg
from .evaluation import GroundTruth, average_precision, mean_ap
from .features import FeatureSet
from .graph import build_affinity, build_laplacian, normalize_symmetric
from .knn import BruteForceSearch, SimilarityConfig
from .offline import SparsifiedInverse
from .online import RankedResult, _state, accumulate, aggregate_regional, top_k

METHODS = ("knn", "aqe", "proposed", "online-early", "online-late")
SWEEP_COLUMNS = ("L", "mode", "mAP", "latency_ms")


@dataclass(frozen=True)
class BenchParams:
    k: int = 50
    L: int = 1000
    h: int = 10
    alpha: float = 0.99
    gamma: float = 3.0
    k_exp: int = 10
    topk: int = 100
    cg_max_iters: int = ONLINE_CG.max_iters
    cg_residual_tol: float = ONLINE_CG.residual_tol


@dataclass
class BenchReport:
    method: str
    mAP: Optional[float]
    ap: list
    latency_ms: dict
    knn_latency_ms: dict
    breakdown_ms: dict
    params: dict
    n_queries: int
    n_repeats: int
    extra: dict = field(default_factory=dict)

    @property
    def overhead_ratio(self) -> float:
        """(method - bare kNN) / bare kNN, on mean per-query latency."""
        return (self.latency_ms["mean"] - self.knn_latency_ms["mean"]) / self.knn_latency_ms["mean"]

    def to_json(self, path: Union[str, Path, None] = None) -> str:
        payload = asdict(self)
        payload["overhead_ratio"] = self.overhead_ratio
        text = json.dumps(payload, indent=2)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


class _Runner:
    """One retrieval method. ``run`` is the timed path and fills ``stages``."""

    name = "?"

    def run(self, q: np.ndarray, topk: int, stages: dict) -> np.ndarray:
        raise NotImplementedError

    def rank(self, q: np.ndarray) -> RankedResult:
        raise NotImplementedError


def _tick(stages: dict, key: str, t0: float) -> float:
    t = time.perf_counter()
    stages[key] = stages.get(key, 0.0) + (t - t0)
    return t


class KnnRunner(_Runner):
    name = "knn"

    def __init__(self, db: FeatureSet, sim: SimilarityConfig):
        self.db, self.sim = db, sim
        self.searcher = BruteForceSearch(db)

    def run(self, q, topk, stages):
        t = time.perf_counter()
        ids = self.searcher.search(q, topk).ids[0]
        _tick(stages, "knn", t)
        return ids

    def rank(self, q):
        scores = self.sim.apply(q.astype(self.db.vectors.dtype) @ self.db.vectors.T).sum(axis=0)
        return RankedResult(aggregate_regional(scores, self.db.image_of))


class AqeRunner(KnnRunner):
    name = "aqe"

    def __init__(self, db, sim, k_exp):
        super().__init__(db, sim)
        self.k_exp = k_exp

    def run(self, q, topk, stages):
        t = time.perf_counter()
        q2 = expand_query(self.db, q, self.k_exp, self.searcher)
        t = _tick(stages, "expand", t)
        ids = self.searcher.search(q2, topk).ids[0]
        _tick(stages, "knn", t)
        return ids

    def rank(self, q):
        return super().rank(expand_query(self.db, q, self.k_exp, self.searcher))


class ProposedRunner(_Runner):
    name = "proposed"

    def __init__(self, idx: SparsifiedInverse, db: FeatureSet, h: int, sim: SimilarityConfig):
        if idx.n != db.n:
            raise ValueError(f"index has {idx.n} columns but the database has {db.n} features")
        self.idx, self.db, self.h, self.sim = idx, db, h, sim
        self.searcher = BruteForceSearch(db)

    def _scores(self, q, stages):
        t = time.perf_counter()
        knn = self.searcher.search(q, self.h)
        t = _tick(stages, "knn", t)
        scores = np.zeros(self.idx.n)
        for ids, ips in zip(knn.ids, knn.sims):
            accumulate(self.idx, _state(ids, self.sim.apply(ips)), scores)
        scores = aggregate_regional(scores, self.db.image_of)
        _tick(stages, "combine", t)
        return scores

    def run(self, q, topk, stages):
        scores = self._scores(q, stages)
        t = time.perf_counter()
        ids = top_k(scores, topk)
        _tick(stages, "select", t)
        return ids

    def rank(self, q):
        return RankedResult(self._scores(q, {}))


class OnlineRunner(_Runner):
    """Online diffusion with stage timing (truncation kNN, subgraph, CG)."""

    def __init__(self, od: OnlineDiffusion):
        self.od = od
        self.name = f"online-{od.mode}"

    def run(self, q, topk, stages):
        od = self.od
        t = time.perf_counter()
        knn = od.searcher.search(q, od.L)
        t = _tick(stages, "knn", t)
        ids = knn.ids[0]
        y = np.zeros(od.L)
        y[: od.h] = od.sim.apply(knn.sims[0, : od.h])
        if od.mode == "early":
            a = build_affinity(od.db.subset(ids), min(od.k, od.L), od.sim)
            lap = build_laplacian(normalize_symmetric(a), od.alpha)
        else:
            lap = sp.csr_matrix(od.laplacian[ids][:, ids])
        t = _tick(stages, "graph", t)
        f = solve_cg(lap, y, od.cg)
        t = _tick(stages, "solve", t)
        order = np.lexsort((ids, -f))[:topk]
        _tick(stages, "select", t)
        return ids[order]

    def rank(self, q):
        return self.od.search(q)


def make_runner(
    method: str,
    db: FeatureSet,
    params: BenchParams = BenchParams(),
    idx: Optional[SparsifiedInverse] = None,
    laplacian: Optional[sp.csr_matrix] = None,
) -> _Runner:
    sim = SimilarityConfig(params.gamma)
    if method == "knn":
        return KnnRunner(db, sim)
    if method == "aqe":
        return AqeRunner(db, sim, params.k_exp)
    if method == "proposed":
        if idx is None:
            raise ValueError("the proposed method needs a precomputed index")
        return ProposedRunner(idx, db, params.h, sim)
    if method in ("online-early", "online-late"):
        cg = CgConfig(params.cg_max_iters, params.cg_residual_tol)
        mode = method.split("-")[1]
        return OnlineRunner(OnlineDiffusion(db, params.L, params.k, params.alpha, cg, mode, params.h, sim, laplacian))
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _stats(samples_ms: np.ndarray) -> dict:
    return {
        "mean": float(np.mean(samples_ms)),
        "median": float(np.median(samples_ms)),
        "p99": float(np.percentile(samples_ms, 99)),
    }


def time_queries(runner: _Runner, queries: Sequence[np.ndarray], topk: int, n_repeats: int = 10):
    """Per-query mean latency (ms) over ``n_repeats`` passes, plus stage means."""
    per_query = np.zeros((n_repeats, len(queries)))
    stages: dict = {}
    for r in range(n_repeats):
        for i, q in enumerate(queries):
            t0 = time.perf_counter()
            runner.run(q, topk, stages)
            per_query[r, i] = (time.perf_counter() - t0) * 1e3
    runs = n_repeats * len(queries)
    return per_query.mean(axis=0), {k: v * 1e3 / runs for k, v in stages.items()}


def evaluate(runner: _Runner, queries: Sequence[np.ndarray], gts: Sequence[GroundTruth]) -> list[float]:
    return [average_precision(runner.rank(q).order, gt) for q, gt in zip(queries, gts)]


def bench_latency(
    method: str,
    db: FeatureSet,
    queries: Sequence[np.ndarray],
    params: BenchParams = BenchParams(),
    n_repeats: int = 10,
    gts: Optional[Sequence[GroundTruth]] = None,
    idx: Optional[SparsifiedInverse] = None,
    laplacian: Optional[sp.csr_matrix] = None,
) -> BenchReport:
    """Latency of ``method`` next to bare kNN on the same queries.

    Only the per-query path is timed; index loading and runner set-up are
    excluded. mAP is computed from full rankings when ``gts`` is given.
    """
    queries = [np.atleast_2d(q) for q in queries]
    runner = make_runner(method, db, params, idx, laplacian)
    knn_runner = make_runner("knn", db, params)
    for q in queries[:2]:  # warm caches and lazy imports outside the timed loop
        runner.run(q, params.topk, {})
        knn_runner.run(q, params.topk, {})
    lat, breakdown = time_queries(runner, queries, params.topk, n_repeats)
    knn_lat, _ = time_queries(knn_runner, queries, params.topk, n_repeats)
    aps = evaluate(runner, queries, gts) if gts is not None else []
    return BenchReport(
        method=method,
        mAP=mean_ap(aps) if aps else None,
        ap=aps,
        latency_ms=_stats(lat),
        knn_latency_ms=_stats(knn_lat),
        breakdown_ms=breakdown,
        params=asdict(params),
        n_queries=len(queries),
        n_repeats=n_repeats,
    )


def sweep_truncation(
    db: FeatureSet,
    queries: Sequence[np.ndarray],
    gts: Sequence[GroundTruth],
    Ls: Sequence[int],
    modes: Sequence[str] = ("early", "late"),
    params: BenchParams = BenchParams(),
    laplacian: Optional[sp.csr_matrix] = None,
    n_repeats: int = 1,
    index_for=None,
) -> list[dict]:
    """mAP and mean latency per (L, mode).

    ``late`` needs the full-graph ``laplacian``; ``proposed`` needs
    ``index_for(L)`` returning an index truncated at ``L``.
    """
    queries = [np.atleast_2d(q) for q in queries]
    rows = []
    for L in Ls:
        if not 1 <= L <= db.n:
            raise ValueError(f"L={L} must be in [1, n={db.n}]")
        p = BenchParams(**{**asdict(params), "L": int(L)})
        for mode in modes:
            if mode == "proposed":
                if index_for is None:
                    raise ValueError("sweeping the proposed method needs index_for(L)")
                runner = make_runner("proposed", db, p, idx=index_for(L))
            elif mode in ("early", "late"):
                runner = make_runner(f"online-{mode}", db, p, laplacian=laplacian)
            else:
                raise ValueError(f"unknown sweep mode {mode!r}")
            aps = evaluate(runner, queries, gts)
            lat, _ = time_queries(runner, queries, p.topk, n_repeats)
            rows.append({"L": int(L), "mode": mode, "mAP": mean_ap(aps), "latency_ms": float(lat.mean())})
    return rows


def write_csv(rows: Sequence[dict], path: Union[str, Path], columns: Sequence[str] = SWEEP_COLUMNS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow({c: row[c] for c in columns})
