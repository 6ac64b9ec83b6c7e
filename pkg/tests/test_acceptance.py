"""Acceptance criteria, each checked at its stated tolerance.

Every test prints a one-line PASS/FAIL verdict (also repeated in the
terminal summary). Criterion 5 builds a 100k-vector index and takes a few
minutes; criterion 8 runs only when DIFFRANK_OXFORD_DIR points at a
directory with db.fvecs, queries.fvecs and gt.json.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg

from diffrank.baselines import OnlineDiffusion, aqe, knn_rank
from diffrank.bench import BenchParams, bench_latency
from diffrank.cg import CgConfig
from diffrank.evaluation import GroundTruth, average_precision, load_ground_truth, mean_ap
from diffrank.features import FeatureSet, load_features
from diffrank.graph import build_affinity, build_laplacian, normalize_symmetric
from diffrank.index_io import expected_file_size, header_size, load_index, save_index
from diffrank.knn import SimilarityConfig
from diffrank.offline import BuildParams, build_graph, build_index, precompute_inverse
from diffrank.online import DiffusionEngine, InitialState, build_initial_state, diffuse_query
from diffrank.synth import BENCHMARK, SynthConfig, from_config, synth_manifolds

from conftest import clustered_features, record_criterion

ALPHA = 0.99
TOL_CG = CgConfig(max_iters=2000, residual_tol=1e-10)


def random_graph(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(50, 201))
    d = int(rng.integers(4, 17))
    return clustered_features(n, d, int(rng.integers(2, 9)), seed=seed, spread=float(rng.uniform(0.2, 0.6)))


def map_of(rank_fn, queries, gts):
    return mean_ap(average_precision(rank_fn(q[None]).order, gt) for q, gt in zip(queries, gts))


def test_criterion_1_closed_form_equivalence(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for g in range(20):
        db = random_graph(g)
        built = build_graph(db, BuildParams(k=10, L=db.n, alpha=ALPHA, cg=TOL_CG))
        idx = precompute_inverse(built.laplacian, built.trunc, TOL_CG, ALPHA)
        factor = scipy.linalg.cho_factor(built.laplacian.toarray())
        engine = DiffusionEngine(idx, db, h=10)
        queries = FeatureSet.from_array(np.random.default_rng(100 + g).standard_normal((50, db.d)))
        states = build_initial_state(queries, db, h=10)
        for q, state in zip(queries.vectors, states):
            y = np.zeros(db.n)
            y[state.ids] = state.weights
            oracle = scipy.linalg.cho_solve(factor, y)
            worst = max(worst, np.abs(engine.scores(q) - oracle).max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30
    assert record_criterion(1, ok, f"max |proposed - dense solve| = {worst:.2e} (<= 1e-6), {elapsed:.1f} s (< 30 s)", capsys)


def test_criterion_2_inverse_reconstruction(capsys):
    worst = 0.0
    for g in range(5):
        db = random_graph(1000 + g)
        idx = build_index(db, BuildParams(k=10, L=db.n, alpha=ALPHA, cg=TOL_CG))
        lap = build_laplacian(normalize_symmetric(build_affinity(db, 10)), ALPHA).toarray()
        worst = max(worst, np.abs(idx.to_dense() - np.linalg.inv(lap)).max())
    assert record_criterion(2, worst <= 1e-6, f"max elementwise |reassembled - inv(L_alpha)| = {worst:.2e} (<= 1e-6)", capsys)


def test_criterion_3_late_truncation_beats_early(capsys):
    Ls = (50, 100, 250)
    lines, ok = [], True
    for seed in (0, 1, 2):
        cfg = SynthConfig(**{**BENCHMARK.__dict__, "seed": seed})
        ds = from_config(cfg)
        lap = build_graph(ds.db, BuildParams(k=50, L=1, alpha=ALPHA)).laplacian
        for L in Ls:
            early = map_of(OnlineDiffusion(ds.db, L, k=50, mode="early").search, ds.queries.vectors, ds.ground_truth)
            late = map_of(
                OnlineDiffusion(ds.db, L, k=50, mode="late", laplacian=lap).search, ds.queries.vectors, ds.ground_truth
            )
            ok &= late >= early
            if L == min(Ls):
                ok &= late > early
            lines.append(f"seed {seed} L={L}: early {early:.4f} late {late:.4f}")
    with capsys.disabled():
        print("\n  " + "\n  ".join(lines))
    assert record_criterion(3, ok, "mAP(late) >= mAP(early) for L in {50,100,250}, strict at L=50, seeds 0-2", capsys)


@pytest.fixture(scope="module")
def benchmark_index():
    t0 = time.perf_counter()
    ds = from_config(BENCHMARK)
    idx = build_index(ds.db, BuildParams(k=50, L=1000, alpha=ALPHA))
    return ds, idx, time.perf_counter() - t0


def test_criterion_4_diffusion_beats_knn(benchmark_index, capsys):
    ds, idx, build_seconds = benchmark_index
    t0 = time.perf_counter() - build_seconds
    qs, gts = ds.queries.vectors, ds.ground_truth
    sim = SimilarityConfig()
    engine = DiffusionEngine(idx, ds.db, h=10)
    m_knn = map_of(lambda q: knn_rank(ds.db, q, sim), qs, gts)
    m_aqe = map_of(lambda q: aqe(ds.db, q, 10, sim), qs, gts)
    m_prop = map_of(engine.search, qs, gts)
    elapsed = time.perf_counter() - t0
    ok = m_prop - m_knn > 0.05 and m_prop >= m_aqe and elapsed < 120
    detail = f"mAP kNN {m_knn:.4f}, AQE {m_aqe:.4f}, proposed {m_prop:.4f} (gain {m_prop - m_knn:+.4f} > 0.05), {elapsed:.0f} s (< 120 s)"
    assert record_criterion(4, ok, detail, capsys)


def test_float32_values_keep_rankings(benchmark_index):
    ds, idx, _ = benchmark_index
    e64 = DiffusionEngine(idx, ds.db, h=10)
    e32 = DiffusionEngine(idx.astype(np.float32), ds.db, h=10)
    for q in ds.queries.vectors:
        np.testing.assert_array_equal(e64.search(q).order, e32.search(q).order)


@pytest.mark.slow
def test_criterion_5_latency_decoupling(capsys):
    # 200 arcs x 500 points in R^64; k=10 keeps the early baseline's graph step cheap
    ds = synth_manifolds(200, 500, 64, curvature=2.0, noise_sigma=0.05, seed=0, queries_per_cluster=1, span_dim=16)
    params = BenchParams(k=10, L=1000, h=10)
    idx = build_index(ds.db, BuildParams(k=params.k, L=params.L, alpha=ALPHA)).astype(np.float32)
    queries = [ds.queries.vectors[i] for i in range(0, ds.queries.n, 4)]
    prop = bench_latency("proposed", ds.db, queries, params, n_repeats=10, idx=idx)
    early = bench_latency("online-early", ds.db, queries, params, n_repeats=10)
    overhead = prop.overhead_ratio
    speedup = early.latency_ms["mean"] / prop.latency_ms["mean"]
    ok = overhead <= 0.5 and speedup >= 5
    detail = (
        f"kNN {prop.knn_latency_ms['mean']:.2f} ms, proposed {prop.latency_ms['mean']:.2f} ms "
        f"(overhead {overhead:.2f} <= 0.50), online-early {early.latency_ms['mean']:.2f} ms (speedup {speedup:.1f}x >= 5)"
    )
    assert record_criterion(5, ok, detail, capsys)


def test_criterion_6_memory_layout(tmp_path, capsys):
    ds = synth_manifolds(10, 100, 16, seed=0)
    idx = build_index(ds.db, BuildParams(k=20, L=100, alpha=ALPHA))
    ok = idx.nnz == 1000 * 100 and idx.values.size == idx.ids.size == 1000 * 100
    sizes = []
    for dtype, width in ((np.float32, 4), (np.float64, 8)):
        path = tmp_path / f"idx_{width}.bin"
        save_index(idx, path, value_dtype=dtype)
        size = path.stat().st_size
        ok &= size == header_size(idx.meta) + 1000 * 100 * (4 + width) + 4 == expected_file_size(1000, 100, idx.meta, dtype)
        sizes.append(size)
    detail = f"entries {idx.nnz} = n*L, file bytes {sizes[0]} = header {header_size(idx.meta)} + n*L*8 + 4 (float32 values)"
    assert record_criterion(6, ok, detail, capsys)


def test_criterion_7_invariants(tmp_path, capsys):
    rng = np.random.default_rng(7)
    failures = []

    for g in range(10):
        db = random_graph(2000 + g)
        a = build_affinity(db, 10)
        s = normalize_symmetric(a)
        for name, m in (("A", a), ("S", s)):
            dense = m.toarray()
            if np.abs(dense - dense.T).max() >= 1e-12:
                failures.append(f"asymmetric {name} on graph {g}")
        if np.abs(np.linalg.eigvalsh(s.toarray())).max() > 1 + 1e-9:
            failures.append(f"spectral radius of S above 1 on graph {g}")
        try:
            np.linalg.cholesky(build_laplacian(s, ALPHA).toarray())
        except np.linalg.LinAlgError:
            failures.append(f"L_alpha not SPD on graph {g}")

    db = clustered_features(150, 8, 4, seed=3)
    idx = build_index(db, BuildParams(k=10, L=40, alpha=ALPHA))
    for _ in range(50):
        ids = rng.choice(db.n, 6, replace=False)
        w = rng.uniform(0.01, 1.0, 6)
        y1, y2 = InitialState(ids[:3], w[:3]), InitialState(ids[3:], w[3:])
        both = diffuse_query(idx, InitialState(ids, w)).scores
        parts = diffuse_query(idx, y1).scores + diffuse_query(idx, y2).scores
        if np.abs(both - parts).max() > 1e-12 * max(1.0, np.abs(both).max()):
            failures.append("linearity")
        lam = float(rng.uniform(0.01, 100))
        base = diffuse_query(idx, y1)
        scaled = diffuse_query(idx, y1.scaled(lam))
        if not np.allclose(scaled.scores, lam * base.scores, rtol=1e-12, atol=0):
            failures.append("scores do not scale with the initial state")
        if not np.array_equal(base.order, scaled.order):
            # reorderings are only acceptable among scores equal to rounding
            if not np.allclose(base.scores[base.order], base.scores[scaled.order], rtol=1e-12, atol=0):
                failures.append("scaling changed the ranking")

    for _ in range(1000):
        n = int(rng.integers(2, 60))
        order = rng.permutation(n)
        positives = set(rng.choice(n, int(rng.integers(1, n + 1)), replace=False).tolist())
        junk = set(rng.choice(n, int(rng.integers(0, n)), replace=False).tolist()) - positives
        gt = GroundTruth(positives, junk)
        ap = average_precision(order, gt)
        if not 0.0 <= ap <= 1.0:
            failures.append("AP out of [0, 1]")
        extra = np.arange(n, n + 5)
        noisy = np.insert(order, rng.integers(0, n + 1, 5), extra)
        if abs(average_precision(noisy, GroundTruth(positives, junk | set(extra.tolist()))) - ap) > 1e-12:
            failures.append("junk insertion changed AP")
        ranked = [i for i in order.tolist() if i not in junk]
        spots = [r for r in range(1, len(ranked)) if ranked[r] in positives and ranked[r - 1] not in positives]
        if spots:
            r = spots[int(rng.integers(len(spots)))]
            ranked[r - 1], ranked[r] = ranked[r], ranked[r - 1]
            if average_precision(ranked, gt) < ap - 1e-12:
                failures.append("moving a positive up lowered AP")

    for t in range(20):
        sub = build_index(clustered_features(40 + t, 5, 3, seed=t), BuildParams(k=5, L=10 + t % 7, alpha=ALPHA))
        for dtype in (np.float32, np.float64):
            path = tmp_path / f"rt_{t}.bin"
            src = sub.astype(dtype)
            save_index(src, path)
            back = load_index(path)
            if not (
                back.ids.tobytes() == src.ids.tobytes()
                and back.values.tobytes() == src.values.tobytes()
                and back.values.dtype == src.values.dtype
                and back.meta == src.meta
                and back.alpha == src.alpha
            ):
                failures.append("index round-trip not bit-exact")

    detail = "symmetry, spectral radius, Cholesky, linearity, scale/order, 1000 AP fuzz cases, round-trip"
    if failures:
        detail += "; failed: " + ", ".join(sorted(set(failures)))
    assert record_criterion(7, not failures, detail, capsys)


OXFORD = os.environ.get("DIFFRANK_OXFORD_DIR")


def test_criterion_8_published_descriptors(capsys):
    if not OXFORD:
        record_criterion(8, None, "optional; set DIFFRANK_OXFORD_DIR to published global descriptors to run", capsys)
        pytest.skip("DIFFRANK_OXFORD_DIR not set")
    root = Path(OXFORD)
    db = load_features(root / "db.fvecs")
    queries = load_features(root / "queries.fvecs")
    gt = load_ground_truth(root / "gt.json")
    qids = [str(i) for i in range(queries.n)]
    qs = [queries.vectors[i] for i, q in enumerate(qids) if q in gt]
    gts = [gt[q] for q in qids if q in gt]
    idx = build_index(db, BuildParams(k=50, L=min(5000, db.n), alpha=ALPHA))
    m_knn = 100 * map_of(lambda q: knn_rank(db, q), qs, gts)
    m_prop = 100 * map_of(DiffusionEngine(idx, db, h=10).search, qs, gts)
    ok = abs(m_knn - 79.5) <= 0.5 and m_prop - m_knn >= 5
    assert record_criterion(8, ok, f"kNN mAP {m_knn:.1f} (79.5 +- 0.5), proposed {m_prop:.1f} (gain >= 5)", capsys)
