"""Command line entry point: ``diffrank {synth,build,search,baseline,eval,sweep}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import OnlineDiffusion, aqe, knn_rank
from .bench import METHODS, BenchParams, bench_latency, sweep_truncation, write_csv
from .cg import CgConfig
from .evaluation import load_ground_truth, save_ground_truth
from .features import load_features, write_fvecs
from .graph import laplacian_from_features
from .index_io import load_index, save_index
from .knn import SimilarityConfig
from .offline import BuildParams, build_index
from .online import DiffusionEngine, top_k
from .synth import synth_manifolds

log = logging.getLogger("diffrank")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _strs(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _queries(args) -> tuple[list[str], list[np.ndarray]]:
    """Query ids and per-query feature blocks (grouped by --query-map)."""
    qs = load_features(args.queries, image_map=args.query_map)
    if qs.image_of is None:
        return [str(i) for i in range(qs.n)], [qs.vectors[i : i + 1] for i in range(qs.n)]
    ids, blocks = [], []
    for qid in range(qs.n_images):
        ids.append(str(qid))
        blocks.append(qs.vectors[qs.image_of == qid])
    return ids, blocks


def _write_tsv(path, results) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("query_id\trank\timage_id\tscore\n")
        for qid, ids, scores in results:
            for rank, (i, s) in enumerate(zip(ids, scores), start=1):
                f.write(f"{qid}\t{rank}\t{int(i)}\t{s:.6f}\n")


def cmd_synth(args) -> None:
    ds = synth_manifolds(
        args.n_clusters, args.points_per_cluster, args.d, args.curvature, args.noise_sigma, args.seed,
        args.queries_per_cluster, span_dim=args.span_dim,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_fvecs(out / "db.fvecs", ds.db.vectors)
    write_fvecs(out / "queries.fvecs", ds.queries.vectors)
    save_ground_truth({str(i): gt for i, gt in enumerate(ds.ground_truth)}, out / "gt.json")
    log.info("wrote %d database and %d query vectors to %s", ds.db.n, ds.queries.n, out)


def cmd_build(args) -> None:
    db = load_features(args.features, image_map=args.image_map)
    params = BuildParams(args.k, args.L, args.alpha, SimilarityConfig(args.gamma), CgConfig(args.cg_iters, args.cg_tol))
    idx = build_index(db, params, n_jobs=args.jobs, progress=lambda done: log.debug("%d/%d columns", done, db.n))
    size = save_index(idx, args.out, value_dtype=np.dtype(args.dtype))
    log.info(
        "index n=%d L=%d: %d entries, %d bytes, mean CG iterations %.1f",
        idx.n, idx.L, idx.nnz, size, idx.meta["cg_mean_iters"],
    )


def cmd_search(args) -> None:
    idx = load_index(args.index)
    db = load_features(args.features, image_map=args.image_map)
    engine = DiffusionEngine(idx, db, h=args.h, aggregate=args.aggregate)
    qids, blocks = _queries(args)
    _write_tsv(args.out, [(qid, *engine.search_top(q, args.topk)) for qid, q in zip(qids, blocks)])


def _baseline_scores(args, db):
    sim = SimilarityConfig(args.gamma)
    if args.method == "knn":
        return lambda q: knn_rank(db, q, sim).scores
    if args.method == "aqe":
        return lambda q: aqe(db, q, args.k_exp, sim).scores
    mode = args.method.split("-")[1]
    lap = laplacian_from_features(db, args.k, args.alpha, sim) if mode == "late" else None
    od = OnlineDiffusion(db, args.L, args.k, args.alpha, CgConfig(args.cg_iters, args.cg_tol), mode, args.h, sim, lap)
    return od.scores


def cmd_baseline(args) -> None:
    db = load_features(args.features, image_map=args.image_map)
    score = _baseline_scores(args, db)
    qids, blocks = _queries(args)
    results = []
    for qid, q in zip(qids, blocks):
        s = score(q)
        ids = top_k(s, args.topk)
        results.append((qid, ids, s[ids]))
    _write_tsv(args.out, results)


def _bench_params(args) -> BenchParams:
    return BenchParams(args.k, args.L, args.h, args.alpha, args.gamma, args.k_exp, args.topk, args.cg_iters, args.cg_tol)


def cmd_eval(args) -> None:
    db = load_features(args.features, image_map=args.image_map)
    qids, blocks = _queries(args)
    gt = load_ground_truth(args.gt)
    keep = [i for i, qid in enumerate(qids) if qid in gt]
    if not keep:
        raise SystemExit("no query id in the ground truth file matches the query set")
    params = _bench_params(args)
    idx = load_index(args.index) if args.method == "proposed" else None
    lap = None
    if args.method == "online-late":
        lap = laplacian_from_features(db, args.k, args.alpha, SimilarityConfig(args.gamma))
    report = bench_latency(
        args.method, db, [blocks[i] for i in keep], params, args.repeats, [gt[qids[i]] for i in keep], idx, lap
    )
    report.to_json(args.out)
    log.info("%s: mAP %.4f, mean latency %.3f ms (kNN %.3f ms)", args.method, report.mAP,
             report.latency_ms["mean"], report.knn_latency_ms["mean"])


def cmd_sweep(args) -> None:
    db = load_features(args.features)
    qids, blocks = _queries(args)
    gt = load_ground_truth(args.gt)
    keep = [i for i, qid in enumerate(qids) if qid in gt]
    params = _bench_params(args)
    sim = SimilarityConfig(args.gamma)
    lap = laplacian_from_features(db, args.k, args.alpha, sim) if "late" in args.modes else None

    def index_for(L):
        return build_index(db, BuildParams(args.k, L, args.alpha, sim, CgConfig(args.offline_cg_iters, args.cg_tol)))

    rows = sweep_truncation(
        db, [blocks[i] for i in keep], [gt[qids[i]] for i in keep], args.L, args.modes, params, lap,
        args.repeats, index_for,
    )
    write_csv(rows, args.out)
    for row in rows:
        log.info("L=%d %-8s mAP %.4f  %.3f ms", row["L"], row["mode"], row["mAP"], row["latency_ms"])


def _graph_flags(p, L_default=5000) -> None:
    p.add_argument("--k", type=int, default=50, help="graph neighbors (reciprocal kNN)")
    if L_default:
        p.add_argument("--L", type=int, default=L_default, help="truncation size")
    p.add_argument("--alpha", type=float, default=0.99)
    p.add_argument("--gamma", type=float, default=3.0, help="similarity exponent")


def _query_flags(p) -> None:
    p.add_argument("--features", required=True, help="database features (.fvecs or .fbin)")
    p.add_argument("--image-map", help="feature -> image id sidecar (regional features)")
    p.add_argument("--queries", required=True)
    p.add_argument("--query-map", help="query feature -> query id sidecar")
    p.add_argument("--h", type=int, default=10, help="query neighbors in the initial state")
    p.add_argument("--topk", type=int, default=100)


def _online_flags(p, L_default=1000) -> None:
    _graph_flags(p, L_default)
    p.add_argument("--k-exp", type=int, default=10, help="AQE expansion depth")
    p.add_argument("--cg-iters", type=int, default=20)
    p.add_argument("--cg-tol", type=float, default=1e-6)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffrank", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic manifold benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-clusters", type=int, default=50)
    p.add_argument("--points-per-cluster", type=int, default=100)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--curvature", type=float, default=2.0)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--span-dim", type=int, default=8)
    p.add_argument("--queries-per-cluster", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="precompute the sparsified inverse index")
    p.add_argument("--features", required=True)
    p.add_argument("--image-map")
    _graph_flags(p)
    p.add_argument("--cg-iters", type=int, default=200)
    p.add_argument("--cg-tol", type=float, default=1e-6)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32", help="stored value precision")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("search", help="rank database images for each query")
    p.add_argument("--index", required=True)
    _query_flags(p)
    p.add_argument("--aggregate", choices=["sum", "max"], default="sum")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("baseline", help="rank with a reference method")
    p.add_argument("--method", choices=["knn", "aqe", "online-early", "online-late"], required=True)
    _query_flags(p)
    _online_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="mAP and latency report (JSON)")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--index", help="index file (proposed method)")
    _query_flags(p)
    _online_flags(p)
    p.add_argument("--gt", required=True, help="ground truth JSON")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="mAP/latency vs truncation size (CSV)")
    _query_flags(p)
    _online_flags(p, L_default=None)
    p.add_argument("--L", type=_ints, default=[200, 500, 1000, 2000, 5000], help="comma-separated sizes")
    p.add_argument("--modes", type=_strs, default=["early", "late"], help="early,late,proposed")
    p.add_argument("--offline-cg-iters", type=int, default=200)
    p.add_argument("--gt", required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    if args.command == "eval" and args.method == "proposed" and not args.index:
        raise SystemExit("eval --method proposed needs --index")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
