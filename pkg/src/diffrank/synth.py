"""Seeded synthetic retrieval benchmark made of curved 1-D manifolds.

Each cluster is an arc of a great circle on the unit sphere, sampled with
Gaussian noise. Long arcs make the far end of a cluster less similar to a
query at one end than pieces of unrelated clusters, which is exactly where
neighborhood-graph diffusion helps over plain inner-product ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import GroundTruth
from .features import FeatureSet

GENERATOR_VERSION = 1


@dataclass(frozen=True)
class SynthConfig:
    n_clusters: int = 10
    points_per_cluster: int = 500
    d: int = 16
    curvature: float = 2.0       # extra arc angle (radians) beyond the base segment
    noise_sigma: float = 0.02    # per-coordinate, before renormalization
    seed: int = 0
    queries_per_cluster: int = 2
    base_angle: float = 0.5      # arc angle at curvature 0
    span_dim: int = 0            # arcs live in a shared subspace of this size (0: all of d)


@dataclass(eq=False)
class SynthDataset:
    db: FeatureSet
    queries: FeatureSet
    ground_truth: list[GroundTruth]
    labels: np.ndarray  # cluster of each database point
    config: SynthConfig


def synth_manifolds(
    n_clusters: int = 10,
    points_per_cluster: int = 500,
    d: int = 16,
    curvature: float = 2.0,
    noise_sigma: float = 0.02,
    seed: int = 0,
    queries_per_cluster: int = 2,
    base_angle: float = 0.5,
    span_dim: int = 0,
) -> SynthDataset:
    """Generate database, queries and ground truth; deterministic in ``seed``.

    Queries sit at arc endpoints, alternating between the two ends. A
    query's positives are all images of its cluster.
    """
    cfg = SynthConfig(n_clusters, points_per_cluster, d, curvature, noise_sigma, seed, queries_per_cluster, base_angle, span_dim)
    if d < 3:
        raise ValueError(f"need d >= 3, got {d}")
    if n_clusters < 1 or points_per_cluster < 1 or queries_per_cluster < 0:
        raise ValueError("cluster and point counts must be positive")
    if curvature < 0 or noise_sigma < 0 or base_angle <= 0:
        raise ValueError("curvature and noise must be non-negative, base angle positive")
    span = span_dim or d
    if not 2 <= span <= d:
        raise ValueError(f"span_dim must be in [2, d], got {span_dim}")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, span)))
    sweep = base_angle + curvature
    db_rows, q_rows, labels, gts = [], [], [], []
    for c in range(n_clusters):
        frame, _ = np.linalg.qr(basis @ rng.standard_normal((span, 2)))
        a, b = frame[:, 0], frame[:, 1]
        t = rng.uniform(0.0, 1.0, points_per_cluster)
        db_rows.append(_arc(a, b, sweep, t, noise_sigma, rng))
        labels.append(np.full(points_per_cluster, c))
        ends = np.arange(queries_per_cluster) % 2
        q_rows.append(_arc(a, b, sweep, ends.astype(np.float64), noise_sigma, rng))
        members = range(c * points_per_cluster, (c + 1) * points_per_cluster)
        gts.extend(GroundTruth(members) for _ in range(queries_per_cluster))
    # float32, like descriptor files on disk
    db = FeatureSet.from_array(np.vstack(db_rows).astype(np.float32))
    queries = FeatureSet.from_array(np.vstack(q_rows).astype(np.float32)) if q_rows else FeatureSet(np.zeros((0, d), np.float32))
    return SynthDataset(db, queries, gts, np.concatenate(labels), cfg)


def _arc(a, b, sweep, t, sigma, rng) -> np.ndarray:
    phi = sweep * (t - 0.5)
    x = np.cos(phi)[:, None] * a + np.sin(phi)[:, None] * b
    if sigma > 0:
        x = x + sigma * rng.standard_normal(x.shape)
    return x


# the seeded n = 5,000 benchmark used for method comparisons and truncation sweeps
BENCHMARK = SynthConfig(n_clusters=50, points_per_cluster=100, d=16, curvature=2.0, noise_sigma=0.05, seed=0, span_dim=8)


def from_config(cfg: SynthConfig) -> SynthDataset:
    return synth_manifolds(
        cfg.n_clusters, cfg.points_per_cluster, cfg.d, cfg.curvature, cfg.noise_sigma, cfg.seed,
        cfg.queries_per_cluster, cfg.base_angle, cfg.span_dim,
    )
