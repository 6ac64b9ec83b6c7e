"""Average precision with Oxford/Paris-style junk handling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np


@dataclass(frozen=True)
class GroundTruth:
    positives: frozenset
    junk: frozenset = field(default_factory=frozenset)
    query_image: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(int(i) for i in self.positives))
        object.__setattr__(self, "junk", frozenset(int(i) for i in self.junk))
        overlap = self.positives & self.junk
        if overlap:
            raise ValueError(f"images {sorted(overlap)[:5]} are both positive and junk")


def average_precision(order: Iterable[int], gt: GroundTruth) -> float:
    """Mean of precision at each positive's rank, junk removed from the list.

    The query's own image, when given, is treated like junk. Positives that
    never appear contribute zero precision.
    """
    if not gt.positives:
        raise ValueError("average precision is undefined for a query without positives")
    order = np.asarray(list(order) if not isinstance(order, np.ndarray) else order, dtype=np.int64)
    skip = set(gt.junk)
    if gt.query_image is not None:
        skip.add(int(gt.query_image))
    if skip:
        order = order[~np.isin(order, np.fromiter(skip, dtype=np.int64))]
    hits = np.isin(order, np.fromiter(gt.positives, dtype=np.int64))
    ranks = np.flatnonzero(hits) + 1
    if ranks.size == 0:
        return 0.0
    precision_at_hit = np.arange(1, ranks.size + 1) / ranks
    return float(precision_at_hit.sum() / len(gt.positives))


def mean_ap(aps: Iterable[float]) -> float:
    aps = list(aps)
    if not aps:
        raise ValueError("mean AP over zero queries")
    return float(np.mean(aps))


def load_ground_truth(path: Union[str, Path]) -> dict[str, GroundTruth]:
    """``{query_id: {"positives": [...], "junk": [...], "query_image": id?}}``."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    return {
        str(qid): GroundTruth(entry["positives"], entry.get("junk", ()), entry.get("query_image"))
        for qid, entry in raw.items()
    }


def save_ground_truth(gts: dict, path: Union[str, Path]) -> None:
    out = {}
    for qid, gt in gts.items():
        entry = {"positives": sorted(gt.positives), "junk": sorted(gt.junk)}
        if gt.query_image is not None:
            entry["query_image"] = int(gt.query_image)
        out[str(qid)] = entry
    with open(path, "w", encoding="utf-8") as f:
        json.dump(out, f, indent=1)
