"""Text-to-image retrieval ranking and the CMC / mAP / mINP metrics.

AP and INP are accumulated as exact fractions and rounded once at the end, so
results do not depend on summation order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


@dataclass
class RankedGallery:
    order: np.ndarray    # (Q, G) gallery indices, best first
    matches: np.ndarray  # (Q, G) bool, relevance of order[q, r]

    @property
    def num_queries(self) -> int:
        return self.order.shape[0]

    @property
    def num_gallery(self) -> int:
        return self.order.shape[1]


@dataclass
class MetricsReport:
    rank1: float
    rank5: float
    rank10: float
    mAP: float
    mINP: float
    num_queries: int
    num_gallery: int
    meta: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {k: v for k, v in asdict(self).items() if k != "meta"}
        row.update({k: v for k, v in self.meta.items() if isinstance(v, (str, int, float))})
        return row

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True))

    def append_csv(self, path) -> None:
        path = Path(path)
        row = self.as_row()
        new = not path.exists()
        with path.open("a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row))
            if new:
                writer.writeheader()
            writer.writerow(row)


def rank_gallery(sim, query_ids, gallery_ids) -> RankedGallery:
    """Sort each row by descending similarity; exact ties keep ascending gallery index."""
    sim = np.asarray(sim, dtype=np.float64)
    q = np.asarray(query_ids)
    g = np.asarray(gallery_ids)
    if sim.shape != (len(q), len(g)):
        raise ValueError(f"similarity shape {sim.shape} does not match {len(q)} queries x {len(g)} gallery")
    relevant = q[:, None] == g[None, :]
    if not relevant.any(axis=1).all():
        bad = int(np.flatnonzero(~relevant.any(axis=1))[0])
        raise ValueError(f"query {bad} (id {q[bad]}) has no relevant gallery item")
    order = np.argsort(-sim, axis=1, kind="stable")
    return RankedGallery(order=order, matches=np.take_along_axis(relevant, order, axis=1))


def cmc_at_k(ranked: RankedGallery, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = int(ranked.matches[:, :k].any(axis=1).sum())
    return 100.0 * hits / ranked.num_queries


def _average_precision(row: np.ndarray) -> Fraction:
    pos = np.flatnonzero(row) + 1
    return sum((Fraction(h, int(r)) for h, r in enumerate(pos, start=1)), Fraction(0)) / len(pos)


def _percent_mean(values: list) -> float:
    # exact rational mean, rounded once, so results do not depend on summation order
    return float(100 * sum(values, Fraction(0)) / len(values))


def mean_ap(ranked: RankedGallery) -> float:
    return _percent_mean([_average_precision(row) for row in ranked.matches])


def m_inp(ranked: RankedGallery) -> float:
    inps = []
    for row in ranked.matches:
        pos = np.flatnonzero(row)
        inps.append(Fraction(len(pos), int(pos[-1]) + 1))
    return _percent_mean(inps)


def compute_report(sim, query_ids, gallery_ids, meta=None) -> MetricsReport:
    ranked = rank_gallery(sim, query_ids, gallery_ids)
    return MetricsReport(
        rank1=cmc_at_k(ranked, 1),
        rank5=cmc_at_k(ranked, 5),
        rank10=cmc_at_k(ranked, 10),
        mAP=mean_ap(ranked),
        mINP=m_inp(ranked),
        num_queries=ranked.num_queries,
        num_gallery=ranked.num_gallery,
        meta=dict(meta or {}),
    )


def dump_rankings(ranked: RankedGallery, path, gallery_ids=None) -> None:
    """One CSV row per query: query index, then the ranked gallery indices."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "ranked_gallery", "relevant_flags"])
        for qi in range(ranked.num_queries):
            writer.writerow([qi, " ".join(map(str, ranked.order[qi])),
                             "".join("1" if m else "0" for m in ranked.matches[qi])])
