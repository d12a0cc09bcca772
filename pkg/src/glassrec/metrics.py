"""Recall@K and NDCG@K over ranked candidate lists with binary relevance."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ContractError

REPORT_HEADER = ("task", "architecture", "scorer", "language", "seed", "fold")


@dataclass(frozen=True)
class RankedResult:
    """Candidates of one query in rank order, with the query's relevant set."""

    query: object
    entities: tuple
    scores: tuple
    relevant: frozenset

    def __post_init__(self):
        if len(set(self.entities)) != len(self.entities):
            raise ContractError("ranked candidates contain duplicates")


def _check(ranked, k):
    if k < 1:
        raise ContractError(f"K must be >= 1, got {k}")
    if not ranked.relevant:
        raise ContractError(f"query {ranked.query!r} has no relevant items")


def recall_at_k(ranked, k=10):
    """``|R & top_K| / min(|R|, K)``."""
    _check(ranked, k)
    hits = sum(1 for e in ranked.entities[:k] if e in ranked.relevant)
    return hits / min(len(ranked.relevant), k)


def ndcg_at_k(ranked, k=10):
    _check(ranked, k)
    dcg = sum(1.0 / math.log2(pos + 2)
              for pos, e in enumerate(ranked.entities[:k]) if e in ranked.relevant)
    idcg = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(ranked.relevant))))
    return dcg / idcg


def write_report(rows, path, k=10):
    """Metric rows as CSV; each row is a mapping with the header keys."""
    header = list(REPORT_HEADER) + [f"recall@{k}", f"ndcg@{k}"]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[h] for h in REPORT_HEADER]
                       + [repr(float(row["recall"])), repr(float(row["ndcg"]))])
