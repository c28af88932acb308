"""
Top-K ranking and the five evaluation metrics.

All metrics are percentages (0–100):
    Recall@K         share of test cases whose target is in the top-K list
    MRR@K            mean reciprocal rank of the target (0 beyond K)
    Coverage@K       distinct items ever recommended / |I|
    Tail_Coverage@K  distinct tail items ever recommended / |I^T|
    Tail@K           mean share of tail items per top-K list (divided by K)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

import numpy as np
import pandas as pd

from app.config import DEFAULT_KS
from app.errors import DataError
from app.tasks import map_ordered

if TYPE_CHECKING:
    from app.ingest import ItemCatalog, Pair

logger = logging.getLogger(__name__)

METRIC_NAMES = ("recall", "mrr", "coverage", "tail_coverage", "tail")


def _pct(numerator: float, denominator: float) -> float:
    """Safe percentage (0–100)."""
    return numerator / denominator * 100 if denominator else 0.0


def topk(
    scores: Sequence[float] | np.ndarray, k: int, exclusions: Iterable[int] | None = None
) -> list[int]:
    """Indices of the k largest scores, ties to the smaller index, exclusions skipped."""
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if exclusions:
        banned = np.zeros(len(scores), dtype=bool)
        banned[list(exclusions)] = True
        order = order[~banned[order]]
    return order[:k].tolist()


def recall_at_k(lists: Sequence[Sequence[int]], targets: Sequence[int], k: int) -> float:
    hits = sum(1 for lst, t in zip(lists, targets) if t in lst[:k])
    return _pct(hits, len(targets))


def mrr_at_k(lists: Sequence[Sequence[int]], targets: Sequence[int], k: int) -> float:
    total = 0.0
    for lst, t in zip(lists, targets):
        top = list(lst[:k])
        if t in top:
            total += 1.0 / (top.index(t) + 1)
    return _pct(total, len(targets))


def coverage_at_k(
    lists: Sequence[Sequence[int]], catalog: ItemCatalog, k: int
) -> tuple[float, float]:
    """(Coverage@K, Tail_Coverage@K)."""
    seen: set[int] = set()
    for lst in lists:
        seen.update(lst[:k])
    tail_seen = {i for i in seen if catalog.is_tail[i]}
    if catalog.num_tail == 0:
        logger.warning("Catalog has no tail items; Tail_Coverage@%d reported as 0", k)
        return _pct(len(seen), catalog.num_items), 0.0
    return _pct(len(seen), catalog.num_items), _pct(len(tail_seen), catalog.num_tail)


def tail_at_k(lists: Sequence[Sequence[int]], catalog: ItemCatalog, k: int) -> float:
    if not lists:
        return 0.0
    tail_slots = sum(1 for lst in lists for i in lst[:k] if catalog.is_tail[i])
    return _pct(tail_slots, k * len(lists))


class Recommender:
    """
    Evaluation contract: map a session prefix to a score vector, optionally
    exclude some items, and produce the top-K lists for several K at once.
    """

    name = "recommender"

    def score(self, prefix: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def exclusions(self, prefix: Sequence[int]) -> set[int] | None:
        return None

    def recommend(self, prefix: Sequence[int], ks: Sequence[int]) -> dict[int, list[int]]:
        top = topk(self.score(prefix), max(ks), self.exclusions(prefix))
        return {k: top[:k] for k in ks}


class FunctionRecommender(Recommender):
    def __init__(self, fn: Callable[[Sequence[int]], np.ndarray], name: str = "function") -> None:
        self._fn = fn
        self.name = name

    def score(self, prefix: Sequence[int]) -> np.ndarray:
        return np.asarray(self._fn(prefix), dtype=np.float64)


@dataclass
class MetricsReport:
    ks: tuple[int, ...]
    count: int
    values: dict[tuple[str, int], float] = field(default_factory=dict)

    def get(self, metric: str, k: int) -> float:
        return self.values[(metric, k)]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"metric": metric, "K": k, "value": self.values[(metric, k)]}
            for k in self.ks
            for metric in METRIC_NAMES
        ]
        return pd.DataFrame(rows, columns=["metric", "K", "value"])


def evaluate(
    recommender: Recommender | Callable[[Sequence[int]], np.ndarray],
    pairs: Sequence[Pair],
    catalog: ItemCatalog,
    ks: Sequence[int] = DEFAULT_KS,
    threads: int | None = 1,
) -> MetricsReport:
    """Run top-K for every test pair and aggregate the five metrics per K."""
    if not pairs:
        raise DataError("Cannot evaluate on an empty test set")
    if not isinstance(recommender, Recommender):
        recommender = FunctionRecommender(recommender)
    ks = tuple(sorted(set(ks)))

    results = map_ordered(lambda pair: recommender.recommend(pair.prefix, ks), pairs, threads)
    targets = [pair.target for pair in pairs]

    report = MetricsReport(ks=ks, count=len(pairs))
    for k in ks:
        lists = [r[k] for r in results]
        coverage, tail_coverage = coverage_at_k(lists, catalog, k)
        report.values[("recall", k)] = recall_at_k(lists, targets, k)
        report.values[("mrr", k)] = mrr_at_k(lists, targets, k)
        report.values[("coverage", k)] = coverage
        report.values[("tail_coverage", k)] = tail_coverage
        report.values[("tail", k)] = tail_at_k(lists, catalog, k)
    return report
