"""
Non-neural baselines and the hard-adjustment TailNet variant.

    POP                 global click count from train, same list for every session
    S-POP               items clicked in the session first (by in-session count),
                        then global popularity
    Item-KNN            cosine similarity of session co-occurrence with the last
                        clicked item; items already in the session are excluded
    TailNet-proportion  TailNet scores without the preference mechanism, re-ranked
                        into ⌊K·p⌉ head slots and K − ⌊K·p⌉ tail slots, where p
                        is the share of head items in the session
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import sparse

from app.ingest import ItemCatalog, Session
from app.metrics import Recommender, topk
from app.model import ModelParams, infer


class PopRecommender(Recommender):
    name = "pop"

    def __init__(self, catalog: ItemCatalog) -> None:
        self.scores = catalog.click_count.astype(np.float64)

    def score(self, prefix: Sequence[int]) -> np.ndarray:
        return self.scores.copy()


class SPopRecommender(Recommender):
    name = "spop"

    def __init__(self, catalog: ItemCatalog) -> None:
        self.global_counts = catalog.click_count.astype(np.float64)
        # Any in-session click outweighs the whole global range
        self.session_weight = 1.0 + float(self.global_counts.max())

    def score(self, prefix: Sequence[int]) -> np.ndarray:
        items = np.asarray(prefix, dtype=np.int64)
        in_session = np.bincount(items, minlength=len(self.global_counts))
        return in_session * self.session_weight + self.global_counts


class ItemKnnRecommender(Recommender):
    name = "itemknn"

    def __init__(self, sessions: Sequence[Session], catalog: ItemCatalog) -> None:
        n = catalog.num_items
        rows, cols = [], []
        for s_idx, session in enumerate(sessions):
            for item in sorted(set(session)):
                rows.append(s_idx)
                cols.append(item)
        incidence = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(sessions), n)
        )
        self.co_occurrence = (incidence.T @ incidence).tocsr()
        self.support = np.asarray(incidence.sum(axis=0)).ravel()

    def similarity(self, i: int, j: int) -> float:
        denom = math.sqrt(self.support[i] * self.support[j])
        return float(self.co_occurrence[i, j]) / denom if denom else 0.0

    def score(self, prefix: Sequence[int]) -> np.ndarray:
        last = int(prefix[-1])
        scores = np.zeros(len(self.support))
        if self.support[last] == 0:
            return scores
        co = self.co_occurrence.getrow(last).toarray().ravel()
        denom = np.sqrt(self.support[last] * self.support)
        np.divide(co, denom, out=scores, where=denom > 0)
        return scores

    def exclusions(self, prefix: Sequence[int]) -> set[int]:
        return set(int(i) for i in prefix)


def head_slots(k: int, prefix: Sequence[int], catalog: ItemCatalog) -> int:
    """⌊K·p⌉ with round-half-up, p = share of head items in the prefix (exact arithmetic)."""
    p = Fraction(sum(1 for i in prefix if not catalog.is_tail[i]), len(prefix))
    return math.floor(k * p + Fraction(1, 2))


def proportion_rerank(
    c_hat: Sequence[float] | np.ndarray, prefix: Sequence[int], catalog: ItemCatalog, k: int
) -> list[int]:
    """
    Hard head/tail quota on top of raw scores.

    A class that runs out of candidates hands its remaining slots to the other
    class. The result is ordered by score (ties to the smaller index).
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    c_hat = np.asarray(c_hat, dtype=np.float64)
    n = min(k, catalog.num_items)
    ranked = topk(c_hat, catalog.num_items)
    head_order = [i for i in ranked if not catalog.is_tail[i]]
    tail_order = [i for i in ranked if catalog.is_tail[i]]

    n_head = min(head_slots(k, prefix, catalog), n, len(head_order))
    n_tail = min(n - n_head, len(tail_order))
    n_head = min(n - n_tail, len(head_order))

    chosen = head_order[:n_head] + tail_order[:n_tail]
    return sorted(chosen, key=lambda i: (-c_hat[i], i))


class ProportionRecommender(Recommender):
    name = "tailnet-proportion"

    def __init__(self, params: ModelParams, catalog: ItemCatalog) -> None:
        self.params = params
        self.catalog = catalog

    def score(self, prefix: Sequence[int]) -> np.ndarray:
        return infer(prefix, self.params, self.catalog, use_pm=False).c_hat

    def recommend(self, prefix: Sequence[int], ks: Sequence[int]) -> dict[int, list[int]]:
        c_hat = self.score(prefix)
        return {k: proportion_rerank(c_hat, prefix, self.catalog, k) for k in ks}
