import math

import numpy as np
import pytest

from app.baselines import (
    ItemKnnRecommender,
    PopRecommender,
    ProportionRecommender,
    SPopRecommender,
    head_slots,
    proportion_rerank,
)
from app.ingest import ItemCatalog, Pair
from app.metrics import evaluate, topk
from app.model import ModelParams, infer


def _catalog(counts: list[int], head_fraction: float = 0.2) -> ItemCatalog:
    """Item k is named c{k:03d}, so dense index k has count counts[k]."""
    return ItemCatalog.from_counts({f"c{k:03d}": c for k, c in enumerate(counts)}, head_fraction)


# ---------------------------------------------------------------------------
# POP / S-POP
# ---------------------------------------------------------------------------

def test_pop_ranks_by_global_count():
    pop = PopRecommender(_catalog([10, 5, 1]))
    assert pop.recommend([2], (2,))[2] == [0, 1]


def test_pop_ignores_the_session():
    pop = PopRecommender(_catalog([10, 5, 1, 7]))
    assert pop.score([0, 1]).tolist() == pop.score([3]).tolist()


def test_pop_has_no_tail_when_head_fills_the_list(big_catalog):
    pairs = [Pair((30,), 40), Pair((50, 60), 70)]
    report = evaluate(PopRecommender(big_catalog), pairs, big_catalog, ks=(20,))
    assert report.get("tail", 20) == 0.0
    assert report.get("tail_coverage", 20) == 0.0


def test_spop_puts_session_items_first():
    spop = SPopRecommender(_catalog([10, 50, 30, 20]))
    top = spop.recommend([0, 2, 0], (4,))[4]
    assert top[:2] == [0, 2]
    assert top[2:] == [1, 3]


def test_spop_without_repeats_orders_by_count_among_session_items():
    cat = _catalog([10, 50, 30, 20])
    spop = SPopRecommender(cat)
    assert spop.recommend([0, 3], (4,))[4] == [3, 0, 1, 2]


def test_spop_matches_two_key_sort():
    rng = np.random.default_rng(0)
    for _ in range(30):
        counts = rng.integers(1, 100, size=25).tolist()
        cat = _catalog(counts)
        prefix = rng.integers(0, 25, size=rng.integers(1, 8)).tolist()
        in_session = np.bincount(prefix, minlength=25)
        expected = sorted(range(25), key=lambda i: (-in_session[i], -counts[i], i))
        assert SPopRecommender(cat).recommend(prefix, (25,))[25] == expected


# ---------------------------------------------------------------------------
# Item-KNN
# ---------------------------------------------------------------------------

def test_itemknn_similarity_examples(catalog):
    knn = ItemKnnRecommender([(0, 1), (2, 3)], catalog)
    assert knn.similarity(0, 1) == pytest.approx(1.0)
    assert knn.similarity(0, 2) == 0.0


def test_itemknn_matches_pairwise_cosine(catalog):
    sessions = [(0, 1, 2), (1, 2), (2, 3, 4, 2), (0, 4), (5, 1, 0)]
    knn = ItemKnnRecommender(sessions, catalog)
    sets = [set(s) for s in sessions]
    for i in range(10):
        for j in range(10):
            co = sum(1 for s in sets if i in s and j in s)
            support = sum(1 for s in sets if i in s) * sum(1 for s in sets if j in s)
            expected = co / math.sqrt(support) if support else 0.0
            assert knn.similarity(i, j) == pytest.approx(expected)
    scores = knn.score([3, 2])
    assert scores == pytest.approx([knn.similarity(2, j) for j in range(10)])


def test_itemknn_excludes_session_items(catalog):
    knn = ItemKnnRecommender([(0, 1, 2), (1, 2)], catalog)
    top = knn.recommend([1, 2], (3,))[3]
    assert 1 not in top and 2 not in top
    assert top[0] == 0


def test_itemknn_cold_item_scores_zero(catalog):
    knn = ItemKnnRecommender([(0, 1)], catalog)
    assert not knn.score([9]).any()


# ---------------------------------------------------------------------------
# Proportion rerank
# ---------------------------------------------------------------------------

def test_head_slots_rounding(big_catalog):
    seven_head = list(range(7)) + [50, 51, 52]
    assert head_slots(20, seven_head, big_catalog) == 14
    assert head_slots(5, [0, 50], big_catalog) == 3
    assert head_slots(5, [50], big_catalog) == 0


def test_quota_split(big_catalog):
    c_hat = np.random.default_rng(1).normal(size=100)
    seven_head = list(range(7)) + [50, 51, 52]
    top = proportion_rerank(c_hat, seven_head, big_catalog, 20)
    assert len(top) == 20
    assert sum(1 for i in top if big_catalog.is_tail[i]) == 6


def test_pure_head_and_pure_tail_sessions(big_catalog):
    c_hat = np.random.default_rng(2).normal(size=100)
    all_head = proportion_rerank(c_hat, [0, 1, 2], big_catalog, 20)
    all_tail = proportion_rerank(c_hat, [40, 41], big_catalog, 20)
    assert sorted(all_head) == list(range(20))
    assert all(big_catalog.is_tail[i] for i in all_tail)


def test_short_class_hands_slots_over(catalog):
    # only 2 head items exist, p = 1 asks for 5
    c_hat = np.arange(10, dtype=float)
    top = proportion_rerank(c_hat, [0, 1], catalog, 5)
    assert sorted(top) == [0, 1, 7, 8, 9]
    assert top == [9, 8, 7, 1, 0]


def test_classes_keep_their_score_order(big_catalog):
    c_hat = np.random.default_rng(3).normal(size=100)
    top = proportion_rerank(c_hat, [0, 60], big_catalog, 10)
    assert [c_hat[i] for i in top] == sorted((c_hat[i] for i in top), reverse=True)
    head = [i for i in topk(c_hat, 100) if not big_catalog.is_tail[i]][:5]
    assert {i for i in top if not big_catalog.is_tail[i]} == set(head)


def test_random_quotas():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(5, 40))
        cat = _catalog(rng.integers(1, 500, size=n).tolist(), float(rng.uniform(0.1, 0.6)))
        c_hat = rng.normal(size=n)
        prefix = rng.integers(0, n, size=rng.integers(1, 10)).tolist()
        k = int(rng.integers(1, n + 5))
        top = proportion_rerank(c_hat, prefix, cat, k)

        assert len(top) == len(set(top)) == min(k, n)
        n_head = sum(1 for i in top if not cat.is_tail[i])
        want = min(head_slots(k, prefix, cat), min(k, n))
        if n_head != want:
            # the short class is exhausted and the other class filled the rest
            assert n_head == cat.num_head or min(k, n) - n_head == cat.num_tail


def test_proportion_recommender_uses_raw_scores(params, catalog):
    rec = ProportionRecommender(params, catalog)
    prefix = [0, 5, 6, 7]
    c_hat = infer(prefix, params, catalog, use_pm=False).c_hat
    lists = rec.recommend(prefix, (5, 10))
    assert lists[5] == proportion_rerank(c_hat, prefix, catalog, 5)
    assert lists[10] == proportion_rerank(c_hat, prefix, catalog, 10)


def test_proportion_recommender_evaluates(synth_dataset):
    rng = np.random.default_rng(5)
    params = ModelParams.initialize(4, synth_dataset.catalog.num_items, rng)
    report = evaluate(ProportionRecommender(params, synth_dataset.catalog),
                      synth_dataset.test, synth_dataset.catalog)
    assert 0 <= report.get("tail", 20) <= 100
