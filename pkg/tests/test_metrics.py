import numpy as np
import pytest

from app.errors import DataError
from app.ingest import ItemCatalog, Pair
from app.metrics import (
    METRIC_NAMES,
    FunctionRecommender,
    coverage_at_k,
    evaluate,
    mrr_at_k,
    recall_at_k,
    tail_at_k,
    topk,
)


def _ranked(target: int, rank: int, n: int = 30) -> list[int]:
    """A full ranking of n items with `target` at 1-based position `rank`."""
    others = [i for i in range(n) if i != target]
    return others[: rank - 1] + [target] + others[rank - 1:]


def _brute_force(lists, targets, catalog, k):
    hits = rr = 0.0
    tail_slots = 0
    seen, tail_seen = set(), set()
    for lst, t in zip(lists, targets):
        top = lst[:k]
        for pos, item in enumerate(top, start=1):
            if item == t:
                hits += 1
                rr += 1 / pos
            seen.add(item)
            if catalog.is_tail[item]:
                tail_seen.add(item)
                tail_slots += 1
    n = len(targets)
    return {
        "recall": hits / n * 100,
        "mrr": rr / n * 100,
        "coverage": len(seen) / catalog.num_items * 100,
        "tail_coverage": len(tail_seen) / catalog.num_tail * 100,
        "tail": tail_slots / (k * n) * 100,
    }


# ---------------------------------------------------------------------------
# topk
# ---------------------------------------------------------------------------

def test_topk_examples():
    assert topk([0.1, 0.9, 0.5], 2) == [1, 2]
    assert topk([1.0, 1.0, 1.0, 1.0], 3) == [0, 1, 2]


def test_topk_full_sort():
    scores = np.random.default_rng(0).normal(size=40)
    order = topk(scores, 40)
    assert sorted(order) == list(range(40))
    assert all(scores[a] >= scores[b] for a, b in zip(order, order[1:]))


def test_topk_skips_exclusions():
    assert topk([0.1, 0.9, 0.5, 0.7], 2, exclusions={1}) == [3, 2]
    assert topk([0.1, 0.9], 5) == [1, 0]


def test_topk_rejects_non_positive_k():
    with pytest.raises(ValueError):
        topk([1.0], 0)


# ---------------------------------------------------------------------------
# Individual metrics
# ---------------------------------------------------------------------------

def test_recall_and_mrr_closed_form():
    lists = [_ranked(0, 1), _ranked(1, 4), _ranked(2, 21)]
    targets = [0, 1, 2]
    assert recall_at_k(lists, targets, 20) == pytest.approx(66.67, abs=0.005)
    assert mrr_at_k(lists, targets, 20) == pytest.approx(41.67, abs=0.005)


def test_perfect_ranking():
    lists = [_ranked(t, 1) for t in range(5)]
    assert recall_at_k(lists, range(5), 20) == 100
    assert mrr_at_k(lists, range(5), 20) == 100


def test_coverage_examples(catalog):
    assert coverage_at_k([[1, 2], [3, 4]], catalog, 2)[0] == 40.0
    assert coverage_at_k([[7, 9]], catalog, 2)[1] == 25.0


def test_coverage_ignores_repeats(catalog):
    once = coverage_at_k([[0, 3, 8]], catalog, 3)
    assert coverage_at_k([[0, 3, 8]] * 6, catalog, 3) == once


def test_catalog_without_tail():
    cat = ItemCatalog.from_counts({"a": 2, "b": 1}, 0.6)
    assert coverage_at_k([[0, 1]], cat, 2) == (100.0, 0.0)
    assert tail_at_k([[0, 1]], cat, 2) == 0.0


def test_tail_share_example(big_catalog):
    # x000..x019 are head, the rest tail
    first = list(range(15)) + [20, 21, 22, 23, 24]
    second = list(range(17)) + [50, 51, 52]
    assert tail_at_k([first, second], big_catalog, 20) == pytest.approx(20.0)
    assert tail_at_k([list(range(20))], big_catalog, 20) == 0.0
    assert tail_at_k([list(range(30, 50))], big_catalog, 20) == 100.0


def test_tail_share_does_not_drift_over_many_lists(big_catalog):
    lists = [[0, 1, 40]] * 1000
    assert tail_at_k(lists, big_catalog, 3) == 1 / 3 * 100


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _pairs(rng, n_pairs, n_items):
    return [
        Pair(tuple(rng.integers(0, n_items, size=rng.integers(1, 5)).tolist()),
             int(rng.integers(0, n_items)))
        for _ in range(n_pairs)
    ]


def test_one_hot_scorer_is_perfect(big_catalog):
    pairs = _pairs(np.random.default_rng(1), 30, 100)
    targets = {p.prefix: p.target for p in pairs}

    def oracle(prefix):
        scores = np.zeros(100)
        scores[targets[tuple(prefix)]] = 1.0
        return scores

    unique = list({p.prefix: p for p in pairs}.values())
    report = evaluate(oracle, unique, big_catalog, ks=(5, 20))
    for k in (5, 20):
        assert report.get("recall", k) == report.get("mrr", k) == 100


def test_constant_scorer_coverage(big_catalog):
    pairs = _pairs(np.random.default_rng(2), 10, 100)
    report = evaluate(lambda prefix: np.ones(100), pairs, big_catalog, ks=(5, 10, 20))
    for k in (5, 10, 20):
        assert report.get("coverage", k) == pytest.approx(100 * k / 100)


def test_random_scorer_matches_brute_force(big_catalog):
    rng = np.random.default_rng(3)
    for _ in range(10):
        pairs = _pairs(rng, 100, 100)
        table = rng.normal(size=(100, 100))
        scorer = FunctionRecommender(lambda prefix: table[prefix[-1]])
        report = evaluate(scorer, pairs, big_catalog, ks=(5, 10, 20))
        lists = [topk(table[p.prefix[-1]], 20) for p in pairs]
        targets = [p.target for p in pairs]
        for k in (5, 10, 20):
            expected = _brute_force(lists, targets, big_catalog, k)
            for metric in METRIC_NAMES:
                assert report.get(metric, k) == pytest.approx(expected[metric], abs=1e-9)


def test_metrics_are_bounded_and_grow_with_k(big_catalog):
    rng = np.random.default_rng(4)
    pairs = _pairs(rng, 50, 100)
    table = rng.normal(size=(100, 100))
    report = evaluate(lambda prefix: table[prefix[0]], pairs, big_catalog, ks=(5, 10, 20))
    for metric in METRIC_NAMES:
        assert all(0 <= report.get(metric, k) <= 100 for k in (5, 10, 20))
    for metric in ("recall", "mrr", "coverage", "tail_coverage"):
        assert report.get(metric, 5) <= report.get(metric, 10) <= report.get(metric, 20)


def test_pair_order_does_not_matter(big_catalog):
    rng = np.random.default_rng(5)
    pairs = _pairs(rng, 40, 100)
    table = rng.normal(size=(100, 100))
    scorer = FunctionRecommender(lambda prefix: table[prefix[-1]])
    a = evaluate(scorer, pairs, big_catalog)
    b = evaluate(scorer, list(reversed(pairs)), big_catalog)
    assert a.values == pytest.approx(b.values, abs=1e-9)


def test_threads_do_not_change_the_report(big_catalog):
    rng = np.random.default_rng(6)
    pairs = _pairs(rng, 40, 100)
    table = rng.normal(size=(100, 100))
    scorer = FunctionRecommender(lambda prefix: table[prefix[-1]])
    assert evaluate(scorer, pairs, big_catalog).values == evaluate(
        scorer, pairs, big_catalog, threads=4
    ).values


def test_report_frame_layout(big_catalog):
    pairs = _pairs(np.random.default_rng(7), 5, 100)
    frame = evaluate(lambda p: np.ones(100), pairs, big_catalog, ks=(20, 5)).to_frame()
    assert list(frame.columns) == ["metric", "K", "value"]
    assert len(frame) == 10
    assert frame["K"].tolist()[:5] == [5] * 5


def test_empty_test_set(big_catalog):
    with pytest.raises(DataError):
        evaluate(lambda p: np.ones(100), [], big_catalog)


def test_list_metrics_match_brute_force_on_random_instances():
    rng = np.random.default_rng(8)
    for _ in range(200):
        n = int(rng.integers(3, 60))
        cat = ItemCatalog.from_counts(
            {f"m{j:03d}": int(c) for j, c in enumerate(rng.integers(1, 200, size=n))},
            float(rng.uniform(0.1, 0.5)),
        )
        k = int(rng.integers(1, n + 1))
        cases = int(rng.integers(1, 20))
        lists = [rng.permutation(n)[:k].tolist() for _ in range(cases)]
        targets = rng.integers(0, n, size=cases).tolist()
        expected = _brute_force(lists, targets, cat, k)
        coverage, tail_coverage = coverage_at_k(lists, cat, k)
        assert abs(recall_at_k(lists, targets, k) - expected["recall"]) <= 1e-12
        assert abs(mrr_at_k(lists, targets, k) - expected["mrr"]) <= 1e-12
        assert abs(coverage - expected["coverage"]) <= 1e-12
        assert abs(tail_coverage - expected["tail_coverage"]) <= 1e-12
        assert abs(tail_at_k(lists, cat, k) - expected["tail"]) <= 1e-12
