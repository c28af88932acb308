from collections import Counter

import numpy as np
import pytest

from app.errors import ConfigError
from app.parser import parse_events, write_events_csv
from app.synthetic import gen_synthetic, session_lengths, zipf_probabilities


def test_same_seed_same_events():
    a = gen_synthetic(100, 50, 1.2, 5, seed=7)
    b = gen_synthetic(100, 50, 1.2, 5, seed=7)
    assert write_events_csv(a) == write_events_csv(b)
    assert a != gen_synthetic(100, 50, 1.2, 5, seed=8)


def test_most_popular_share_is_zipf_like():
    probs = zipf_probabilities(500, 1.2)
    draws = np.random.default_rng(1).choice(500, size=10_000, p=probs)
    share = np.bincount(draws).max() / 10_000
    assert 0.03 <= share <= 0.30


def test_generated_popularity_is_skewed():
    events = gen_synthetic(2000, 500, 1.2, 5, seed=3)
    counts = Counter(e.item_id for e in events)
    share = counts.most_common(1)[0][1] / len(events)
    assert 0.03 <= share <= 0.30


def test_mean_session_length():
    lengths = session_lengths(np.random.default_rng(2), 10_000, 5.0)
    assert lengths.min() >= 2
    assert abs(lengths.mean() - 5.0) <= 0.5


def test_sessions_are_time_ordered_and_long_enough():
    events = gen_synthetic(300, 40, 1.0, 4, seed=9)
    by_session: dict[str, list[int]] = {}
    for e in events:
        by_session.setdefault(e.session_id, []).append(e.timestamp)
    assert len(by_session) == 300
    for stamps in by_session.values():
        assert len(stamps) >= 2
        assert all(b > a for a, b in zip(stamps, stamps[1:]))


def test_output_parses_back():
    events = gen_synthetic(50, 20, 1.2, 4, seed=1)
    assert parse_events(write_events_csv(events)) == events


@pytest.mark.parametrize(
    "kwargs",
    [
        {"num_sessions": 0},
        {"num_items": 9},
        {"zipf_exponent": 0.0},
        {"mean_len": 1.5},
    ],
)
def test_invalid_arguments(kwargs):
    args = {"num_sessions": 10, "num_items": 20, "zipf_exponent": 1.2, "mean_len": 4, "seed": 0}
    with pytest.raises(ConfigError):
        gen_synthetic(**{**args, **kwargs})
