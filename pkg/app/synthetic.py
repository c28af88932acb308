"""
Desk-scale synthetic clickstream.

Sessions start at uniformly spread times over a fixed span; each session has a
shifted-geometric length (>= 2) and draws its items from a bounded Zipf law,
occasionally re-clicking an item it has already seen. A single seeded numpy
Generator drives everything, so the same arguments give the same events.
"""

from __future__ import annotations

import logging

import numpy as np

from app.config import SECONDS_PER_DAY, SYNTH_REPEAT_PROB, SYNTH_SPAN_DAYS
from app.errors import ConfigError
from app.parser import RawEvent

logger = logging.getLogger(__name__)

_EPOCH_START = 1_600_000_000
_MAX_GAP_SECONDS = 120


def zipf_probabilities(num_items: int, exponent: float) -> np.ndarray:
    """p(rank k) ∝ k^-exponent for k = 1..num_items."""
    weights = np.arange(1, num_items + 1, dtype=np.float64) ** -exponent
    return weights / weights.sum()


def session_lengths(rng: np.random.Generator, size: int, mean_len: float) -> np.ndarray:
    """Shifted geometric lengths: 1 + Geometric(p) with mean 1 + 1/p = mean_len, minimum 2."""
    p = 1.0 / (mean_len - 1.0)
    return 1 + rng.geometric(p, size=size)


def gen_synthetic(
    num_sessions: int,
    num_items: int,
    zipf_exponent: float,
    mean_len: float,
    seed: int,
    span_days: float = SYNTH_SPAN_DAYS,
    repeat_prob: float = SYNTH_REPEAT_PROB,
) -> list[RawEvent]:
    if num_sessions < 1:
        raise ConfigError(f"num_sessions must be >= 1, got {num_sessions}")
    if num_items < 10:
        raise ConfigError(f"num_items must be >= 10, got {num_items}")
    if zipf_exponent <= 0:
        raise ConfigError(f"zipf_exponent must be > 0, got {zipf_exponent}")
    if mean_len < 2:
        raise ConfigError(f"mean_len must be >= 2, got {mean_len}")

    rng = np.random.default_rng(seed)
    probs = zipf_probabilities(num_items, zipf_exponent)
    # rank -> item id, shuffled so popularity is unrelated to id order
    item_ids = [f"item{i:05d}" for i in rng.permutation(num_items)]

    span = int(span_days * SECONDS_PER_DAY)
    starts = np.sort(rng.integers(0, span, size=num_sessions)) + _EPOCH_START
    lengths = session_lengths(rng, num_sessions, mean_len)

    events: list[RawEvent] = []
    for s, (start, length) in enumerate(zip(starts.tolist(), lengths.tolist())):
        ranks = rng.choice(num_items, size=length, p=probs)
        repeat = rng.random(length) < repeat_prob
        gaps = rng.integers(1, _MAX_GAP_SECONDS + 1, size=length)
        gaps[0] = 0
        stamps = start + np.cumsum(gaps)
        for k in range(1, length):
            if repeat[k]:
                ranks[k] = ranks[rng.integers(0, k)]
        sid = f"s{s:07d}"
        events.extend(
            RawEvent(session_id=sid, timestamp=int(t), item_id=item_ids[r])
            for t, r in zip(stamps.tolist(), ranks.tolist())
        )

    logger.info("Generated %d events over %d sessions", len(events), num_sessions)
    return events
