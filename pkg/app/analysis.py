"""
Method comparison: wires each evaluation method to a recommender and runs
several of them over the same test split into one long-format frame
(method, metric, K, value).

Also answers ad-hoc recommendation requests for a single session.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import pandas as pd

from app.baselines import (
    ItemKnnRecommender,
    PopRecommender,
    ProportionRecommender,
    SPopRecommender,
)
from app.config import DEFAULT_KS, METHODS
from app.errors import ConfigError, DataError, UsageError
from app.ingest import Dataset, sessions_from_pairs
from app.metrics import Recommender, evaluate, topk
from app.model import TailNetRecommender, infer
from app.train import Checkpoint

logger = logging.getLogger(__name__)

MODEL_METHODS = frozenset({"tailnet", "tailnet-proportion"})


def parse_methods(value: str | Sequence[str]) -> list[str]:
    """'pop,spop' -> ['pop', 'spop']; order kept, duplicates dropped."""
    parts = value.split(",") if isinstance(value, str) else list(value)
    methods: list[str] = []
    for part in (p.strip().lower() for p in parts):
        if not part or part in methods:
            continue
        if part not in METHODS:
            raise ConfigError(f"Unknown method {part!r}; choose from {', '.join(METHODS)}")
        methods.append(part)
    if not methods:
        raise ConfigError("No evaluation method given")
    return methods


def _check_checkpoint(dataset: Dataset, checkpoint: Checkpoint | None, method: str) -> Checkpoint:
    if checkpoint is None:
        raise UsageError(f"Method {method!r} needs a trained model (--model)")
    if checkpoint.catalog.id_of != dataset.catalog.id_of:
        raise DataError("Model was trained on a different item catalog than this dataset")
    return checkpoint


def build_recommender(
    method: str, dataset: Dataset, checkpoint: Checkpoint | None = None
) -> Recommender:
    catalog = dataset.catalog
    if method == "tailnet":
        cp = _check_checkpoint(dataset, checkpoint, method)
        return TailNetRecommender(cp.params, catalog, use_pm=cp.config.use_pm)
    if method == "tailnet-proportion":
        cp = _check_checkpoint(dataset, checkpoint, method)
        return ProportionRecommender(cp.params, catalog)
    if method == "pop":
        return PopRecommender(catalog)
    if method == "spop":
        return SPopRecommender(catalog)
    if method == "itemknn":
        return ItemKnnRecommender(sessions_from_pairs(dataset.train), catalog)
    raise ConfigError(f"Unknown method {method!r}; choose from {', '.join(METHODS)}")


def compare(
    methods: Sequence[str],
    dataset: Dataset,
    checkpoint: Checkpoint | None = None,
    ks: Sequence[int] = DEFAULT_KS,
    threads: int | None = 1,
) -> pd.DataFrame:
    """Evaluate every method on the test split; one row per (method, metric, K)."""
    frames = []
    for method in methods:
        recommender = build_recommender(method, dataset, checkpoint)
        report = evaluate(recommender, dataset.test, dataset.catalog, ks=ks, threads=threads)
        frame = report.to_frame()
        frame.insert(0, "method", method)
        frames.append(frame)
        logger.info("Evaluated %s on %d test cases", method, report.count)
    return pd.concat(frames, ignore_index=True)


# ---------------------------------------------------------------------------
# Single-session recommendation
# ---------------------------------------------------------------------------

@dataclass
class RecommendedItem:
    item_id: str
    score: float
    tag: str


@dataclass
class SessionRecommendation:
    items: list[RecommendedItem]
    r_head: float | None
    r_tail: float | None

    def lines(self) -> list[str]:
        out = [f"{it.item_id},{it.score:.6g},{it.tag}" for it in self.items]
        if self.r_head is None:
            out.append("factors: none (model trained without preference mechanism)")
        else:
            out.append(f"factors: r_head={self.r_head:.6f} r_tail={self.r_tail:.6f}")
        return out


def recommend_session(
    checkpoint: Checkpoint, item_ids: Sequence[str], k: int
) -> SessionRecommendation:
    """Top-k items for a session given as raw item ids, with ŷ and head/tail tags."""
    if not item_ids:
        raise UsageError("Session is empty")
    catalog = checkpoint.catalog
    session = catalog.indices(item_ids)
    trace = infer(session, checkpoint.params, catalog, use_pm=checkpoint.config.use_pm)
    items = [
        RecommendedItem(catalog.id_of[i], float(trace.y_hat[i]), catalog.tag(i))
        for i in topk(trace.y_hat, k)
    ]
    return SessionRecommendation(items=items, r_head=trace.r_head, r_tail=trace.r_tail)
