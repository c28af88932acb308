"""
Preprocess raw click events into a train / valid / test Dataset.

Steps (deterministic, pure):
    1. group events by session, order each session by timestamp (stable)
    2. drop rare items and short sessions, repeated until nothing changes
    3. keep only the last `max_session_len` clicks of each session
    4. sessions ending in the last test window -> test; the window before that
       -> valid; everything earlier -> train
    5. expand every session [i1..in] into (prefix, next item) pairs
    6. drop valid/test pairs that touch items never seen in train
    7. build the ItemCatalog (dense ids + head/tail split) from train clicks
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
import pandas as pd

from app import codec
from app.config import (
    DATASET_MAGIC,
    DATASET_VERSION,
    HEAD_FRACTION,
    MAX_SESSION_LEN,
    MIN_ITEM_SUPPORT,
    MIN_SESSION_LEN,
    SECONDS_PER_DAY,
)
from app.errors import ConfigError, DataError, FormatError, UsageError
from app.parser import RawEvent, events_to_frame

logger = logging.getLogger(__name__)

Session = tuple[int, ...]


class Pair(NamedTuple):
    prefix: Session
    target: int


def head_size(num_items: int, head_fraction: float) -> int:
    """⌈head_fraction · |I|⌉, robust to float noise such as 0.2 · 15."""
    return min(num_items, max(1, math.ceil(head_fraction * num_items - 1e-9)))


def pareto_split(
    click_count: Sequence[int] | np.ndarray | Mapping[str, int],
    head_fraction: float = HEAD_FRACTION,
) -> np.ndarray | dict[str, bool]:
    """
    Mark the long-tail items.

    The head is the top ⌈head_fraction·|I|⌉ items by click count; ties go to
    the smaller index. Array input is assumed to be indexed in ascending
    item-id order, so that rule equals "ascending item id". Mapping input
    (item_id -> count) is sorted by id first and returns item_id -> is_tail.
    """
    if not 0.0 < head_fraction < 1.0:
        raise ConfigError(f"head_fraction must lie in (0, 1), got {head_fraction!r}")

    if isinstance(click_count, Mapping):
        ids = sorted(click_count)
        flags = pareto_split(np.array([click_count[i] for i in ids], dtype=np.int64), head_fraction)
        return {item: bool(flag) for item, flag in zip(ids, flags)}

    counts = np.asarray(click_count, dtype=np.int64)
    n = len(counts)
    if n < 2:
        raise DataError(f"Need at least 2 items for a head/tail split, got {n}")

    order = np.lexsort((np.arange(n), -counts))
    is_tail = np.ones(n, dtype=bool)
    is_tail[order[: head_size(n, head_fraction)]] = False
    return is_tail


@dataclass(frozen=True, eq=False)
class ItemCatalog:
    id_of: tuple[str, ...]
    click_count: np.ndarray
    is_tail: np.ndarray
    head_fraction: float
    index_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.id_of)
        if n < 2:
            raise DataError(f"Catalog needs at least 2 items, got {n}")
        if len(self.click_count) != n or len(self.is_tail) != n:
            raise DataError("Catalog columns have different lengths")
        index_of = {item: i for i, item in enumerate(self.id_of)}
        if len(index_of) != n:
            raise DataError("Duplicate item ids in catalog")
        if int((~self.is_tail).sum()) != head_size(n, self.head_fraction):
            raise DataError("Head/tail flags do not match head_fraction")
        object.__setattr__(self, "index_of", index_of)

    @classmethod
    def from_counts(
        cls, counts: Mapping[str, int], head_fraction: float = HEAD_FRACTION
    ) -> ItemCatalog:
        ids = tuple(sorted(counts))
        click_count = np.array([counts[i] for i in ids], dtype=np.int64)
        return cls(
            id_of=ids,
            click_count=click_count,
            is_tail=pareto_split(click_count, head_fraction),
            head_fraction=head_fraction,
        )

    @property
    def num_items(self) -> int:
        return len(self.id_of)

    @property
    def num_tail(self) -> int:
        return int(self.is_tail.sum())

    @property
    def num_head(self) -> int:
        return self.num_items - self.num_tail

    @property
    def tail_mask(self) -> np.ndarray:
        return self.is_tail.astype(np.float64)

    @property
    def head_mask(self) -> np.ndarray:
        return (~self.is_tail).astype(np.float64)

    def indices(self, item_ids: Iterable[str]) -> Session:
        """Map item ids to dense indices; unknown ids raise UsageError."""
        out = []
        for item in item_ids:
            if item not in self.index_of:
                raise UsageError(f"Unknown item id {item!r}")
            out.append(self.index_of[item])
        return tuple(out)

    def tag(self, index: int) -> str:
        return "TAIL" if self.is_tail[index] else "HEAD"


@dataclass(eq=False)
class Dataset:
    catalog: ItemCatalog
    train: list[Pair]
    valid: list[Pair]
    test: list[Pair]


@dataclass
class DatasetSummary:
    items: int
    head_items: int
    tail_items: int
    train_sessions: int
    valid_sessions: int
    test_sessions: int
    train_pairs: int
    valid_pairs: int
    test_pairs: int

    def lines(self) -> list[str]:
        return [
            f"items: {self.items}",
            f"head items: {self.head_items}",
            f"tail items: {self.tail_items}",
            f"sessions: train={self.train_sessions} valid={self.valid_sessions} "
            f"test={self.test_sessions}",
            f"pairs: train={self.train_pairs} valid={self.valid_pairs} test={self.test_pairs}",
        ]


def augment(session: Sequence[int]) -> list[Pair]:
    """[i1..in] -> ([i1], i2), ([i1, i2], i3), ..., n-1 pairs."""
    items = tuple(session)
    return [Pair(items[:k], items[k]) for k in range(1, len(items))]


def sessions_from_pairs(pairs: Sequence[Pair]) -> list[Session]:
    """
    Rebuild full sessions from prefix-augmented pairs.

    Pairs of one session are stored consecutively starting with a length-1
    prefix, and filtering only ever removes a suffix of them, so each run ends
    in the longest surviving prefix.
    """
    sessions: list[Session] = []
    for pos, pair in enumerate(pairs):
        is_last = pos + 1 == len(pairs) or len(pairs[pos + 1].prefix) == 1
        if is_last:
            sessions.append(tuple(pair.prefix) + (pair.target,))
    return sessions


def summarize(dataset: Dataset) -> DatasetSummary:
    cat = dataset.catalog
    return DatasetSummary(
        items=cat.num_items,
        head_items=cat.num_head,
        tail_items=cat.num_tail,
        train_sessions=len(sessions_from_pairs(dataset.train)),
        valid_sessions=len(sessions_from_pairs(dataset.valid)),
        test_sessions=len(sessions_from_pairs(dataset.test)),
        train_pairs=len(dataset.train),
        valid_pairs=len(dataset.valid),
        test_pairs=len(dataset.test),
    )


def _filter_support(df: pd.DataFrame, min_item_support: int, min_session_len: int) -> pd.DataFrame:
    """Drop rare items and short sessions until a fixed point is reached."""
    rounds = 0
    while True:
        rounds += 1
        before = len(df)

        support = df["item_id"].map(df["item_id"].value_counts())
        df = df[support >= min_item_support]
        if df.empty:
            raise DataError(f"min_item_support={min_item_support} removed every event")

        lengths = df.groupby("session_id")["item_id"].transform("size")
        df = df[lengths >= min_session_len]
        if df.empty:
            raise DataError(f"min_session_len={min_session_len} removed every session")

        if len(df) == before:
            logger.info("Support filter stable after %d round(s): %d events", rounds, len(df))
            return df


def _encode_pairs(sessions: Iterable[list[str]], catalog: ItemCatalog) -> tuple[list[Pair], int]:
    """Index and augment held-out sessions, dropping pairs with unseen items."""
    pairs: list[Pair] = []
    dropped = 0
    for items in sessions:
        known = [catalog.index_of.get(i) for i in items]
        for k in range(1, len(known)):
            window = known[: k + 1]
            if any(i is None for i in window):
                dropped += 1
                continue
            pairs.append(Pair(tuple(window[:k]), window[k]))
    return pairs, dropped


def preprocess(
    events: Iterable[RawEvent] | pd.DataFrame,
    min_item_support: int = MIN_ITEM_SUPPORT,
    min_session_len: int = MIN_SESSION_LEN,
    max_session_len: int = MAX_SESSION_LEN,
    head_fraction: float = HEAD_FRACTION,
    test_window_seconds: int = SECONDS_PER_DAY,
) -> Dataset:
    """Turn raw click events into a Dataset (see module docstring for the steps)."""
    if not 0.0 < head_fraction < 1.0:
        raise ConfigError(f"head_fraction must lie in (0, 1), got {head_fraction!r}")
    if max_session_len < min_session_len or min_session_len < 2:
        raise ConfigError(
            f"Need 2 <= min_session_len <= max_session_len, got "
            f"{min_session_len} and {max_session_len}"
        )
    if test_window_seconds <= 0:
        raise ConfigError(f"test_window_seconds must be positive, got {test_window_seconds}")

    df = events_to_frame(events)
    if df.empty:
        raise DataError("no events to preprocess")

    df["_order"] = np.arange(len(df))
    df = df.sort_values(["session_id", "timestamp", "_order"], kind="stable")

    df = _filter_support(df, min_item_support, min_session_len)

    keep = df.groupby("session_id").cumcount(ascending=False) < max_session_len
    df = df[keep]

    # Time split on each session's final click
    spans = df.groupby("session_id")["timestamp"].agg(["min", "max"])
    log_end = int(spans["max"].max())
    test_cut = log_end - test_window_seconds
    valid_cut = test_cut - test_window_seconds
    split = np.where(
        spans["max"] > test_cut, "test", np.where(spans["max"] > valid_cut, "valid", "train")
    )
    spans = spans.assign(split=split).reset_index()
    spans = spans.sort_values(["min", "session_id"], kind="stable")

    items_by_session = df.groupby("session_id")["item_id"].agg(list)
    grouped: dict[str, list[list[str]]] = {"train": [], "valid": [], "test": []}
    for sid, part in zip(spans["session_id"], spans["split"]):
        grouped[part].append(items_by_session[sid])

    if not grouped["train"]:
        raise DataError("time split left no training sessions; use a shorter test window")

    counts: dict[str, int] = {}
    for items in grouped["train"]:
        for item in items:
            counts[item] = counts.get(item, 0) + 1
    catalog = ItemCatalog.from_counts(counts, head_fraction)

    train = [pair for items in grouped["train"] for pair in augment(catalog.indices(items))]
    valid, dropped_valid = _encode_pairs(grouped["valid"], catalog)
    test, dropped_test = _encode_pairs(grouped["test"], catalog)

    logger.info(
        "Split sessions train=%d valid=%d test=%d; "
        "dropped %d valid / %d test pairs with unseen items",
        len(grouped["train"]), len(grouped["valid"]), len(grouped["test"]),
        dropped_valid, dropped_test,
    )
    if not test:
        raise DataError("unseen-item filter left an empty test split")
    if not valid:
        logger.warning("Validation split is empty; model selection will be disabled")

    return Dataset(catalog=catalog, train=train, valid=valid, test=test)


# ---------------------------------------------------------------------------
# TLDS dataset file
# ---------------------------------------------------------------------------

def _pack_pairs(pairs: Sequence[Pair]) -> list[bytes]:
    lengths = np.array([len(p.prefix) for p in pairs], dtype=np.int64)
    flat = np.array([i for p in pairs for i in p.prefix], dtype=np.int64)
    targets = np.array([p.target for p in pairs], dtype=np.int64)
    return [codec.pack_array(lengths), codec.pack_array(flat), codec.pack_array(targets)]


def _unpack_pairs(reader: codec.ContainerReader, num_items: int) -> list[Pair]:
    lengths = codec.unpack_array(reader.section())
    flat = codec.unpack_array(reader.section())
    targets = codec.unpack_array(reader.section())
    if len(lengths) != len(targets) or int(lengths.sum()) != len(flat):
        raise FormatError("Dataset file: inconsistent pair tables")
    if (lengths < 1).any():
        raise FormatError("Dataset file: empty prefix")
    if len(flat) and (flat.min() < 0 or flat.max() >= num_items):
        raise FormatError("Dataset file: prefix item out of range")
    if len(targets) and (targets.min() < 0 or targets.max() >= num_items):
        raise FormatError("Dataset file: target out of range")
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    flat_list = flat.tolist()
    return [
        Pair(tuple(flat_list[bounds[k]:bounds[k + 1]]), int(t))
        for k, t in enumerate(targets.tolist())
    ]


def catalog_sections(catalog: ItemCatalog) -> list[bytes]:
    return [
        codec.pack_json({"head_fraction": catalog.head_fraction}),
        codec.pack_strings(list(catalog.id_of)),
        codec.pack_array(catalog.click_count),
        codec.pack_array(catalog.is_tail),
    ]


def read_catalog(reader: codec.ContainerReader) -> ItemCatalog:
    meta = codec.unpack_json(reader.section())
    ids = codec.unpack_strings(reader.section())
    counts = codec.unpack_array(reader.section())
    is_tail = codec.unpack_array(reader.section())
    try:
        return ItemCatalog(
            id_of=tuple(ids),
            click_count=counts,
            is_tail=is_tail,
            head_fraction=float(meta["head_fraction"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"Corrupt catalog section: {exc}") from exc


def save_dataset(dataset: Dataset, path: str | Path, settings: Mapping | None = None) -> Path:
    writer = codec.ContainerWriter(DATASET_MAGIC, DATASET_VERSION)
    writer.section(codec.pack_json(dict(settings or {})))
    for payload in catalog_sections(dataset.catalog):
        writer.section(payload)
    for split in (dataset.train, dataset.valid, dataset.test):
        for payload in _pack_pairs(split):
            writer.section(payload)
    return writer.save(path)


def load_dataset_with_settings(path: str | Path) -> tuple[Dataset, dict]:
    reader = codec.ContainerReader.open(path, DATASET_MAGIC, DATASET_VERSION, "Dataset file")
    settings = codec.unpack_json(reader.section())
    catalog = read_catalog(reader)
    splits = [_unpack_pairs(reader, catalog.num_items) for _ in range(3)]
    reader.finish()
    return Dataset(catalog, *splits), settings


def load_dataset(path: str | Path) -> Dataset:
    return load_dataset_with_settings(path)[0]
