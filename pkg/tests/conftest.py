from __future__ import annotations

import numpy as np
import pytest

from app.ingest import Dataset, ItemCatalog, Pair, preprocess
from app.model import ModelParams, param_shapes
from app.parser import RawEvent
from app.synthetic import gen_synthetic


@pytest.fixture
def catalog() -> ItemCatalog:
    """10 items i0..i9; i0 and i1 are the head (top 20%)."""
    counts = [50, 40, 9, 8, 7, 6, 5, 4, 3, 2]
    return ItemCatalog.from_counts({f"i{k}": c for k, c in enumerate(counts)}, 0.2)


@pytest.fixture
def big_catalog() -> ItemCatalog:
    """100 items, strictly decreasing counts: 20 head, 80 tail."""
    return ItemCatalog.from_counts({f"x{k:03d}": 1000 - k for k in range(100)}, 0.2)


@pytest.fixture
def params(catalog) -> ModelParams:
    return ModelParams.initialize(4, catalog.num_items, np.random.default_rng(0))


@pytest.fixture
def zero_params():
    def _make(d: int, num_items: int) -> ModelParams:
        shapes = param_shapes(d, num_items)
        return ModelParams(d, num_items, {name: np.zeros(shape) for name, shape in shapes.items()})

    return _make


@pytest.fixture
def make_events():
    """{session_id: [items]} -> RawEvents, sessions starting at the given offsets, 10 s apart."""

    def _make(
        sessions: dict[str, list[str]], starts: dict[str, int] | None = None
    ) -> list[RawEvent]:
        events = []
        for n, (sid, items) in enumerate(sessions.items()):
            start = (starts or {}).get(sid, 1_000 * n)
            events.extend(
                RawEvent(session_id=sid, timestamp=start + 10 * k, item_id=item)
                for k, item in enumerate(items)
            )
        return events

    return _make


@pytest.fixture
def toy_dataset(catalog) -> Dataset:
    return Dataset(
        catalog=catalog,
        train=[Pair((0,), 1), Pair((0, 1), 2), Pair((3,), 4)],
        valid=[Pair((1,), 0)],
        test=[Pair((1,), 0), Pair((2, 5), 6)],
    )


@pytest.fixture(scope="session")
def synth_dataset() -> Dataset:
    events = gen_synthetic(150, 20, 1.0, 4.0, seed=11)
    return preprocess(events, min_item_support=2)
