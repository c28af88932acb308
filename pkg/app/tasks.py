"""
Per-session work fan-out.

Results always come back in input order, so any reduction done by the caller
is independent of the worker count. Scoring runs on a thread pool; gradient
work goes to joblib worker processes, since the tape code holds the GIL.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, TypeVar

from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(threads: int | None) -> int:
    """0 / None means every core."""
    return threads or (os.cpu_count() or 1)


def map_ordered(fn: Callable[[T], R], items: Iterable[T], threads: int | None = 1) -> list[R]:
    workers = resolve_workers(threads)
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def map_processes(
    fn: Callable[..., R], items: Iterable[T], workers: int | None = 1, *args: Any
) -> list[R]:
    """fn(item, *args) for every item, on worker processes; `fn` must be importable."""
    n_jobs = resolve_workers(workers)
    items = list(items)
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(item, *args) for item in items]
    return Parallel(n_jobs=n_jobs, max_nbytes=None)(delayed(fn)(item, *args) for item in items)
