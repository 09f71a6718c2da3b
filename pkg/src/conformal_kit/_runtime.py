"""Seeded RNG streams and the parallelism cap."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

import numpy as np

THREADS_ENV = "CONFORMAL_KIT_THREADS"

T = TypeVar("T")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, *stream)``.

    Streams with different ids are independent, so split ``j`` of an
    experiment draws the same numbers no matter how splits are scheduled.
    """
    key = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(key))


def thread_count(n_jobs: Optional[int] = None) -> int:
    """Resolve a worker count; ``0`` means one per CPU.

    An explicit ``n_jobs`` wins, then ``CONFORMAL_KIT_THREADS``, then 1.
    """
    if n_jobs is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        n_jobs = int(raw) if raw else 1
    if n_jobs < 0:
        raise ValueError(f"thread count must be >= 0, got {n_jobs}")
    return n_jobs or (os.cpu_count() or 1)


def parallel_map(fn: Callable[[int], T], items: Iterable[int], n_jobs: Optional[int] = None) -> list[T]:
    items = list(items)
    workers = min(thread_count(n_jobs), max(len(items), 1))
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
