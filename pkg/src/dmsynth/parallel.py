"""Order-preserving map over independent jobs, capped by DMSYNTH_THREADS."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    raw = os.environ.get("DMSYNTH_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"DMSYNTH_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("DMSYNTH_THREADS must be >= 0")
    return (os.cpu_count() or 1) if n == 0 else n


def pmap(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Results come back in input order, so aggregation is identical to a serial run."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
