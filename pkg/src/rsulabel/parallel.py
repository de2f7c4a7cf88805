"""Ordered, deterministic parallel mapping over independent tasks."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T],
                 threads: int = 1) -> list[R]:
    """Map `fn` over `items`, preserving input order in the result.

    With `threads` <= 1 this is a plain loop. Tasks must be independent
    and side-effect free; results are identical for any thread count.
    """
    work: Sequence[T] = list(items)
    if threads <= 1 or len(work) <= 1:
        return [fn(x) for x in work]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, work))
