"""
Ordered thread-pool map

Results come back in input order whatever the schedule, so reductions over
them stay reproducible. numpy releases the GIL inside its kernels, which is
where the estimators spend their time.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from src.core.config import settings

T = TypeVar("T")
R = TypeVar("R")

_thread_cap: Optional[int] = None


def set_thread_cap(threads: Optional[int]) -> None:
    """Cap parallelism for the whole process (the CLI --threads flag)."""
    global _thread_cap
    _thread_cap = threads


def effective_threads(threads: Optional[int] = None) -> int:
    requested = threads if threads is not None else settings.DEFAULT_THREADS
    if _thread_cap is not None:
        requested = min(requested, _thread_cap)
    return max(1, int(requested))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    items = list(items)
    workers = min(effective_threads(threads), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
