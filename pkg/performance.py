"""Worker pool and result cache for the fitting loops."""
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Hashable, Iterable, TypeVar

import structlog

logger = structlog.get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class WorkerPool:
    """Order-preserving parallel map.

    Results come back in input order whatever the schedule, so callers stay
    deterministic for any worker count.
    """

    def __init__(self, max_workers: int = 1):
        self.max_workers = max(1, int(max_workers))

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> list[R]:
        items = list(items)
        if self.max_workers == 1 or len(items) <= 1:
            return [func(item) for item in items]

        workers = min(self.max_workers, len(items))
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="xwf-worker") as executor:
            return list(executor.map(func, items))


class ResultCache:
    """Thread-safe memo keyed by hashable arguments."""

    def __init__(self):
        self._cache: dict[Hashable, Any] = {}
        self._lock = threading.RLock()
        self.hits = 0
        self.misses = 0

    def get_or_compute(self, key: Hashable, compute: Callable[[], Any]) -> Any:
        with self._lock:
            if key in self._cache:
                self.hits += 1
                return self._cache[key]
        value = compute()
        with self._lock:
            self.misses += 1
            return self._cache.setdefault(key, value)

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)

    def get_cache_stats(self) -> dict[str, int]:
        with self._lock:
            return {"entries": len(self._cache), "hits": self.hits, "misses": self.misses}
