"""Run metrics: counters and timing histograms."""
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Dict

import structlog

logger = structlog.get_logger(__name__)


@dataclass
class MetricCounter:
    """Simple counter metric."""
    value: int = 0

    def increment(self, amount: int = 1):
        self.value += amount

    def get(self) -> int:
        return self.value


@dataclass
class MetricHistogram:
    """Simple histogram for timing data."""
    samples: deque = field(default_factory=lambda: deque(maxlen=1000))
    total: float = 0.0
    count: int = 0

    def observe(self, value: float):
        self.samples.append(value)
        self.total += value
        self.count += 1

    def get_stats(self) -> Dict[str, float]:
        if not self.samples:
            return {"count": 0, "sum": 0.0, "avg": 0.0, "min": 0.0, "max": 0.0}

        samples_list = list(self.samples)
        return {
            "count": self.count,
            "sum": self.total,
            "avg": self.total / self.count,
            "min": min(samples_list),
            "max": max(samples_list),
        }


class MetricsCollector:
    """Collects counters and timings for one process."""

    COUNTERS = (
        "gam_fits_total",
        "gam_fit_failures_total",
        "search_candidates_total",
        "permutation_replicates_total",
        "permutation_retries_total",
        "permutation_failures_total",
    )

    def __init__(self):
        self.start_time = time.time()
        self._lock = threading.RLock()
        self.counters = defaultdict(MetricCounter)
        self.histograms = defaultdict(MetricHistogram)
        for name in self.COUNTERS:
            self.counters[name]

    def increment_counter(self, name: str, amount: int = 1):
        with self._lock:
            self.counters[name].increment(amount)

    def observe_histogram(self, name: str, value: float):
        with self._lock:
            self.histograms[name].observe(value)

    def counter_snapshot(self) -> Dict[str, int]:
        """Counter values only; these are deterministic for a fixed input."""
        with self._lock:
            return {name: counter.get() for name, counter in sorted(self.counters.items())}

    def counter_delta(self, before: Dict[str, int]) -> Dict[str, int]:
        after = self.counter_snapshot()
        return {name: value - before.get(name, 0) for name, value in after.items()}

    def get_all_metrics(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "uptime_seconds": time.time() - self.start_time,
                "counters": {name: c.get() for name, c in self.counters.items()},
                "histograms": {name: h.get_stats() for name, h in self.histograms.items()},
            }

    def reset(self):
        with self._lock:
            self.counters.clear()
            self.histograms.clear()
            for name in self.COUNTERS:
                self.counters[name]


class TimingContext:
    """Context manager for timing operations."""

    def __init__(self, metrics: MetricsCollector, metric_name: str):
        self.metrics = metrics
        self.metric_name = metric_name
        self.start_time = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.start_time is not None:
            self.metrics.observe_histogram(self.metric_name, time.perf_counter() - self.start_time)


# Global metrics instance
metrics = MetricsCollector()
