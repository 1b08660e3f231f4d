"""
Benchmark Metrics
=================

Collects full latency samples and counters for one scenario run and turns
them into a report.

Percentiles are computed over every recorded sample (no streaming
approximation). Latencies are in microseconds and measured inside the
host: admission at Net-In to emission at Net-Out.

Usage:
    from app.bench.metrics import MetricsCollector

    metrics = MetricsCollector("churn", kind="churn", seed=1)
    metrics.record_many("service", net_out.latencies, scale=1e6)
    metrics.count("admitted", 1000)
    report = metrics.report(elapsed_s=10.0)
    report.export_json("out/churn.json")
    report.print_summary()
"""

import csv
import json
import logging
import os
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

logger = logging.getLogger(__name__)

PERCENTILES = (50, 90, 99, 99.9)


@dataclass
class LatencySummary:
    """Distribution of one latency series (microseconds)."""
    count: int = 0
    mean: float = 0.0
    std: float = 0.0
    min: float = 0.0
    p50: float = 0.0
    p90: float = 0.0
    p99: float = 0.0
    p999: float = 0.0
    max: float = 0.0

    @classmethod
    def of(cls, samples: Iterable[float]) -> "LatencySummary":
        values = np.asarray(list(samples), dtype=np.float64)
        if values.size == 0:
            return cls()
        p50, p90, p99, p999 = np.percentile(values, PERCENTILES)
        return cls(
            count=int(values.size),
            mean=float(values.mean()),
            std=float(values.std()),
            min=float(values.min()),
            p50=float(p50),
            p90=float(p90),
            p99=float(p99),
            p999=float(p999),
            max=float(values.max()),
        )


@dataclass
class MetricsReport:
    """Everything a scenario run reports; field names are stable."""
    scenario: str
    kind: str
    seed: int
    execution: str
    elapsed_s: float
    started_at: str
    latency_us: Dict[str, LatencySummary] = field(default_factory=dict)
    throughput: Dict[str, float] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)
    audit: Dict[str, Any] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    samples: Dict[str, List[float]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("samples")
        return data

    def export_json(self, path: str) -> None:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, default=str)
        logger.info(f"Report written to {path}")

    def export_csv(self, directory: str) -> List[str]:
        """One `<series>.csv` per latency series with every sample."""
        os.makedirs(directory, exist_ok=True)
        written = []
        for name, values in self.samples.items():
            path = os.path.join(directory, f"{self.scenario}_{name}.csv")
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["index", f"{name}_us"])
                for i, value in enumerate(values):
                    writer.writerow([i, f"{value:.3f}"])
            written.append(path)
        logger.info(f"Wrote {len(written)} sample files to {directory}")
        return written

    def print_summary(self) -> None:
        """Print a human-readable table."""
        print(f"\n{'=' * 64}")
        print(f"Scenario {self.scenario} ({self.kind}, seed {self.seed}, {self.execution}) {self.elapsed_s:.2f}s")
        print(f"{'=' * 64}")
        if self.latency_us:
            print(f"{'latency (us)':<20}{'n':>9}{'p50':>9}{'p90':>9}{'p99':>9}{'p99.9':>9}")
            for name, s in self.latency_us.items():
                print(f"  {name:<18}{s.count:>9}{s.p50:>9.1f}{s.p90:>9.1f}{s.p99:>9.1f}{s.p999:>9.1f}")
        if self.throughput:
            print("\nThroughput:")
            for name, value in self.throughput.items():
                print(f"  {name:<28}{value:>14,.1f}")
        if self.counters:
            print("\nCounters:")
            for name, value in self.counters.items():
                print(f"  {name:<28}{value:>14,}")
        if self.results:
            print("\nResults:")
            for name, value in self.results.items():
                print(f"  {name:<28}{value}")
        if self.audit:
            print(f"\nAudit: {'ok' if self.audit.get('ok') else 'FAILED'}")
        for note in self.notes:
            print(f"  note: {note}")
        print(f"{'=' * 64}\n")


class MetricsCollector:
    """
    Gathers samples and counters for one run.

    Thread-safe: contexts may record concurrently in threaded mode.
    """

    def __init__(self, scenario: str, kind: str = "", seed: int = 0, execution: str = "step"):
        self.scenario = scenario
        self.kind = kind or scenario
        self.seed = seed
        self.execution = execution
        self.started_at = datetime.now().isoformat(timespec="seconds")
        self._samples: Dict[str, List[float]] = {}
        self._counters: Dict[str, int] = {}
        self._throughput: Dict[str, float] = {}
        self._results: Dict[str, Any] = {}
        self._notes: List[str] = []
        self._lock = threading.Lock()

    def record(self, series: str, value_us: float) -> None:
        with self._lock:
            self._samples.setdefault(series, []).append(float(value_us))

    def record_many(self, series: str, values: Iterable[float], scale: float = 1.0) -> None:
        """Append samples, multiplying by `scale` (1e6 turns seconds into microseconds)."""
        converted = [float(v) * scale for v in values]
        with self._lock:
            self._samples.setdefault(series, []).extend(converted)

    def count(self, name: str, amount: int = 1) -> None:
        with self._lock:
            self._counters[name] = self._counters.get(name, 0) + int(amount)

    def set_counters(self, values: Dict[str, int], prefix: str = "") -> None:
        with self._lock:
            for name, value in values.items():
                self._counters[f"{prefix}{name}"] = int(value)

    def rate(self, name: str, value: float) -> None:
        self._throughput[name] = float(value)

    def result(self, name: str, value: Any) -> None:
        self._results[name] = value

    def note(self, text: str) -> None:
        self._notes.append(text)

    def samples(self, series: str) -> List[float]:
        return list(self._samples.get(series, ()))

    def summary(self, series: str) -> LatencySummary:
        return LatencySummary.of(self._samples.get(series, ()))

    def report(self, elapsed_s: float, audit: Optional[Dict[str, Any]] = None) -> MetricsReport:
        with self._lock:
            samples = {k: list(v) for k, v in self._samples.items()}
            counters = dict(self._counters)
        return MetricsReport(
            scenario=self.scenario,
            kind=self.kind,
            seed=self.seed,
            execution=self.execution,
            elapsed_s=elapsed_s,
            started_at=self.started_at,
            latency_us={name: LatencySummary.of(values) for name, values in samples.items()},
            throughput=dict(self._throughput),
            counters=counters,
            results=dict(self._results),
            audit=audit or {},
            notes=list(self._notes),
            samples=samples,
        )
