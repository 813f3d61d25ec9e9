"""Aggregate per-transaction records into one row of run metrics."""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, TextIO

from .system import TxRecord
from .workload import WorkloadConfig

ABORT_SOURCES = ("client", "mscheduler", "deadlock", "stale_mid")


@dataclass
class Metrics:
    protocol: str
    seed: int
    threads: int
    started: int = 0
    committed: int = 0
    aborted: int = 0
    committed_tx_per_min: float = 0.0
    avg_tx_duration: float = 0.0
    abort_rate_pct: float = 0.0
    hit_rate_pct: float = 0.0
    calls: int = 0
    hits: int = 0
    invalidations: int = 0
    evictions: int = 0
    v_evictions: int = 0
    aborts_by_source: dict = field(default_factory=dict)

    @property
    def system_abort_rate_pct(self) -> float:
        """Abort rate excluding client-initiated aborts."""
        if not self.started:
            return 0.0
        sys_aborts = self.aborted - self.aborts_by_source.get("client", 0)
        return 100.0 * sys_aborts / self.started

    def row(self, config: WorkloadConfig | None = None) -> dict:
        out: dict = {}
        if config is not None:
            for k in CONFIG_COLUMNS:
                out[k] = getattr(config, k)
        d = asdict(self)
        sources = d.pop("aborts_by_source")
        out.update(d)
        for src in ABORT_SOURCES:
            out[f"aborts_{src}"] = sources.get(src, 0)
        return out


CONFIG_COLUMNS = (
    "protocol",
    "seed",
    "threads",
    "duration",
    "warmup",
    "item_count",
    "cache_capacity",
    "p_read",
    "p_commit",
    "lognormal_mu",
    "lognormal_sigma",
    "latency",
    "v_capacity",
    "recovery_locking",
)
METRIC_COLUMNS = (
    "started",
    "committed",
    "aborted",
    "committed_tx_per_min",
    "avg_tx_duration",
    "abort_rate_pct",
    "hit_rate_pct",
    "calls",
    "hits",
    "invalidations",
    "evictions",
    "v_evictions",
) + tuple(f"aborts_{s}" for s in ABORT_SOURCES)
CSV_COLUMNS = CONFIG_COLUMNS + METRIC_COLUMNS


def summarize(
    records: Iterable[TxRecord],
    config: WorkloadConfig,
    invalidations: int = 0,
    evictions: int = 0,
    v_evictions: int = 0,
) -> Metrics:
    """Transactions count when they begin inside the measurement window.

    Throughput counts commits that finish inside the window.
    """
    lo, hi = config.warmup, config.warmup + config.duration
    m = Metrics(config.protocol, config.seed, config.threads)
    sources: Counter = Counter()
    durations = []
    commits_in_window = 0
    for r in records:
        if r.committed and lo <= r.end < hi:
            commits_in_window += 1
        if not lo <= r.start < hi:
            continue
        m.started += 1
        m.hits += r.hits
        m.calls += r.hits + r.misses
        if r.committed:
            m.committed += 1
            durations.append(r.end - r.start)
        else:
            m.aborted += 1
            sources[r.reason or "unknown"] += 1
    if config.duration > 0:
        m.committed_tx_per_min = 60.0 * commits_in_window / config.duration
    m.avg_tx_duration = sum(durations) / len(durations) if durations else 0.0
    m.abort_rate_pct = 100.0 * m.aborted / m.started if m.started else 0.0
    m.hit_rate_pct = 100.0 * m.hits / m.calls if m.calls else 0.0
    m.invalidations = invalidations
    m.evictions = evictions
    m.v_evictions = v_evictions
    m.aborts_by_source = dict(sorted(sources.items()))
    return m


def write_csv(rows: list[dict], out: TextIO) -> None:
    writer = csv.DictWriter(out, fieldnames=list(CSV_COLUMNS), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
