"""Item-service workload driven through the cache, scheduler and resource manager."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..history import McHistory
from .metrics import CSV_COLUMNS, Metrics, csv_text, summarize, write_csv
from .runtime import Delay, ThreadRuntime, VirtualRuntime, Wait
from .system import CachingSystem, ScriptedDriver, StepHandle, TxRecord
from .workload import (
    PROTOCOLS,
    Item,
    ItemNotFound,
    WorkloadConfig,
    find_item_by_id,
    item_key,
    make_item,
    sample_item_id,
    update_item,
)


@dataclass
class SimulationResult:
    metrics: Metrics
    trace: Optional[McHistory]
    system: CachingSystem


def simulate(config: WorkloadConfig) -> SimulationResult:
    """Run one configuration to completion and keep the system for inspection."""
    runtime = VirtualRuntime() if config.virtual_time else ThreadRuntime(config.time_scale)
    system = CachingSystem(config, clock=runtime.clock)
    for c in range(config.threads):
        runtime.spawn(system.client_loop(c), f"client-{c}")
    runtime.run()
    cache = system.cache
    metrics = summarize(
        system.records,
        config,
        invalidations=cache.stats.invalidations if cache else 0,
        evictions=cache.stats.evictions if cache else 0,
        v_evictions=system.scheduler.V.evictions,
    )
    trace = system.history() if config.record_trace else None
    return SimulationResult(metrics, trace, system)


def run_simulation(config: WorkloadConfig) -> Metrics:
    return simulate(config).metrics


__all__ = [
    "CSV_COLUMNS",
    "CachingSystem",
    "Delay",
    "Item",
    "ItemNotFound",
    "Metrics",
    "PROTOCOLS",
    "ScriptedDriver",
    "SimulationResult",
    "StepHandle",
    "ThreadRuntime",
    "TxRecord",
    "VirtualRuntime",
    "Wait",
    "WorkloadConfig",
    "csv_text",
    "find_item_by_id",
    "item_key",
    "make_item",
    "run_simulation",
    "sample_item_id",
    "simulate",
    "summarize",
    "update_item",
    "write_csv",
]
