"""Item table, workload configuration, id sampling and the two service methods."""
from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, replace
from decimal import Decimal
from typing import Any, Generator

from ..errors import TransactionAborted
from ..resource_manager import ABSENT, LockMode, LockTicket
from .runtime import Delay, Wait

PROTOCOLS = ("none", "base_only", "base_no_hits", "occ_like", "octp")


@dataclass(frozen=True)
class Item:
    id: int
    name: str
    descr: str
    manuf: str
    price: Decimal
    weight: Decimal


def item_key(item_id: int) -> str:
    return f"item:{item_id}"


def make_item(item_id: int, seed: int = 0) -> Item:
    """The initial row for ``item_id``; a pure function of (id, seed)."""
    rng = random.Random(f"item:{seed}:{item_id}")
    letters = "abcdefghijklmnopqrstuvwxyz"
    word = lambda n: "".join(rng.choice(letters) for _ in range(n))  # noqa: E731
    return Item(
        id=item_id,
        name=word(12),
        descr=" ".join(word(rng.randint(3, 9)) for _ in range(5)),
        manuf=word(8),
        price=Decimal(rng.randint(100, 99_999)) / 100,
        weight=Decimal(rng.randint(1, 50_000)) / 1000,
    )


class ItemNotFound(LookupError):
    pass


@dataclass(frozen=True)
class WorkloadConfig:
    threads: int = 8
    duration: float = 120.0
    warmup: float = 120.0
    calls_per_tx: int = 10
    p_read: float = 0.8
    p_commit: float = 0.95
    think_time: float = 1.0
    item_count: int = 1_000_000
    cache_capacity: int = 4000
    lognormal_mu: float = 7.0
    lognormal_sigma: float = 1.6
    protocol: str = "octp"
    seed: int = 0
    latency: float = 0.0  # round trip per delegated call, seconds
    db_op_time: float = 0.0005
    v_capacity: int = 100_000
    recovery_locking: bool = True
    gc: bool = True
    purge_stale: bool = True
    stale_grace: int = 32  # commits a stale V row survives before purging
    virtual_time: bool = True
    record_trace: bool = False
    time_scale: float = 1.0  # thread mode only: wall seconds per simulated second

    def __post_init__(self) -> None:
        for name in ("p_read", "p_commit"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.stale_grace < 0:
            raise ValueError("stale_grace must be non-negative")
        for name in ("threads", "calls_per_tx", "item_count", "cache_capacity", "v_capacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("duration", "warmup", "think_time", "latency", "db_op_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lognormal_sigma < 0:
            raise ValueError("lognormal_sigma must be non-negative")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {', '.join(PROTOCOLS)}")

    @classmethod
    def desk(cls, **overrides: Any) -> "WorkloadConfig":
        """Small defaults that finish in seconds under virtual time."""
        base = dict(item_count=100_000, cache_capacity=1000, threads=8, duration=30.0, warmup=10.0)
        base.update(overrides)
        return cls(**base)

    def with_(self, **changes: Any) -> "WorkloadConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def sample_item_id(rng: random.Random, mu: float = 7.0, sigma: float = 1.6, item_count: int = 1_000_000) -> int:
    """Round a log-normal draw, re-drawing until it lands in [1, item_count]."""
    while True:
        v = round(rng.lognormvariate(mu, sigma))
        if 1 <= v <= item_count:
            return v


def lognormal_median(mu: float) -> float:
    return math.exp(mu)


# -- service methods ------------------------------------------------------


class ServerCall:
    """Data access of one method execution on behalf of one transaction."""

    def __init__(self, system: Any, view: Any, sup: int):
        self.system = system
        self.view = view
        self.sup = sup

    def _lock(self, elem: str, mode: LockMode) -> Generator[Any, Any, None]:
        rm = self.system.rm
        ticket: LockTicket = rm.acquire(self.view.id, elem, mode)
        if not ticket.done:
            yield Wait(ticket)
        if ticket.state == LockTicket.ABORTED:
            raise TransactionAborted(self.view.id, ticket.reason or "aborted")

    def read(self, elem: str) -> Generator[Any, Any, Any]:
        yield from self._lock(elem, LockMode.SHARED)
        with self.system.mutex:
            self.system.scheduler.observe_read(self.view, elem)
            value = self.system.rm.read_locked(self.view.id, elem, self.sup)
        yield Delay(self.system.config.db_op_time)
        return value

    def write(self, elem: str, value: Any) -> Generator[Any, Any, None]:
        yield from self._lock(elem, LockMode.EXCLUSIVE)
        with self.system.mutex:
            self.system.scheduler.observe_write(self.view, elem)
            self.system.rm.write_locked(self.view.id, elem, value)
        yield Delay(self.system.config.db_op_time)


def find_item_by_id(call: ServerCall, item_id: int) -> Generator[Any, Any, Any]:
    value = yield from call.read(item_key(item_id))
    return None if value is ABSENT else value


def update_item(call: ServerCall, item: Item) -> Generator[Any, Any, None]:
    elem = item_key(item.id)
    current = yield from call.read(elem)
    if current is ABSENT:
        raise ItemNotFound(item.id)
    yield from call.write(elem, item)


SERVICE_METHODS = {"findItemById": find_item_by_id, "updateItem": update_item}
