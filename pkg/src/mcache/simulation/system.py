"""Client/server wiring: one resource manager, one m-scheduler, one shared cache.

Client code runs as generator processes (see :mod:`.runtime`).  A delegated
call travels the same route in both runtimes: pending hits go to the server
with the request, the service method runs under 2PL while the scheduler
observes each access, and the response carries cachability, the new MId and
invalidations back to the cache.
"""
from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Any, Generator, Optional

from ..cache import CacheKey, ClientCache, ClientTxState
from ..errors import TransactionAborted
from ..history import HistoryBuilder, McHistory
from ..resource_manager import ABSENT, ResourceManager
from ..scheduler import MScheduler, Request, Response, TxView
from .runtime import Delay, ProcessHandle, VirtualRuntime
from .workload import SERVICE_METHODS, ServerCall, WorkloadConfig, make_item, sample_item_id

RECEIVER = "ItemService"


@dataclass
class Session:
    client: int
    view: TxView
    state: ClientTxState

    @property
    def tx(self) -> int:
        return self.view.id


@dataclass
class TxRecord:
    client: int
    tx: int
    start: float
    end: float = 0.0
    committed: bool = False
    reason: Optional[str] = None
    hits: int = 0
    misses: int = 0


class CachingSystem:
    """Everything one simulation run needs, minus the runtime's clock."""

    def __init__(self, config: WorkloadConfig, clock=None):
        self.config = config
        self.clock = clock or (lambda: 0.0)
        self.mutex = threading.RLock()
        self.trace: HistoryBuilder | None = HistoryBuilder() if config.record_trace else None
        self.rm = ResourceManager(loader=self._load, mutex=self.mutex, trace=self.trace)
        self.scheduler = MScheduler(
            self.rm,
            protocol=config.protocol,
            v_capacity=config.v_capacity,
            gc=config.gc,
            purge_stale=config.purge_stale,
            stale_grace=config.stale_grace,
            trace=self.trace,
        )
        self.cache: ClientCache | None = None
        if config.protocol != "none":
            self.cache = ClientCache(
                config.cache_capacity,
                recovery_locking=config.recovery_locking,
                serve_hits=config.protocol != "base_no_hits",
            )
        self._states: dict[int, ClientTxState] = {}
        self.records: list[TxRecord] = []
        self._records_lock = threading.Lock()
        self.scheduler.add_abort_hook(self._on_abort)

    def _load(self, elem: str) -> Any:
        prefix, _, raw = elem.partition(":")
        if prefix != "item" or not raw.isdigit():
            return ABSENT
        item_id = int(raw)
        if not 1 <= item_id <= self.config.item_count:
            return ABSENT
        return make_item(item_id, self.config.seed)

    def _on_abort(self, tx: int, reason: str) -> None:
        state = self._states.get(tx)
        if state is not None and self.cache is not None:
            self.cache.on_abort(state)

    def history(self) -> McHistory:
        if self.trace is None:
            raise RuntimeError("trace recording is off")
        with self.mutex:
            return self.trace.build()

    # -- transaction steps (generators) -----------------------------------

    def begin(self, client: int) -> Session:
        view = self.scheduler.begin()
        state = ClientTxState(view.id)
        self._states[view.id] = state
        return Session(client, view, state)

    def _half_trip(self) -> Delay:
        return Delay(self.config.latency / 2)

    def call(self, sess: Session, method: str, args: tuple) -> Generator[Any, Any, Any]:
        key = CacheKey.of(method, RECEIVER, args)
        cache = self.cache
        if cache is not None:
            hit, result = cache.lookup(sess.state, key)
            if hit:
                return result
        else:
            sess.state.misses += 1
        hits = cache.take_hits(sess.state) if cache is not None else []
        yield self._half_trip()
        self.scheduler.handle_request(Request(sess.tx, method, RECEIVER, args, hits))
        sup = self.scheduler.begin_call(sess.view)
        res = Response()
        res.result = yield from SERVICE_METHODS[method](ServerCall(self, sess.view, sup), *args)
        self.scheduler.complete_response(res, sess.view, sup)
        yield self._half_trip()
        if cache is not None:
            with cache._lock:
                # an abort may have arrived while the response was in flight
                if not sess.view.active:
                    raise TransactionAborted(sess.tx, sess.view.abort_reason or "aborted")
                cache.apply_response(sess.state, key, res)
        return res.result

    def commit(self, sess: Session) -> Generator[Any, Any, list[int]]:
        hits = self.cache.take_hits(sess.state) if self.cache is not None else []
        yield self._half_trip()
        with self.mutex:
            self.scheduler.handle_request(Request(sess.tx, L=hits))
            _, victims = self.scheduler.commit_transaction(sess.view)
        if self.cache is not None:
            self.cache.on_commit(sess.state)
        self._states.pop(sess.tx, None)
        yield self._half_trip()
        return victims

    def abort(self, sess: Session, reason: str = "client") -> Generator[Any, Any, None]:
        yield self._half_trip()
        self.cleanup(sess, reason)
        yield self._half_trip()

    def cleanup(self, sess: Session, reason: str) -> None:
        self.scheduler.scheduler_abort(sess.view, reason)
        if self.cache is not None:
            self.cache.on_abort(sess.state)
        self._states.pop(sess.tx, None)

    # -- workload ------------------------------------------------------

    def transaction(self, client: int, index: int) -> Generator[Any, Any, TxRecord]:
        cfg = self.config
        rng = random.Random(f"{cfg.seed}:{client}:{index}")
        sess = self.begin(client)
        rec = TxRecord(client, sess.tx, self.clock())
        try:
            for _ in range(cfg.calls_per_tx):
                item_id = sample_item_id(rng, cfg.lognormal_mu, cfg.lognormal_sigma, cfg.item_count)
                if rng.random() < cfg.p_read:
                    yield from self.call(sess, "findItemById", (item_id,))
                else:
                    new = replace(make_item(item_id, cfg.seed), price=Decimal(rng.randint(100, 99_999)) / 100)
                    yield from self.call(sess, "updateItem", (new,))
            if rng.random() < cfg.p_commit:
                yield from self.commit(sess)
                rec.committed = True
            else:
                yield from self.abort(sess, "client")
                rec.reason = "client"
        except TransactionAborted as exc:
            self.cleanup(sess, exc.reason)
            rec.reason = sess.view.abort_reason or exc.reason
        rec.end = self.clock()
        rec.hits, rec.misses = sess.state.hits, sess.state.misses
        with self._records_lock:
            self.records.append(rec)
        return rec

    def client_loop(self, client: int) -> Generator[Any, Any, int]:
        cfg = self.config
        stop = cfg.warmup + cfg.duration
        # spread the first transactions over one think time
        yield Delay(random.Random(f"{cfg.seed}:{client}:start").uniform(0, max(cfg.think_time, 1e-3)))
        index = 0
        while self.clock() < stop:
            yield from self.transaction(client, index)
            index += 1
            yield Delay(cfg.think_time)
        return index


class StepHandle:
    """Result of one scripted step; it may complete during a later step."""

    def __init__(self, label: str):
        self.label = label
        self.proc: ProcessHandle | None = None
        self.value: Any = None
        self.aborted: TransactionAborted | None = None

    @property
    def done(self) -> bool:
        return self.proc is not None and self.proc.done

    def __repr__(self) -> str:
        state = "aborted" if self.aborted else ("done" if self.done else "blocked")
        return f"StepHandle({self.label}, {state})"


class ScriptedDriver:
    """Runs hand-written interleavings step by step on a zero-latency system.

    Each step runs until no process can make progress, so a step that blocks
    on a lock stays pending and finishes inside whichever later step frees it.
    """

    def __init__(self, protocol: str = "octp", recovery_locking: bool = True, **overrides: Any):
        base = dict(
            protocol=protocol,
            recovery_locking=recovery_locking,
            latency=0.0,
            db_op_time=0.0,
            think_time=0.0,
            item_count=1000,
            cache_capacity=100,
            record_trace=True,
        )
        base.update(overrides)
        self.runtime = VirtualRuntime()
        self.system = CachingSystem(WorkloadConfig(**base), clock=self.runtime.clock)
        self.sessions: dict[int, Session] = {}

    def begin(self) -> int:
        sess = self.system.begin(0)
        self.sessions[sess.tx] = sess
        return sess.tx

    def _run(self, label: str, gen: Generator[Any, Any, Any]) -> StepHandle:
        step = StepHandle(label)

        def wrapped():
            try:
                step.value = yield from gen
            except TransactionAborted as exc:
                step.aborted = exc
                sess = self.sessions.get(exc.tx)
                if sess is not None:
                    self.system.cleanup(sess, exc.reason)

        step.proc = self.runtime.spawn(wrapped(), label)
        self.runtime.run()
        return step

    def find(self, tx: int, item_id: int) -> StepHandle:
        return self._run(f"T{tx} find {item_id}", self.system.call(self.sessions[tx], "findItemById", (item_id,)))

    def update(self, tx: int, item_id: int, price: str = "1.00") -> StepHandle:
        item = replace(make_item(item_id, self.system.config.seed), price=Decimal(price))
        return self._run(f"T{tx} update {item_id}", self.system.call(self.sessions[tx], "updateItem", (item,)))

    def commit(self, tx: int) -> StepHandle:
        return self._run(f"T{tx} commit", self.system.commit(self.sessions[tx]))

    def abort(self, tx: int) -> StepHandle:
        return self._run(f"T{tx} abort", self.system.abort(self.sessions[tx]))

    def history(self) -> McHistory:
        return self.system.history()
