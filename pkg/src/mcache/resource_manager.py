"""In-memory store guarded by strict two-phase locking.

Lock requests are non-blocking at the core: :meth:`ResourceManager.acquire`
returns a :class:`LockTicket` that is granted now or later, or aborted when
its transaction is chosen as a deadlock victim.  Thread callers use the
blocking ``rm_read``/``rm_write`` wrappers; the discrete-event simulator
waits on tickets instead.
"""
from __future__ import annotations

import enum
import itertools
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .errors import TransactionAborted, TransactionStateError
from .history import Abort, Commit, HistoryBuilder, Read, Write

log = logging.getLogger(__name__)


class _Absent:
    def __repr__(self) -> str:
        return "ABSENT"


ABSENT: Any = _Absent()


class LockMode(enum.Enum):
    SHARED = "S"
    EXCLUSIVE = "X"


class TxStatus(enum.Enum):
    ACTIVE = "active"
    COMMITTED = "committed"
    ABORTED = "aborted"


class LockTicket:
    """Outcome of a lock request: pending, granted, or aborted."""

    PENDING, GRANTED, ABORTED = "pending", "granted", "aborted"

    def __init__(self, tx: int, elem: str, mode: LockMode, upgrade: bool = False):
        self.tx = tx
        self.elem = elem
        self.mode = mode
        self.upgrade = upgrade
        self.state = self.PENDING
        self.reason: str | None = None
        self._callbacks: list[Callable[["LockTicket"], None]] = []
        self._event: threading.Event | None = None

    @property
    def done(self) -> bool:
        return self.state != self.PENDING

    def add_done_callback(self, fn: Callable[["LockTicket"], None]) -> None:
        if self.done:
            fn(self)
        else:
            self._callbacks.append(fn)

    def wait(self, timeout: float | None = None) -> bool:
        if self._event is None:
            self._event = threading.Event()
            if self.done:
                self._event.set()
        return self._event.wait(timeout)

    def _resolve(self, state: str, reason: str | None = None) -> None:
        if self.done:
            return
        self.state = state
        self.reason = reason
        if self._event is not None:
            self._event.set()
        callbacks, self._callbacks = self._callbacks, []
        for fn in callbacks:
            fn(self)

    def __repr__(self) -> str:
        return f"LockTicket(T{self.tx}, {self.elem}, {self.mode.value}, {self.state})"


@dataclass
class _LockEntry:
    holders: dict[int, LockMode] = field(default_factory=dict)
    queue: deque = field(default_factory=deque)


@dataclass
class _TxState:
    status: TxStatus = TxStatus.ACTIVE
    workspace: dict[str, Any] = field(default_factory=dict)
    locks: set[str] = field(default_factory=set)
    pending: Optional[LockTicket] = None
    abort_reason: str | None = None


class CommitClock:
    def __init__(self) -> None:
        self._counter = itertools.count(1)
        self.last = 0

    def next(self) -> int:
        self.last = next(self._counter)
        return self.last


AbortListener = Callable[[int, str], None]


class ResourceManager:
    """Strict 2PL over a key-value store, with wait-for-graph deadlock detection.

    ``loader`` supplies the initial committed value of keys missing from
    ``store``; it returns :data:`ABSENT` for keys that do not exist.
    """

    def __init__(
        self,
        store: dict[str, Any] | None = None,
        loader: Callable[[str], Any] | None = None,
        mutex: threading.RLock | None = None,
        trace: HistoryBuilder | None = None,
    ):
        self.store: dict[str, Any] = dict(store or {})
        self.loader = loader
        self.mutex = mutex or threading.RLock()
        self.trace = trace
        self.clock = CommitClock()
        self._ids = itertools.count(1)
        self._locks: dict[str, _LockEntry] = {}
        self._txs: dict[int, _TxState] = {}
        self._abort_listeners: list[AbortListener] = []
        self.deadlocks = 0

    # -- bookkeeping -----------------------------------------------------

    def add_abort_listener(self, fn: AbortListener) -> None:
        self._abort_listeners.append(fn)

    def status(self, tx: int) -> TxStatus:
        return self._txs[tx].status

    def active(self) -> list[int]:
        return [tx for tx, st in self._txs.items() if st.status is TxStatus.ACTIVE]

    def holders(self, elem: str) -> dict[int, LockMode]:
        entry = self._locks.get(elem)
        return dict(entry.holders) if entry else {}

    def _require_active(self, tx: int) -> _TxState:
        st = self._txs.get(tx)
        if st is None:
            raise TransactionStateError(f"unknown transaction T{tx}")
        if st.status is TxStatus.ABORTED:
            raise TransactionAborted(tx, st.abort_reason or "aborted")
        if st.status is not TxStatus.ACTIVE:
            raise TransactionStateError(f"T{tx} is {st.status.value}")
        return st

    def _record(self, op) -> None:
        if self.trace is not None:
            self.trace.append(op)

    # -- transactions ----------------------------------------------------

    def rm_begin(self) -> int:
        with self.mutex:
            tx = next(self._ids)
            self._txs[tx] = _TxState()
            return tx

    def acquire(self, tx: int, elem: str, mode: LockMode) -> LockTicket:
        """Request a lock without blocking."""
        with self.mutex:
            st = self._require_active(tx)
            if st.pending is not None:
                raise TransactionStateError(f"T{tx} already waits for {st.pending.elem}")
            entry = self._locks.setdefault(elem, _LockEntry())
            held = entry.holders.get(tx)
            if held is LockMode.EXCLUSIVE or (held is LockMode.SHARED and mode is LockMode.SHARED):
                ticket = LockTicket(tx, elem, mode)
                ticket._resolve(LockTicket.GRANTED)
                return ticket
            upgrade = held is LockMode.SHARED
            ticket = LockTicket(tx, elem, mode, upgrade)
            if self._grantable(entry, ticket, queued_ahead=bool(entry.queue) and not upgrade):
                self._grant(entry, ticket)
                return ticket
            if upgrade:
                # upgrades jump ahead of ordinary waiters
                pos = 0
                while pos < len(entry.queue) and entry.queue[pos].upgrade:
                    pos += 1
                entry.queue.insert(pos, ticket)
            else:
                entry.queue.append(ticket)
            st.pending = ticket
            self._resolve_deadlocks(tx)
            return ticket

    def _grantable(self, entry: _LockEntry, ticket: LockTicket, queued_ahead: bool) -> bool:
        if queued_ahead:
            return False
        others = {t: m for t, m in entry.holders.items() if t != ticket.tx}
        if ticket.mode is LockMode.EXCLUSIVE:
            return not others
        return all(m is LockMode.SHARED for m in others.values())

    def _grant(self, entry: _LockEntry, ticket: LockTicket) -> None:
        entry.holders[ticket.tx] = ticket.mode
        st = self._txs[ticket.tx]
        st.locks.add(ticket.elem)
        if st.pending is ticket:
            st.pending = None
        ticket._resolve(LockTicket.GRANTED)

    def _pump(self, elem: str) -> None:
        entry = self._locks.get(elem)
        if entry is None:
            return
        while entry.queue and self._grantable(entry, entry.queue[0], queued_ahead=False):
            self._grant(entry, entry.queue.popleft())
        if not entry.holders and not entry.queue:
            del self._locks[elem]

    def read_locked(self, tx: int, elem: str, sup: int = 1) -> Any:
        """Read under an already granted lock and record r<tx>.<sup>[elem]."""
        with self.mutex:
            st = self._require_active(tx)
            if elem not in st.locks:
                raise TransactionStateError(f"T{tx} holds no lock on {elem}")
            self._record(Read(tx, sup, elem))
            if elem in st.workspace:
                return st.workspace[elem]
            return self._committed_value(elem)

    def write_locked(self, tx: int, elem: str, value: Any) -> None:
        with self.mutex:
            st = self._require_active(tx)
            if self._locks.get(elem) is None or self._locks[elem].holders.get(tx) is not LockMode.EXCLUSIVE:
                raise TransactionStateError(f"T{tx} holds no exclusive lock on {elem}")
            self._record(Write(tx, elem))
            st.workspace[elem] = value

    def _committed_value(self, elem: str) -> Any:
        if elem in self.store:
            return self.store[elem]
        if self.loader is not None:
            return self.loader(elem)
        return ABSENT

    def rm_read(self, tx: int, elem: str, sup: int = 1) -> Any:
        """Blocking read for thread callers."""
        self._await(self.acquire(tx, elem, LockMode.SHARED))
        return self.read_locked(tx, elem, sup)

    def rm_write(self, tx: int, elem: str, value: Any) -> None:
        self._await(self.acquire(tx, elem, LockMode.EXCLUSIVE))
        self.write_locked(tx, elem, value)

    @staticmethod
    def _await(ticket: LockTicket) -> None:
        ticket.wait()
        if ticket.state == LockTicket.ABORTED:
            raise TransactionAborted(ticket.tx, ticket.reason or "aborted")

    def rm_commit(self, tx: int) -> int:
        with self.mutex:
            st = self._require_active(tx)
            if st.pending is not None:
                raise TransactionStateError(f"T{tx} cannot commit while waiting for a lock")
            self.store.update(st.workspace)
            st.workspace = {}
            st.status = TxStatus.COMMITTED
            stamp = self.clock.next()
            self._record(Commit(tx))
            self._release(tx, st)
            return stamp

    def rm_abort(self, tx: int, reason: str = "aborted") -> bool:
        """Roll back ``tx``.  Returns False when it had already terminated."""
        with self.mutex:
            st = self._txs.get(tx)
            if st is None or st.status is not TxStatus.ACTIVE:
                return False
            st.status = TxStatus.ABORTED
            st.abort_reason = reason
            st.workspace = {}
            self._record(Abort(tx))
            pending = st.pending
            if pending is not None:
                entry = self._locks.get(pending.elem)
                if entry is not None and pending in entry.queue:
                    entry.queue.remove(pending)
                st.pending = None
                pending._resolve(LockTicket.ABORTED, reason)
                self._pump(pending.elem)
            self._release(tx, st)
            for fn in list(self._abort_listeners):
                fn(tx, reason)
            return True

    def _release(self, tx: int, st: _TxState) -> None:
        for elem in sorted(st.locks):
            entry = self._locks.get(elem)
            if entry is not None:
                entry.holders.pop(tx, None)
            self._pump(elem)
        st.locks.clear()

    # -- deadlocks -------------------------------------------------------

    def wait_for_graph(self) -> dict[int, set[int]]:
        graph: dict[int, set[int]] = {}
        for entry in self._locks.values():
            ahead: list[LockTicket] = []
            for ticket in entry.queue:
                waits = graph.setdefault(ticket.tx, set())
                for holder, mode in entry.holders.items():
                    if holder != ticket.tx and (ticket.mode is LockMode.EXCLUSIVE or mode is LockMode.EXCLUSIVE):
                        waits.add(holder)
                waits.update(t.tx for t in ahead if t.tx != ticket.tx)
                ahead.append(ticket)
        return graph

    @staticmethod
    def _find_cycle(graph: dict[int, set[int]], start: int | None = None) -> list[int] | None:
        roots = [start] if start is not None else sorted(graph)
        for root in roots:
            path: list[int] = []
            on_path: set[int] = set()
            visited: set[int] = set()
            stack = [(root, iter(sorted(graph.get(root, ()))))]
            path.append(root)
            on_path.add(root)
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    stack.pop()
                    path.pop()
                    on_path.discard(node)
                    visited.add(node)
                    continue
                if nxt in on_path:
                    return path[path.index(nxt):]
                if nxt not in visited:
                    stack.append((nxt, iter(sorted(graph.get(nxt, ())))))
                    path.append(nxt)
                    on_path.add(nxt)
        return None

    def detect_deadlock(self) -> int | None:
        """Victim (youngest transaction) of some wait-for cycle, or None."""
        with self.mutex:
            cycle = self._find_cycle(self.wait_for_graph())
            return max(cycle) if cycle else None

    def _resolve_deadlocks(self, requester: int) -> None:
        while True:
            st = self._txs[requester]
            if st.status is not TxStatus.ACTIVE or st.pending is None:
                return
            cycle = self._find_cycle(self.wait_for_graph(), requester)
            if cycle is None:
                return
            victim = max(cycle)
            self.deadlocks += 1
            log.debug("deadlock %s, aborting T%d", cycle, victim)
            self.rm_abort(victim, "deadlock")
