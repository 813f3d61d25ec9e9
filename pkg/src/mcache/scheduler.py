"""Server-side m-scheduler: base cache bookkeeping plus the OCTP protocol.

The scheduler observes every read, write, commit and abort after the
resource manager has granted the corresponding lock, and every client-side
cache hit (method operation) when the client next contacts the server.
Protocols:

``none``
    no caching; the scheduler only forwards aborts.
``base_only`` / ``base_no_hits``
    cache bookkeeping and invalidation, no serializability checks.
``occ_like``
    any hit that creates a reverse edge aborts the hitting transaction.
``octp``
    reverse edges are tolerated while ``ts_tol < ts_fit`` holds.
"""
from __future__ import annotations

import logging
import math
import threading
from collections import OrderedDict, defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Optional

from .errors import TransactionAborted
from .history import HistoryBuilder, MethodOp
from .resource_manager import ResourceManager

log = logging.getLogger(__name__)

INF = math.inf
PROTOCOLS = ("none", "base_only", "base_no_hits", "occ_like", "octp")
CACHING = frozenset(PROTOCOLS) - {"none"}
CHECKING = frozenset({"occ_like", "octp"})


class MId(NamedTuple):
    k: int
    l: int

    def __str__(self) -> str:
        return f"({self.k},{self.l})"


@dataclass(eq=False)
class TxView:
    id: int
    ts: float = INF
    ts_fit: float = INF
    ts_tol: float = 0
    rl: set = field(default_factory=set)
    wl: set = field(default_factory=set)
    ml: set = field(default_factory=set)
    l: list = field(default_factory=list)  # (is_read, elem) of the current call
    next_call: int = 1
    status: str = "active"
    abort_reason: str | None = None

    @property
    def active(self) -> bool:
        return self.status == "active"

    def __repr__(self) -> str:
        return f"TxView(T{self.id}, ts={self.ts}, fit={self.ts_fit}, tol={self.ts_tol}, {self.status})"


@dataclass
class Request:
    tx: int
    method: str = ""
    receiver: Any = None
    args: tuple = ()
    L: list = field(default_factory=list)


@dataclass
class Response:
    result: Any = None
    cachable: bool = False
    m: Optional[MId] = None
    h: list = field(default_factory=list)
    evicted: list = field(default_factory=list)
    error: Optional[TransactionAborted] = None


@dataclass
class _VRow:
    deps: frozenset
    prewritten: frozenset  # elements the producer had written before the result existed
    invalidated: bool = False
    stale_since: float | None = None  # ts of the first committed writer that made it stale


class VTable:
    """Bounded read-dependency relation between elements and cached results.

    Capacity counts rows (element, MId).  Eviction removes whole results in
    least-recently-used order.  A result with no dependencies still occupies
    one slot so that it can be evicted.
    """

    def __init__(self, capacity: int = 100_000):
        self.capacity = capacity
        self._rows: "OrderedDict[MId, _VRow]" = OrderedDict()
        self._by_elem: dict[str, set[MId]] = defaultdict(set)
        self.size = 0
        self.evictions = 0

    def __contains__(self, m: MId) -> bool:
        return m in self._rows

    def __len__(self) -> int:
        return len(self._rows)

    def row(self, m: MId) -> _VRow | None:
        return self._rows.get(m)

    def deps(self, m: MId) -> frozenset:
        row = self._rows.get(m)
        return row.deps if row else frozenset()

    def mids(self, elem: str) -> set[MId]:
        return self._by_elem.get(elem, set())

    def items(self):
        return self._rows.items()

    def touch(self, m: MId) -> None:
        if m in self._rows:
            self._rows.move_to_end(m)

    def insert(self, m: MId, deps: Iterable[str], prewritten: Iterable[str] = ()) -> list[MId]:
        deps = frozenset(deps)
        self.remove(m)
        self._rows[m] = _VRow(deps, frozenset(prewritten))
        for x in deps:
            self._by_elem[x].add(m)
        self.size += max(1, len(deps))
        evicted = []
        while self.size > self.capacity and len(self._rows) > 1:
            victim = next(iter(self._rows))
            self.remove(victim)
            evicted.append(victim)
        self.evictions += len(evicted)
        return evicted

    def remove(self, m: MId) -> bool:
        row = self._rows.pop(m, None)
        if row is None:
            return False
        for x in row.deps:
            s = self._by_elem.get(x)
            if s is not None:
                s.discard(m)
                if not s:
                    del self._by_elem[x]
        self.size -= max(1, len(row.deps))
        return True


AbortHook = Callable[[int, str], None]


class MScheduler:
    """Observes data access and cache hits and enforces the chosen protocol.

    All public entry points take the shared ``mutex`` (the same lock the
    resource manager uses), so the order in which the scheduler observes
    operations is the order in which they execute.
    """

    def __init__(
        self,
        rm: ResourceManager,
        protocol: str = "octp",
        v_capacity: int = 100_000,
        gc: bool = True,
        purge_stale: bool = False,
        trace: HistoryBuilder | None = None,
        stale_grace: int = 0,
    ):
        if protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {protocol!r}")
        self.rm = rm
        self.protocol = protocol
        self.mutex: threading.RLock = rm.mutex
        self.trace = trace if trace is not None else rm.trace
        self.V = VTable(v_capacity)
        self.gc_enabled = gc
        self.purge_stale = purge_stale
        self.stale_grace = stale_grace
        self.next_ts = 1
        self.txs: dict[int, TxView] = {}
        self.tx_id_to_ts: dict[int, float] = {}
        self.rt: dict[str, set[TxView]] = defaultdict(set)
        self.wt: dict[str, set[TxView]] = defaultdict(set)
        self.mt: dict[MId, set[TxView]] = defaultdict(set)
        self._mt_rows: dict[MId, _VRow] = {}
        self._mt_by_elem: dict[str, set[MId]] = defaultdict(set)
        self._abort_hooks: list[AbortHook] = []
        self.abort_counts: dict[str, int] = defaultdict(int)
        self.purged = 0
        self.commit_fits: dict[int, tuple[float, float]] = {}  # filled only while tracing
        self._stale_queue: deque = deque()
        self.retention_log: list[tuple[int, int]] = []  # (retained committed, |M1 u M2|)
        rm.add_abort_listener(self._on_rm_abort)

    @property
    def caching(self) -> bool:
        return self.protocol in CACHING

    @property
    def checking(self) -> bool:
        return self.protocol in CHECKING

    def add_abort_hook(self, fn: AbortHook) -> None:
        self._abort_hooks.append(fn)

    # -- lifecycle -------------------------------------------------------

    def begin(self) -> TxView:
        with self.mutex:
            tx = self.rm.rm_begin()
            t = TxView(tx)
            self.txs[tx] = t
            self.tx_id_to_ts[tx] = INF
            return t

    def view(self, tx: int) -> TxView:
        return self.txs[tx]

    def _raise_if_aborted(self, t: TxView) -> None:
        if not t.active:
            raise TransactionAborted(t.id, t.abort_reason or "aborted")

    def begin_call(self, t: TxView) -> int:
        """Start a method execution; returns the superscript for its reads."""
        with self.mutex:
            self._raise_if_aborted(t)
            sup = t.next_call
            t.next_call += 1
            t.l = []
            return sup

    # -- base protocol -------------------------------------------------

    def handle_request(self, req: Request) -> None:
        with self.mutex:
            t = self.txs.get(req.tx)
            if t is None:
                raise TransactionAborted(req.tx, "unknown")
            self._raise_if_aborted(t)
            for m in req.L:
                self.method_op(t, MId(*m))
                self._raise_if_aborted(t)

    def complete_response(self, res: Response, t: TxView, sup: int) -> Response:
        with self.mutex:
            self._raise_if_aborted(t)
            if not self.caching:
                res.cachable = False
                t.l = []
                return res
            written = [x for is_read, x in t.l if not is_read]
            if written:
                res.cachable = False
                seen = set()
                for x in written:
                    for m in sorted(self.V.mids(x)):
                        row = self.V.row(m)
                        if m not in seen and row is not None and not row.invalidated:
                            row.invalidated = True
                            seen.add(m)
                            res.h.append(m)
            else:
                res.cachable = True
                res.m = MId(t.id, sup)
                deps = {x for _, x in t.l}
                res.evicted.extend(self.V.insert(res.m, deps, prewritten=t.wl))
            t.l = []
            return res

    # -- observation ---------------------------------------------------

    @staticmethod
    def check_timestamps(a: TxView, b: TxView) -> bool:
        if a.ts < INF and b.ts == INF and a.ts > b.ts_tol:
            b.ts_tol = a.ts
        return b.ts == INF and b.ts_tol >= b.ts_fit

    def observe_read(self, t: TxView, elem: str) -> None:
        with self.mutex:
            self._raise_if_aborted(t)
            if self.checking:
                for s in list(self.wt.get(elem, ())):
                    if self.check_timestamps(s, t):
                        self._abort_and_raise(t, "mscheduler")
            t.rl.add(elem)
            self.rt[elem].add(t)
            t.l.append((True, elem))

    def observe_write(self, t: TxView, elem: str) -> None:
        with self.mutex:
            self._raise_if_aborted(t)
            if self.checking:
                for s in list(self.wt.get(elem, ())) + list(self.rt.get(elem, ())):
                    if self.check_timestamps(s, t):
                        self._abort_and_raise(t, "mscheduler")
                for m in list(self._mt_by_elem.get(elem, ())):
                    for s in list(self.mt.get(m, ())):
                        if self.check_timestamps(s, t):
                            self._abort_and_raise(t, "mscheduler")
            t.wl.add(elem)
            self.wt[elem].add(t)
            t.l.append((False, elem))

    def _producer_ts(self, k: int) -> float:
        # dropped by retention GC: older than everything still retained
        return self.tx_id_to_ts.get(k, 0)

    def _is_reverse(self, s: TxView, m: MId, elem: str, prewritten: frozenset) -> bool:
        if s.id == m.k:
            return elem not in prewritten
        return s.ts > self._producer_ts(m.k)

    def method_op(self, t: TxView, m: MId) -> None:
        with self.mutex:
            self._raise_if_aborted(t)
            if not self.caching:
                return
            row = self.V.row(m)
            if self.checking:
                if row is None:
                    self._abort_and_raise(t, "stale_mid")
                for x in sorted(row.deps):
                    for s in list(self.wt.get(x, ())):
                        if s.ts == INF:
                            continue
                        if self._is_reverse(s, m, x, row.prewritten):
                            if self.protocol == "occ_like":
                                self._abort_and_raise(t, "mscheduler")
                            if s.ts_fit < t.ts_fit:
                                t.ts_fit = s.ts_fit
                        elif s.ts > t.ts_tol:
                            t.ts_tol = s.ts
                        if t.ts_tol >= t.ts_fit:
                            self._abort_and_raise(t, "mscheduler")
            if self.trace is not None:
                self.trace.append(MethodOp(t.id, m.k, m.l))
            self.V.touch(m)
            t.ml.add(m)
            self.mt[m].add(t)
            if row is not None and m not in self._mt_rows:
                self._mt_rows[m] = row
                for x in row.deps:
                    self._mt_by_elem[x].add(m)

    def commit(self, t: TxView) -> list[TxView]:
        """Assign ``t`` its timestamp and return the active transactions it dooms.

        The caller commits ``t`` at the resource manager and then aborts the
        returned victims (see :meth:`finish_commit`).
        """
        with self.mutex:
            self._raise_if_aborted(t)
            t.ts = self.next_ts
            self.next_ts += 1
            self.tx_id_to_ts[t.id] = t.ts
            if t.ts_fit == INF:
                t.ts_fit = t.ts
            if self.caching:
                self._mark_stale(t)
            victims: dict[int, TxView] = {}
            if not self.checking:
                self._mark_committed(t)
                return []

            def doom(s: TxView) -> None:
                victims[s.id] = s

            for x in sorted(t.wl):
                for m in sorted(self._mt_by_elem.get(x, ())):
                    row = self._mt_rows[m]
                    for s in list(self.mt.get(m, ())):
                        if s is t or not s.active or s.id in victims:
                            continue
                        if m.k == t.id and x in row.prewritten:
                            if self.check_timestamps(t, s):
                                doom(s)
                            continue
                        if self.protocol == "occ_like":
                            doom(s)
                            continue
                        if t.ts_fit < s.ts_fit:
                            s.ts_fit = t.ts_fit
                        if s.ts_tol >= s.ts_fit:
                            doom(s)

            def sweep(candidates: Iterable[TxView]) -> None:
                for s in list(candidates):
                    if s is t or s.id in victims or not s.active:
                        continue
                    if self.check_timestamps(t, s):
                        doom(s)

            for x in sorted(t.rl):
                sweep(self.wt.get(x, ()))
            for x in sorted(t.wl):
                sweep(list(self.wt.get(x, ())) + list(self.rt.get(x, ())))
            for m in sorted(t.ml):
                row = self._mt_rows.get(m)
                for x in sorted(row.deps if row else ()):
                    sweep(self.wt.get(x, ()))
            self._mark_committed(t)
            return sorted(victims.values(), key=lambda v: v.id)

    def _mark_committed(self, t: TxView) -> None:
        t.status = "committed"
        if self.trace is not None:
            self.commit_fits[t.id] = (t.ts, t.ts_fit)

    def _mark_stale(self, t: TxView) -> None:
        for x in t.wl:
            for m in self.V.mids(x):
                row = self.V.row(m)
                if row.stale_since is None and self._is_reverse(t, m, x, row.prewritten):
                    row.stale_since = t.ts
                    self._stale_queue.append((t.ts, m, row))

    def finish_commit(self, t: TxView, victims: Iterable[TxView]) -> list[int]:
        with self.mutex:
            aborted = []
            for s in victims:
                if s.active:
                    self.scheduler_abort(s, "mscheduler")
                    aborted.append(s.id)
            if self.gc_enabled:
                self.gc_retention()
            return aborted

    def commit_transaction(self, t: TxView) -> tuple[int, list[int]]:
        """Scheduler commit, resource-manager commit, then abort victims."""
        with self.mutex:
            victims = self.commit(t)
            stamp = self.rm.rm_commit(t.id)
            return stamp, self.finish_commit(t, victims)

    # -- aborts ----------------------------------------------------------

    def _abort_and_raise(self, t: TxView, reason: str):
        self.scheduler_abort(t, reason)
        raise TransactionAborted(t.id, reason)

    def scheduler_abort(self, t: TxView, reason: str = "mscheduler") -> bool:
        with self.mutex:
            if t.status != "active":
                return False
            t.status = "aborted"
            t.abort_reason = reason
            self.abort_counts[reason] += 1
            self._forget(t)
            self.tx_id_to_ts[t.id] = self.next_ts - 1
            self.rm.rm_abort(t.id, reason)
            for fn in list(self._abort_hooks):
                fn(t.id, reason)
            return True

    def _on_rm_abort(self, tx: int, reason: str) -> None:
        t = self.txs.get(tx)
        if t is not None and t.active:
            self.scheduler_abort(t, reason)

    def _forget(self, t: TxView) -> None:
        for x in t.rl:
            self._discard(self.rt, x, t)
        for x in t.wl:
            self._discard(self.wt, x, t)
        self._release_mt(t)
        self.txs.pop(t.id, None)

    def _release_mt(self, t: TxView) -> None:
        for m in t.ml:
            holders = self.mt.get(m)
            if holders is None:
                continue
            holders.discard(t)
            if not holders:
                del self.mt[m]
                row = self._mt_rows.pop(m, None)
                if row is not None:
                    for x in row.deps:
                        self._discard(self._mt_by_elem, x, m)

    @staticmethod
    def _discard(rel: dict, key, value) -> None:
        s = rel.get(key)
        if s is not None:
            s.discard(value)
            if not s:
                del rel[key]

    # -- memory management -----------------------------------------------

    def _stale_min_fit(self) -> float:
        """min ts_fit over committed writers of an element with a stale V row."""
        best = INF
        for t in self.txs.values():
            if t.status != "committed" or t.ts_fit >= best:
                continue
            for x in t.wl:
                if any(self._producer_ts(m.k) < t.ts for m in self.V.mids(x)):
                    best = t.ts_fit
                    break
        return best

    def retention_threshold(self) -> float:
        active_fit = min((t.ts_fit for t in self.txs.values() if t.active), default=INF)
        return min(active_fit, self._stale_min_fit())

    def retention_sets(self) -> tuple[set[int], set[int]]:
        """M1 and M2 computed from their definitions over the retained state."""
        committed = [t for t in self.txs.values() if t.status == "committed"]
        a = min((t.ts_fit for t in self.txs.values() if t.active), default=INF)
        b = self._stale_min_fit()
        m1 = {t.id for t in committed if t.ts >= a}
        m2 = {t.id for t in committed if t.ts >= b}
        return m1, m2

    def gc_retention(self) -> int:
        """Drop committed transactions no active or future check can reach."""
        with self.mutex:
            if self.purge_stale:
                self._purge_stale_rows()
            theta = self.retention_threshold()
            dropped = 0
            for t in list(self.txs.values()):
                if t.status == "committed" and t.ts < theta:
                    for x in t.rl:
                        self._discard(self.rt, x, t)
                    for x in t.wl:
                        self._discard(self.wt, x, t)
                    self._release_mt(t)
                    del self.txs[t.id]
                    self.tx_id_to_ts.pop(t.id, None)
                    dropped += 1
            for tx, mark in list(self.tx_id_to_ts.items()):
                if tx not in self.txs and mark < theta:
                    del self.tx_id_to_ts[tx]
            m1, m2 = self.retention_sets()
            retained = sum(1 for t in self.txs.values() if t.status == "committed")
            self.retention_log.append((retained, len(m1 | m2)))
            return dropped

    def _purge_stale_rows(self) -> int:
        """Remove V rows that went stale more than ``stale_grace`` commits ago.

        Holders in ``mt`` keep their own copy of the row, so only later hits
        on a purged MId notice (and abort with ``stale_mid``).
        """
        cutoff = self.next_ts - 1 - self.stale_grace
        q = self._stale_queue
        removed = 0
        while q and q[0][0] <= cutoff:
            _, m, row = q.popleft()
            if self.V.row(m) is row and self.V.remove(m):
                removed += 1
        self.purged += removed
        return removed

    def retained_committed(self) -> int:
        return sum(1 for t in self.txs.values() if t.status == "committed")
