"""Serializability oracles for MC-histories.

The multiversion image of a history, write version orders, the multiversion
serializability graph (MVSG), the MC-serializability graph (MCSG), and the
timestamp predicates used to argue about the OCTP scheduler.
"""
from __future__ import annotations

import bisect
import itertools
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .history import (
    Abort,
    Commit,
    McHistory,
    MethodOp,
    Operation,
    Read,
    Write,
    conflicts,
    data_elements,
    rw_projection,
)

TimestampFn = Mapping[int, int]
Edge = tuple[int, int]


class InstanceTooLarge(ValueError):
    """The brute-force oracle refuses instances it cannot enumerate."""


# ---------------------------------------------------------------------------
# multiversion histories


@dataclass(frozen=True)
class VRead:
    tx: int
    sup: int
    elem: str
    version: int

    def __str__(self) -> str:
        return f"r{self.tx}.{self.sup}[{self.elem}@{self.version}]"


@dataclass(frozen=True)
class VWrite:
    tx: int
    elem: str

    @property
    def version(self) -> int:
        return self.tx

    def __str__(self) -> str:
        return f"w{self.tx}[{self.elem}@{self.tx}]"


VersionedOp = Union[VRead, VWrite, Commit, Abort]


@dataclass(frozen=True)
class MvHistory:
    ops: tuple[VersionedOp, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))
        problems = self.invariant_violations()
        if problems:
            raise ValueError("invalid multiversion history: " + "; ".join(problems))

    def invariant_violations(self) -> list[str]:
        problems = []
        written: set[tuple[str, int]] = set()
        committed = {op.tx for op in self.ops if isinstance(op, Commit)}
        for op in self.ops:
            if isinstance(op, VWrite):
                written.add((op.elem, op.tx))
            elif isinstance(op, VRead):
                if op.version != 0 and (op.elem, op.version) not in written:
                    problems.append(f"{op} reads a version not yet written")
                if op.version not in (0, op.tx) and op.tx in committed and op.version not in committed:
                    problems.append(f"{op} is committed but read from an uncommitted writer")
        return problems

    def __str__(self) -> str:
        return " ".join(str(op) for op in self.ops)

    def __iter__(self):
        return iter(self.ops)

    @property
    def committed(self) -> frozenset[int]:
        return frozenset(op.tx for op in self.ops if isinstance(op, Commit))


def last_committed_writer(h: McHistory, p: Operation, elem: str) -> int:
    """Index of the last write of ``elem`` before ``p`` whose writer commits somewhere in ``h``."""
    return _last_committed_writer_at(h, h.position(p), elem)


def _last_committed_writer_at(h: McHistory, pos: int, elem: str) -> int:
    committed = h.commit_pos
    writes = h.writes_by_elem.get(elem, ())
    idx = bisect.bisect_left(writes, (pos, -1)) - 1
    while idx >= 0:
        _, tx = writes[idx]
        if tx in committed:
            return tx
        idx -= 1
    return 0


def interpret_mv(h: McHistory) -> MvHistory:
    """Embed an MC-history into a multiversion history.

    A write without an earlier read of the same element by its own
    transaction gets a companion read, placed just before the write.  Method
    operations become reads of the versions their producing call saw.
    """
    next_sup: dict[int, int] = {}
    for op in h.ops:
        if isinstance(op, Read):
            next_sup[op.tx] = max(next_sup.get(op.tx, 0), op.sup)

    def fresh(tx: int) -> int:
        next_sup[tx] = next_sup.get(tx, 0) + 1
        return next_sup[tx]

    out: list[VersionedOp] = []
    read_by_tx: set[tuple[int, str]] = set()
    for pos, op in enumerate(h.ops):
        if isinstance(op, Read):
            read_by_tx.add((op.tx, op.elem))
            out.append(VRead(op.tx, op.sup, op.elem, _last_committed_writer_at(h, pos, op.elem)))
        elif isinstance(op, Write):
            if (op.tx, op.elem) not in read_by_tx:
                out.append(VRead(op.tx, fresh(op.tx), op.elem, _last_committed_writer_at(h, pos, op.elem)))
            out.append(VWrite(op.tx, op.elem))
        elif isinstance(op, MethodOp):
            reads = h.call_reads.get(op.mid, ())
            if reads:
                sup = fresh(op.tx)
                for rpos, elem in reads:
                    out.append(VRead(op.tx, sup, elem, _last_committed_writer_at(h, rpos, elem)))
        else:
            out.append(op)
    return MvHistory(tuple(out))


@dataclass(frozen=True)
class VersionOrder:
    """Per element, the versions from smallest to largest (0 first)."""

    orders: Mapping[str, tuple[int, ...]]

    def __post_init__(self) -> None:
        ranks = {x: {v: i for i, v in enumerate(vs)} for x, vs in self.orders.items()}
        object.__setattr__(self, "_ranks", ranks)

    def precedes(self, elem: str, a: int, b: int) -> bool:
        """x_a << x_b."""
        ranks = self._ranks[elem]  # type: ignore[attr-defined]
        return ranks[a] < ranks[b]

    def __getitem__(self, elem: str) -> tuple[int, ...]:
        return self.orders[elem]


def build_write_version_order(mh: MvHistory) -> VersionOrder:
    orders: dict[str, list[int]] = {}
    for op in mh.ops:
        if isinstance(op, VWrite):
            orders.setdefault(op.elem, [0]).append(op.tx)
        elif isinstance(op, VRead):
            orders.setdefault(op.elem, [0])
    return VersionOrder({x: tuple(v) for x, v in orders.items()})


def is_write_version_order(mh: MvHistory, vo: VersionOrder) -> bool:
    writes = [op for op in mh.ops if isinstance(op, VWrite)]
    for x, order in vo.orders.items():
        if not order or order[0] != 0:
            return False
    for a, b in itertools.combinations(writes, 2):
        if a.elem == b.elem and not vo.precedes(a.elem, a.tx, b.tx):
            return False
    return True


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class SerializabilityGraph:
    nodes: frozenset[int]
    edges: frozenset[Edge]
    version_edges: frozenset[Edge] = field(default_factory=frozenset)

    def successors(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set())
        return adj

    def reverse_edges(self, ts: TimestampFn) -> frozenset[Edge]:
        """Edges pointing from a younger (larger ts) to an older transaction."""
        return frozenset((a, b) for a, b in self.edges if ts[a] > ts[b])

    def edge_lines(self, ts: TimestampFn | None = None) -> list[str]:
        rev = self.reverse_edges(ts) if ts is not None else frozenset()
        return [f"T{a} -> T{b}" + (" [reverse]" if (a, b) in rev else "") for a, b in sorted(self.edges)]


def mvsg(mh: MvHistory, vo: VersionOrder) -> SerializabilityGraph:
    committed = mh.committed
    edges: set[Edge] = set()
    vedges: set[Edge] = set()
    writers: dict[str, list[int]] = defaultdict(list)
    reads: list[VRead] = []
    own_writes_before: list[bool] = []
    written_by: set[tuple[int, str]] = set()
    for op in mh.ops:
        if isinstance(op, VWrite):
            writers[op.elem].append(op.tx)
            written_by.add((op.tx, op.elem))
        elif isinstance(op, VRead):
            reads.append(op)
            own_writes_before.append((op.tx, op.elem) in written_by)

    for rd, own_before in zip(reads, own_writes_before):
        k, x, l = rd.tx, rd.elem, rd.version
        # self-loop: w_k[x_k] < r_k[x_l], l != k
        if own_before and l != k and k in committed:
            edges.add((k, k))
        # reads-from
        if l != k and l in committed and k in committed:
            edges.add((l, k))
        for m in writers.get(x, ()):
            if m not in committed:
                continue
            # writer m, reader of x_l with x_m << x_l  =>  m -> l
            if m != l and l in committed and vo.precedes(x, m, l):
                edges.add((m, l))
                vedges.add((m, l))
            # reader k of x_l, writer m with x_l << x_m  =>  k -> m
            if k != m and k in committed and vo.precedes(x, l, m):
                edges.add((k, m))
                vedges.add((k, m))
    return SerializabilityGraph(committed, frozenset(edges), frozenset(vedges))


def mcsg(h: McHistory) -> SerializabilityGraph:
    committed = h.committed
    edges: set[Edge] = set()

    # conflicting read/write pairs, p < q
    readers: dict[str, set[int]] = defaultdict(set)
    writers: dict[str, set[int]] = defaultdict(set)
    for op in h.ops:
        if not isinstance(op, (Read, Write)) or op.tx not in committed:
            continue
        x, j = op.elem, op.tx
        for i in writers[x]:
            if i != j:
                edges.add((i, j))
        if isinstance(op, Write):
            for i in readers[x]:
                if i != j:
                    edges.add((i, j))
            writers[x].add(j)
        else:
            readers[x].add(j)

    writes = h.writes_by_elem
    for mpos, m in h.method_ops:
        for rpos, x in h.call_reads.get(m.mid, ()):
            for wpos, j in writes.get(x, ()):
                if j not in committed:
                    continue
                if wpos > rpos:
                    # m_i^{k,l}, r_k^l[x] < w_j[x], (i != j or w_j[x] < m_i)
                    if m.tx in committed and (m.tx != j or wpos < mpos):
                        edges.add((m.tx, j))
                elif j != m.tx and m.tx in committed:
                    # w_j[x] < r_k^l[x], m_i^{k,l}, i != j  =>  j -> i
                    edges.add((j, m.tx))
    return SerializabilityGraph(committed, frozenset(edges))


def conventional_sg(h: McHistory) -> SerializabilityGraph:
    """Classical conflict graph of an rw-history (pairwise scan)."""
    committed = h.committed
    ops = [op for op in h.ops if isinstance(op, (Read, Write)) and op.tx in committed]
    edges = set()
    for a in range(len(ops)):
        for b in range(a + 1, len(ops)):
            p, q = ops[a], ops[b]
            if p.tx != q.tx and conflicts(h, p, q):
                edges.add((p.tx, q.tx))
    return SerializabilityGraph(committed, frozenset(edges))


def is_acyclic(g: SerializabilityGraph) -> bool:
    adj = g.successors()
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(adj, WHITE)
    for root in adj:
        if color[root] != WHITE:
            continue
        color[root] = GREY
        stack = [(root, iter(adj[root]))]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
            elif color[nxt] == GREY:
                return False
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(adj[nxt])))
    return True


def _kahn_acyclic(g: SerializabilityGraph) -> bool:
    indeg: dict[int, int] = defaultdict(int)
    adj: dict[int, list[int]] = defaultdict(list)
    nodes = set(g.nodes)
    for a, b in g.edges:
        if a == b:
            return False
        adj[a].append(b)
        indeg[b] += 1
        nodes.update((a, b))
    queue = deque(n for n in nodes if indeg[n] == 0)
    seen = 0
    while queue:
        n = queue.popleft()
        seen += 1
        for b in adj[n]:
            indeg[b] -= 1
            if indeg[b] == 0:
                queue.append(b)
    return seen == len(nodes)


def transitive_closure(g: SerializabilityGraph) -> frozenset[Edge]:
    """All pairs (a, b) joined by a path of length >= 1."""
    adj = g.successors()
    out: set[Edge] = set()
    for start in adj:
        stack = list(adj[start])
        seen: set[int] = set()
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(adj[n])
        out.update((start, n) for n in seen)
    return frozenset(out)


def is_mc_serializable(h: McHistory) -> bool:
    return is_acyclic(mcsg(h))


def brute_force_mc_serializable(h: McHistory, max_writers: int = 6) -> bool:
    """Search all write version orders of MV(h) for an acyclic MVSG."""
    mh = interpret_mv(h)
    elements: dict[str, list[int]] = {}
    write_pos: dict[tuple[str, int], int] = {}
    for pos, op in enumerate(mh.ops):
        if isinstance(op, VWrite):
            elements.setdefault(op.elem, []).append(op.tx)
            write_pos[(op.elem, op.tx)] = pos
        elif isinstance(op, VRead):
            elements.setdefault(op.elem, [])
    for x, ws in elements.items():
        if len(ws) > max_writers:
            raise InstanceTooLarge(f"{len(ws)} writers of {x} exceed the limit of {max_writers}")

    def candidates(x: str) -> list[tuple[int, ...]]:
        ok = []
        for perm in itertools.permutations(elements[x]):
            if all(write_pos[(x, a)] < write_pos[(x, b)] for a, b in itertools.combinations(perm, 2)):
                ok.append((0,) + perm)
        return ok

    names = sorted(elements)
    for choice in itertools.product(*(candidates(x) for x in names)):
        vo = VersionOrder(dict(zip(names, choice)))
        if _kahn_acyclic(mvsg(mh, vo)):
            return True
    return False


# ---------------------------------------------------------------------------
# timestamp predicates


def commit_order_ts(h: McHistory) -> dict[int, int]:
    """Committed transactions ranked by commit position; the rest follow in id order."""
    ts = {tx: i + 1 for i, tx in enumerate(sorted(h.commit_pos, key=h.commit_pos.__getitem__))}
    for tx in sorted(h.txs - ts.keys()):
        ts[tx] = len(ts) + 1
    return ts


def identity_ts(h: McHistory) -> dict[int, int]:
    return {tx: tx for tx in h.txs}


def is_t_ordered(h: McHistory, ts: TimestampFn) -> bool:
    """Conflicting operations of live-or-committed transactions follow timestamp order.

    Transactions missing from ``ts`` are ignored.
    """
    aborted = h.abort_pos
    max_write: dict[str, int] = {}
    max_any: dict[str, int] = {}
    for op in h.ops:
        if isinstance(op, (Commit, Abort)) or op.tx in aborted or op.tx not in ts:
            continue
        t = ts[op.tx]
        elems = data_elements(h, op)
        for x in elems:
            if isinstance(op, Write):
                if max_any.get(x, 0) > t:
                    return False
            elif max_write.get(x, 0) > t:
                return False
        for x in elems:
            max_any[x] = max(max_any.get(x, 0), t)
            if isinstance(op, Write):
                max_write[x] = max(max_write.get(x, 0), t)
    return True


def ts_fit_all(h: McHistory, ts: TimestampFn) -> dict[int, int]:
    """Fitting timestamps of all committed transactions."""
    committed = h.committed
    deps: dict[int, set[int]] = defaultdict(set)
    for _, m in h.method_ops:
        if m.tx not in committed:
            continue
        for rpos, x in h.call_reads.get(m.mid, ()):
            for wpos, j in h.writes_by_elem.get(x, ()):
                if wpos > rpos and j in committed and ts[j] < ts[m.tx]:
                    deps[m.tx].add(j)
    fit: dict[int, int] = {}
    for t in sorted(committed, key=ts.__getitem__):
        fit[t] = min([ts[t]] + [fit[j] for j in deps[t]])
    return fit


def ts_fit(h: McHistory, ts: TimestampFn, t: int) -> int:
    if t not in h.committed:
        raise ValueError(f"T{t} is not committed")
    return ts_fit_all(h, ts)[t]


def is_t_fitting(h: McHistory, ts: TimestampFn) -> bool:
    fit = ts_fit_all(h, ts)
    return all(ts[i] < fit[j] for i, j in mcsg(h).edges if ts[i] < ts[j])


def is_irreflexive(h: McHistory) -> bool:
    aborted = h.abort_pos
    for mpos, m in h.method_ops:
        if m.tx in aborted:
            continue
        for rpos, x in h.call_reads.get(m.mid, ()):
            for wpos, j in h.writes_by_elem.get(x, ()):
                if j == m.tx and rpos < wpos < mpos:
                    return False
    return True


def is_rm_ordered(h: McHistory, ts: TimestampFn) -> bool:
    """w_i[x] < r_k^l[x] < m_j^{k,l} with i != j forces ts(i) < ts(j) unless one aborts."""
    aborted = h.abort_pos
    for _, m in h.method_ops:
        j = m.tx
        if j in aborted:
            continue
        for rpos, x in h.call_reads.get(m.mid, ()):
            for wpos, i in h.writes_by_elem.get(x, ()):
                if wpos >= rpos:
                    break
                if i != j and i not in aborted and not ts[i] < ts[j]:
                    return False
    return True


def violations_summary(h: McHistory, ts: TimestampFn | None = None) -> dict[str, bool]:
    """Evaluate the OCTP soundness predicates on one history."""
    ts = dict(ts) if ts is not None else commit_order_ts(h)
    rw = rw_projection(h)
    return {
        "mc-serializable": is_mc_serializable(h),
        "irreflexive": is_irreflexive(h),
        "rm-ordered": is_rm_ordered(h, ts),
        "t-fitting": is_t_fitting(h, ts),
        "rw-t-ordered": is_t_ordered(rw, ts),
    }

