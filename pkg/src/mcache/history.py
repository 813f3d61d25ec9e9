"""MC-transactions and MC-histories.

A history is a totally ordered sequence of operations.  Besides the usual
reads, writes, commits and aborts it contains *method operations*
``m<i>.<k>.<l>``: transaction ``i`` used a cached method result that was
computed by call ``l`` of transaction ``k``.

Text format (whitespace separated, ``#`` starts a comment line)::

    r1.4[y] r1.4[x] c1 w2[x] c2 m3.1.4 r3.5[x] c3
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Union

ELEMENT_RE = re.compile(r"^[A-Za-z0-9_:]+$")

_TOKEN_RE = re.compile(
    r"""
    r(?P<r_tx>\d+)\.(?P<r_sup>\d+)\[(?P<r_elem>[A-Za-z0-9_:]+)\]
  | w(?P<w_tx>\d+)\[(?P<w_elem>[A-Za-z0-9_:]+)\]
  | m(?P<m_tx>\d+)\.(?P<m_k>\d+)\.(?P<m_l>\d+)
  | c(?P<c_tx>\d+)
  | a(?P<a_tx>\d+)
    """,
    re.VERBOSE,
)


class HistoryError(ValueError):
    """Raised for malformed history text or an invalid operation sequence."""

    def __init__(self, message: str, position: int | None = None, token: str | None = None):
        self.position = position
        self.token = token
        detail = message
        if token is not None:
            detail = f"{message} at token {position} ({token!r})"
        elif position is not None:
            detail = f"{message} at token {position}"
        super().__init__(detail)


@dataclass(frozen=True)
class Read:
    tx: int
    sup: int
    elem: str

    def __str__(self) -> str:
        return f"r{self.tx}.{self.sup}[{self.elem}]"


@dataclass(frozen=True)
class Write:
    tx: int
    elem: str

    def __str__(self) -> str:
        return f"w{self.tx}[{self.elem}]"


@dataclass(frozen=True)
class MethodOp:
    """Use of the cached result of call ``call`` of transaction ``producer``."""

    tx: int
    producer: int
    call: int

    @property
    def mid(self) -> tuple[int, int]:
        return (self.producer, self.call)

    def __str__(self) -> str:
        return f"m{self.tx}.{self.producer}.{self.call}"


@dataclass(frozen=True)
class Commit:
    tx: int

    def __str__(self) -> str:
        return f"c{self.tx}"


@dataclass(frozen=True)
class Abort:
    tx: int

    def __str__(self) -> str:
        return f"a{self.tx}"


Operation = Union[Read, Write, MethodOp, Commit, Abort]
TERMINALS = (Commit, Abort)


def parse_operation(token: str, position: int = 0) -> Operation:
    match = _TOKEN_RE.fullmatch(token)
    if match is None:
        raise HistoryError("syntax error", position, token)
    g = match.groupdict()
    if g["r_tx"] is not None:
        op: Operation = Read(int(g["r_tx"]), int(g["r_sup"]), g["r_elem"])
    elif g["w_tx"] is not None:
        op = Write(int(g["w_tx"]), g["w_elem"])
    elif g["m_tx"] is not None:
        op = MethodOp(int(g["m_tx"]), int(g["m_k"]), int(g["m_l"]))
    elif g["c_tx"] is not None:
        op = Commit(int(g["c_tx"]))
    else:
        op = Abort(int(g["a_tx"]))
    numbers = [op.tx]
    if isinstance(op, Read):
        numbers.append(op.sup)
    elif isinstance(op, MethodOp):
        numbers += [op.producer, op.call]
    if any(n <= 0 for n in numbers):
        raise HistoryError("transaction ids and superscripts must be positive", position, token)
    return op


@dataclass(frozen=True)
class McHistory:
    """An immutable, validated MC-history.

    Construction checks that terminals come last per transaction, that no
    operation occurs twice, and that every method operation follows all
    reads of the call it refers to.
    """

    ops: tuple[Operation, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.ops, tuple):
            object.__setattr__(self, "ops", tuple(self.ops))
        self._validate()

    def _validate(self) -> None:
        terminated: set[int] = set()
        seen: set[Operation] = set()
        referenced: set[tuple[int, int]] = set()
        for pos, op in enumerate(self.ops):
            if op in seen:
                raise HistoryError("duplicate operation", pos, str(op))
            seen.add(op)
            if op.tx <= 0:
                raise HistoryError("transaction ids must be positive", pos, str(op))
            if op.tx in terminated:
                raise HistoryError("operation after terminal", pos, str(op))
            if isinstance(op, TERMINALS):
                terminated.add(op.tx)
            elif isinstance(op, MethodOp):
                referenced.add(op.mid)
            elif isinstance(op, Read) and (op.tx, op.sup) in referenced:
                raise HistoryError("read follows a method operation referring to its call", pos, str(op))
        txs = self.txs
        for pos, op in enumerate(self.ops):
            if isinstance(op, MethodOp) and op.producer not in txs:
                raise HistoryError("method operation refers to unknown transaction", pos, str(op))

    def __iter__(self) -> Iterator[Operation]:
        return iter(self.ops)

    def __len__(self) -> int:
        return len(self.ops)

    def __str__(self) -> str:
        return format_history(self)

    @cached_property
    def txs(self) -> frozenset[int]:
        return frozenset(op.tx for op in self.ops)

    @cached_property
    def positions(self) -> dict[Operation, int]:
        return {op: pos for pos, op in enumerate(self.ops)}

    def position(self, op: Operation) -> int:
        try:
            return self.positions[op]
        except KeyError:
            raise HistoryError(f"operation {op} does not occur in the history") from None

    @cached_property
    def commit_pos(self) -> dict[int, int]:
        return {op.tx: pos for pos, op in enumerate(self.ops) if isinstance(op, Commit)}

    @cached_property
    def abort_pos(self) -> dict[int, int]:
        return {op.tx: pos for pos, op in enumerate(self.ops) if isinstance(op, Abort)}

    @property
    def committed(self) -> frozenset[int]:
        return frozenset(self.commit_pos)

    @property
    def aborted(self) -> frozenset[int]:
        return frozenset(self.abort_pos)

    @cached_property
    def call_reads(self) -> dict[tuple[int, int], tuple[tuple[int, str], ...]]:
        """(k, l) -> ((position, element), ...) for every read r_k^l[x]."""
        out: dict[tuple[int, int], list[tuple[int, str]]] = {}
        for pos, op in enumerate(self.ops):
            if isinstance(op, Read):
                out.setdefault((op.tx, op.sup), []).append((pos, op.elem))
        return {key: tuple(v) for key, v in out.items()}

    @cached_property
    def writes_by_elem(self) -> dict[str, tuple[tuple[int, int], ...]]:
        """element -> ((position, tx), ...) in history order."""
        out: dict[str, list[tuple[int, int]]] = {}
        for pos, op in enumerate(self.ops):
            if isinstance(op, Write):
                out.setdefault(op.elem, []).append((pos, op.tx))
        return {key: tuple(v) for key, v in out.items()}

    @cached_property
    def method_ops(self) -> tuple[tuple[int, MethodOp], ...]:
        return tuple((pos, op) for pos, op in enumerate(self.ops) if isinstance(op, MethodOp))

    def is_complete(self) -> bool:
        """True when every transaction has committed or aborted."""
        return len(self.commit_pos) + len(self.abort_pos) == len(self.txs)

    def terminated_projection(self) -> "McHistory":
        """Drop the operations of transactions that never terminate.

        Method operations that refer to a dropped producer are dropped too,
        so the result stays a valid history.
        """
        done = set(self.commit_pos) | set(self.abort_pos)
        kept = [op for op in self.ops if op.tx in done]
        while True:
            present = {op.tx for op in kept}
            filtered = [op for op in kept if not (isinstance(op, MethodOp) and op.producer not in present)]
            if len(filtered) == len(kept):
                return McHistory(tuple(kept))
            kept = filtered


def parse_history(text: str) -> McHistory:
    """Whitespace-separated tokens; ``#`` starts a comment running to end of line."""
    tokens: list[str] = []
    for line in text.splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    ops = [parse_operation(tok, pos) for pos, tok in enumerate(tokens)]
    return McHistory(tuple(ops))


def format_history(h: McHistory | Iterable[Operation]) -> str:
    return " ".join(str(op) for op in h)


def data_elements(h: McHistory, p: Operation) -> frozenset[str]:
    """d(p): the elements an operation touches in ``h``."""
    if isinstance(p, (Read, Write)):
        return frozenset((p.elem,))
    if isinstance(p, MethodOp):
        return frozenset(x for _, x in h.call_reads.get(p.mid, ()))
    return frozenset()


def conflicts(h: McHistory, p: Operation, q: Operation) -> bool:
    if not data_elements(h, p) & data_elements(h, q):
        return False
    p_w, q_w = isinstance(p, Write), isinstance(q, Write)
    if p.tx != q.tx and (p_w or q_w):
        return True
    return (p_w and isinstance(q, MethodOp)) or (isinstance(p, MethodOp) and q_w)


def rw_projection(h: McHistory) -> McHistory:
    return McHistory(tuple(op for op in h.ops if not isinstance(op, MethodOp)))


class HistoryBuilder:
    """Accumulates a trace one operation at a time.

    Repeated operations (a second write of the same element by the same
    transaction, a second hit on the same cached result) are recorded once,
    at their first occurrence.  Not thread-safe; callers serialize access.
    """

    def __init__(self) -> None:
        self._ops: list[Operation] = []
        self._seen: set[Operation] = set()

    def append(self, op: Operation) -> bool:
        if op in self._seen:
            return False
        self._seen.add(op)
        self._ops.append(op)
        return True

    def __len__(self) -> int:
        return len(self._ops)

    @property
    def ops(self) -> tuple[Operation, ...]:
        return tuple(self._ops)

    def build(self) -> McHistory:
        return McHistory(tuple(self._ops))
