"""Reads-from relation and recovery qualities of MC-histories."""
from __future__ import annotations

from dataclasses import dataclass

from .history import McHistory, MethodOp, Operation, Read, rw_projection


@dataclass(frozen=True, order=True)
class ReadsFromEntry:
    reader: int
    elem: str
    writer: int
    via: str  # textual form of the read or method operation

    def __str__(self) -> str:
        return f"(T{self.reader}, {self.elem}, T{self.writer}, {self.via})"


def _source_writer(h: McHistory, rpos: int, elem: str) -> tuple[int, int] | None:
    """(position, tx) of the write a read at ``rpos`` reads from, skipping writes aborted before it."""
    aborts = h.abort_pos
    for wpos, tx in reversed(h.writes_by_elem.get(elem, ())):
        if wpos >= rpos:
            continue
        if tx in aborts and aborts[tx] < rpos:
            continue
        return wpos, tx
    return None


def _reads_from_ops(h: McHistory) -> list[tuple[int, str, int, Operation]]:
    methods_by_mid: dict[tuple[int, int], list[MethodOp]] = {}
    for _, m in h.method_ops:
        methods_by_mid.setdefault(m.mid, []).append(m)
    out = []
    for rpos, op in enumerate(h.ops):
        if not isinstance(op, Read):
            continue
        src = _source_writer(h, rpos, op.elem)
        if src is None:
            continue
        writer = src[1]
        out.append((op.tx, op.elem, writer, op))
        for m in methods_by_mid.get((op.tx, op.sup), ()):
            if m.tx != op.tx:
                out.append((m.tx, op.elem, writer, m))
    return out


def reads_from(h: McHistory) -> frozenset[ReadsFromEntry]:
    return frozenset(ReadsFromEntry(i, x, j, str(p)) for i, x, j, p in _reads_from_ops(h))


def is_recoverable(h: McHistory) -> bool:
    commits = h.commit_pos
    for i, _, j, _ in _reads_from_ops(h):
        if i != j and i in commits and not (j in commits and commits[j] < commits[i]):
            return False
    return True


def is_aca(h: McHistory) -> bool:
    commits = h.commit_pos
    for i, _, j, p in _reads_from_ops(h):
        if i != j and not (j in commits and commits[j] < h.position(p)):
            return False
    return True


def is_strict(h: McHistory) -> bool:
    if not is_aca(h):
        return False
    commits, aborts = h.commit_pos, h.abort_pos
    for writes in h.writes_by_elem.values():
        for a, (pos_j, j) in enumerate(writes):
            end_j = min(commits.get(j, len(h)), aborts.get(j, len(h)))
            for pos_i, i in writes[a + 1:]:
                if i != j and end_j > pos_i:
                    return False
    return True


@dataclass(frozen=True)
class AcaDecomposition:
    """Outcome of checking the ACA decomposition on one history."""

    predicate_ok: bool
    holds: bool
    offending: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.predicate_ok and self.holds


def early_hit_offenders(h: McHistory) -> tuple[MethodOp, ...]:
    """Method operations m_j^{i,l}, j != i, placed before c_i although T_i read its own write in call l."""
    commits = h.commit_pos
    self_reads: set[tuple[int, int]] = set()
    for i, _, j, p in _reads_from_ops(h):
        if i == j and isinstance(p, Read) and p.tx == i:
            self_reads.add((i, p.sup))
    bad = []
    for mpos, m in h.method_ops:
        if m.mid in self_reads and m.tx != m.producer:
            c = commits.get(m.producer)
            if c is None or c > mpos:
                bad.append(m)
    return tuple(bad)


def check_aca_decomposition(h: McHistory) -> AcaDecomposition:
    """Check that h is ACA exactly when its rw-projection is, provided no hit uses an uncommitted producer's result.

    When the side condition fails the result is falsy and names the
    offending method operations; ``holds`` then reports whether the
    equivalence happens to hold anyway.
    """
    offenders = early_hit_offenders(h)
    holds = is_aca(h) == is_aca(rw_projection(h))
    return AcaDecomposition(not offenders, holds, tuple(str(m) for m in offenders))


def is_strict_via_decomposition(h: McHistory) -> bool:
    """Strictness computed as ACA of h plus strictness of its rw-projection."""
    return is_aca(h) and is_strict(rw_projection(h))


__all__ = [
    "ReadsFromEntry",
    "reads_from",
    "is_recoverable",
    "is_aca",
    "is_strict",
    "check_aca_decomposition",
    "AcaDecomposition",
    "early_hit_offenders",
    "is_strict_via_decomposition",
]
