"""Random MC-history generation and property checking with counterexample shrinking."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .analysis import (
    SerializabilityGraph,
    build_write_version_order,
    brute_force_mc_serializable,
    commit_order_ts,
    conventional_sg,
    interpret_mv,
    is_acyclic,
    is_irreflexive,
    is_rm_ordered,
    is_t_fitting,
    is_t_ordered,
    mcsg,
    mvsg,
    transitive_closure,
)
from .history import (
    Abort,
    Commit,
    HistoryError,
    McHistory,
    MethodOp,
    Operation,
    Read,
    Write,
    rw_projection,
)
from .recovery import is_aca, is_recoverable, is_strict

McsgFn = Callable[[McHistory], SerializabilityGraph]


@dataclass(frozen=True)
class FuzzLimits:
    max_txs: int = 5
    max_elements: int = 4
    max_ops: int = 14
    p_method: float = 0.25
    p_write: float = 0.3
    p_abort: float = 0.15
    p_unterminated: float = 0.05
    rw_only: bool = False

    def __post_init__(self) -> None:
        if min(self.max_txs, self.max_elements, self.max_ops) < 1:
            raise ValueError("limits must be positive")


def random_history(rng: random.Random, limits: FuzzLimits = FuzzLimits()) -> McHistory:
    """A valid MC-history built by random interleaving of up to ``max_txs`` transactions."""
    n_tx = rng.randint(1, limits.max_txs)
    elems = [chr(ord("x") + i) if i < 3 else f"e{i}" for i in range(rng.randint(1, limits.max_elements))]
    sup = {t: 1 for t in range(1, n_tx + 1)}
    closed: set[tuple[int, int]] = set()  # calls already referenced by a method op
    calls_with_reads: list[tuple[int, int]] = []
    seen: set[Operation] = set()
    live = list(range(1, n_tx + 1))
    ops: list[Operation] = []
    budget = limits.max_ops - n_tx  # keep room for terminals
    attempts = 0
    while len(ops) < budget and live and attempts < 10 * limits.max_ops:
        attempts += 1
        t = rng.choice(live)
        roll = rng.random()
        op: Operation
        if not limits.rw_only and roll < limits.p_method and calls_with_reads:
            k, l = rng.choice(calls_with_reads)
            op = MethodOp(t, k, l)
            if op in seen:
                continue
            closed.add((k, l))
        elif roll < limits.p_method + limits.p_write:
            op = Write(t, rng.choice(elems))
        else:
            if (t, sup[t]) in closed or rng.random() < 0.3:
                sup[t] += 1
            op = Read(t, sup[t], rng.choice(elems))
            if op not in seen and (t, sup[t]) not in calls_with_reads:
                calls_with_reads.append((t, sup[t]))
        if op in seen:
            continue
        seen.add(op)
        ops.append(op)
        # occasionally terminate early so terminals interleave with other work
        if rng.random() < 0.1 and len(live) > 1:
            live.remove(t)
            ops.append(Abort(t) if rng.random() < limits.p_abort else Commit(t))
    for t in live:
        if rng.random() < limits.p_unterminated:
            continue
        ops.append(Abort(t) if rng.random() < limits.p_abort else Commit(t))
    return McHistory(tuple(ops))


def random_histories(seed: int, count: int, limits: FuzzLimits = FuzzLimits()) -> Iterable[McHistory]:
    rng = random.Random(seed)
    for _ in range(count):
        yield random_history(rng, limits)


# -- checks ---------------------------------------------------------------

Check = Callable[[McHistory], bool]


def check_mcsg_vs_mvsg(h: McHistory, mcsg_impl: McsgFn = mcsg) -> bool:
    mv = interpret_mv(h)
    return transitive_closure(mcsg_impl(h)) == transitive_closure(mvsg(mv, build_write_version_order(mv)))


def check_rw_conventional(h: McHistory) -> bool:
    rw = rw_projection(h)
    mv = interpret_mv(rw)
    return transitive_closure(conventional_sg(rw)) == transitive_closure(mvsg(mv, build_write_version_order(mv)))


def check_oracle(h: McHistory, mcsg_impl: McsgFn = mcsg) -> bool:
    return is_acyclic(mcsg_impl(h)) == brute_force_mc_serializable(h)


def check_timestamp_sufficiency(h: McHistory, mcsg_impl: McsgFn = mcsg) -> bool:
    """The four timestamp predicates together imply MC-serializability."""
    ts = commit_order_ts(h)
    premises = (
        is_irreflexive(h)
        and is_t_fitting(h, ts)
        and is_rm_ordered(h, ts)
        and is_t_ordered(rw_projection(h), ts)
    )
    return not premises or is_acyclic(mcsg_impl(h))


def check_recovery_inclusions(h: McHistory) -> bool:
    strict, aca = is_strict(h), is_aca(h)
    return (not strict or aca) and (not aca or is_recoverable(h))


def check_strict_decomposition(h: McHistory) -> bool:
    return is_strict(h) == (is_aca(h) and is_strict(rw_projection(h)))


def default_checks(mcsg_impl: McsgFn = mcsg) -> dict[str, Check]:
    return {
        "mcsg-closure": lambda h: check_mcsg_vs_mvsg(h, mcsg_impl),
        "rw-closure": check_rw_conventional,
        "oracle": lambda h: check_oracle(h, mcsg_impl),
        "timestamp-sufficiency": lambda h: check_timestamp_sufficiency(h, mcsg_impl),
        "recovery-inclusions": check_recovery_inclusions,
        "strict-decomposition": check_strict_decomposition,
    }


# -- shrinking -------------------------------------------------------------


def minimize(h: McHistory, still_fails: Check) -> McHistory:
    """Greedily drop single operations while the failure persists."""
    ops = list(h.ops)
    changed = True
    while changed:
        changed = False
        for i in range(len(ops)):
            trial = ops[:i] + ops[i + 1 :]
            try:
                cand = McHistory(tuple(trial))
            except HistoryError:
                continue
            try:
                fails = not still_fails(cand)
            except Exception:
                continue
            if fails:
                ops = trial
                changed = True
                break
    return McHistory(tuple(ops))


@dataclass
class Counterexample:
    check: str
    history: McHistory
    minimized: McHistory


@dataclass
class FuzzReport:
    seed: int
    count: int
    checked: int = 0
    failures: dict = field(default_factory=dict)
    first: Optional[Counterexample] = None

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [f"seed={self.seed} histories={self.checked}"]
        if self.ok:
            lines.append("all checks passed")
        else:
            for name, n in sorted(self.failures.items()):
                lines.append(f"FAIL {name}: {n} histories")
            assert self.first is not None
            lines.append(f"first counterexample ({self.first.check}): {self.first.history}")
            lines.append(f"minimized: {self.first.minimized}")
        return "\n".join(lines)


def run_fuzz(
    seed: int = 0,
    count: int = 1000,
    limits: FuzzLimits = FuzzLimits(),
    checks: dict[str, Check] | None = None,
    mcsg_impl: McsgFn = mcsg,
) -> FuzzReport:
    checks = checks if checks is not None else default_checks(mcsg_impl)
    report = FuzzReport(seed, count)
    for h in random_histories(seed, count, limits):
        report.checked += 1
        for name, check in checks.items():
            if check(h):
                continue
            report.failures[name] = report.failures.get(name, 0) + 1
            if report.first is None:
                report.first = Counterexample(name, h, minimize(h, check))
    return report
