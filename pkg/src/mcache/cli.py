"""``mcache`` command line: check, interpret, fuzz, simulate.

Exit codes: 0 success, 1 a checked property fails, 2 usage or parse error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from .analysis import (
    build_write_version_order,
    commit_order_ts,
    interpret_mv,
    is_mc_serializable,
    is_irreflexive,
    is_rm_ordered,
    is_t_fitting,
    is_t_ordered,
    mcsg,
    mvsg,
    ts_fit_all,
)
from .fuzz import FuzzLimits, run_fuzz
from .history import HistoryError, McHistory, format_history, parse_history
from .recovery import is_aca, is_recoverable, is_strict

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

PROPERTIES: dict[str, Callable[[McHistory, dict], bool]] = {
    "mc-serializable": lambda h, ts: is_mc_serializable(h),
    "recoverable": lambda h, ts: is_recoverable(h),
    "aca": lambda h, ts: is_aca(h),
    "strict": lambda h, ts: is_strict(h),
    "t-ordered": lambda h, ts: is_t_ordered(h, ts),
    "t-fitting": lambda h, ts: is_t_fitting(h, ts),
    "irreflexive": lambda h, ts: is_irreflexive(h),
    "rm-ordered": lambda h, ts: is_rm_ordered(h, ts),
}


class UsageError(Exception):
    pass


def _read_history(path: str) -> McHistory:
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    return parse_history(text)


def _timestamps(h: McHistory, text: str) -> dict[int, int]:
    """``commit-order`` or an explicit list such as ``1:3,2:1,3:2`` or ``3,1,2``."""
    if text == "commit-order":
        return commit_order_ts(h)
    ts: dict[int, int] = {}
    try:
        parts = [p for p in text.split(",") if p.strip()]
        if all(":" in p for p in parts):
            for p in parts:
                tx, v = p.split(":")
                ts[int(tx.strip().lstrip("T"))] = int(v)
        else:
            for i, p in enumerate(parts, start=1):
                ts[i] = int(p)
    except ValueError as exc:
        raise UsageError(f"bad --ts value {text!r}") from exc
    missing = sorted(h.txs - ts.keys())
    if missing:
        raise UsageError(f"--ts lacks transactions {missing}")
    return ts


def cmd_check(args: argparse.Namespace) -> int:
    h = _read_history(args.file)
    ts = _timestamps(h, args.ts)
    props = args.property or list(PROPERTIES)
    ok = True
    for name in props:
        verdict = PROPERTIES[name](h, ts)
        ok &= verdict
        print(f"{name}: {'pass' if verdict else 'fail'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_interpret(args: argparse.Namespace) -> int:
    h = _read_history(args.file)
    ts = _timestamps(h, args.ts)
    mv = interpret_mv(h)
    print("MV:")
    if mv.ops:
        print(f"  {mv}")
    print("MVSG:")
    for line in mvsg(mv, build_write_version_order(mv)).edge_lines(ts):
        print(f"  {line}")
    print("MCSG:")
    for line in mcsg(h).edge_lines(ts):
        print(f"  {line}")
    print("ts_fit:")
    fit = ts_fit_all(h, ts)
    for tx in sorted(h.txs, key=lambda t: (ts[t], t)):
        print(f"  T{tx} ts={ts[tx]} ts_fit={fit.get(tx, ts[tx])}")
    return EXIT_OK


def cmd_fuzz(args: argparse.Namespace) -> int:
    limits = FuzzLimits(max_txs=args.max_txs, max_elements=args.max_elements, max_ops=args.max_ops)
    report = run_fuzz(args.seed, args.count, limits)
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_simulate(args: argparse.Namespace) -> int:
    from .simulation import WorkloadConfig, simulate, write_csv
    from .simulation.workload import PROTOCOLS

    protocols = [args.protocol] if args.protocol else [p.strip() for p in args.protocols.split(",") if p.strip()]
    unknown = [p for p in protocols if p not in PROTOCOLS]
    if unknown:
        raise UsageError(f"unknown protocol(s) {unknown}; choose from {', '.join(PROTOCOLS)}")
    base = WorkloadConfig.desk() if args.desk else WorkloadConfig()
    overrides = {
        "seed": args.seed,
        "threads": args.threads,
        "duration": args.duration,
        "warmup": args.warmup,
        "virtual_time": args.virtual_time,
        "item_count": args.items,
        "cache_capacity": args.cache_size,
        "p_read": args.p_read,
        "p_commit": args.p_commit,
        "lognormal_mu": args.mu,
        "lognormal_sigma": args.sigma,
        "latency": args.latency,
        "think_time": args.think_time,
        "v_capacity": args.v_capacity,
        "recovery_locking": not args.no_recovery_locking,
        "record_trace": bool(args.trace_out),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        configs = [base.with_(protocol=p, **overrides) for p in protocols]
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    rows = []
    for cfg in configs:
        result = simulate(cfg)
        rows.append(result.metrics.row(cfg))
        if args.trace_out and result.trace is not None:
            out = Path(args.trace_out)
            if len(configs) > 1:
                out = out.with_name(f"{out.stem}.{cfg.protocol}{out.suffix}")
            out.write_text(format_history(result.trace) + "\n")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)
    return EXIT_OK


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcache", description="MC-history analysis and cache simulation")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="evaluate properties of a history file")
    c.add_argument("file", help="history file, '-' for stdin")
    c.add_argument("--property", action="append", choices=sorted(PROPERTIES))
    c.add_argument("--ts", default="commit-order", help="commit-order or a list like 1:2,2:1")
    c.set_defaults(func=cmd_check)

    i = sub.add_parser("interpret", help="print MV image, graphs and ts_fit table")
    i.add_argument("file")
    i.add_argument("--ts", default="commit-order")
    i.set_defaults(func=cmd_interpret)

    f = sub.add_parser("fuzz", help="cross-check the analyses on random histories")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--count", type=int, default=1000)
    f.add_argument("--max-txs", type=int, default=5)
    f.add_argument("--max-elements", type=int, default=4)
    f.add_argument("--max-ops", type=int, default=14)
    f.set_defaults(func=cmd_fuzz)

    s = sub.add_parser("simulate", help="run the item-service workload")
    s.add_argument("--protocols", default="octp,occ_like")
    s.add_argument("--protocol", help="single protocol; overrides --protocols")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--warmup", type=float)
    s.add_argument("--virtual-time", dest="virtual_time", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--items", type=int)
    s.add_argument("--cache-size", type=int)
    s.add_argument("--p-read", type=_probability)
    s.add_argument("--p-commit", type=_probability)
    s.add_argument("--mu", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--latency", type=float)
    s.add_argument("--think-time", type=float)
    s.add_argument("--v-capacity", type=int)
    s.add_argument("--no-recovery-locking", action="store_true")
    s.add_argument("--desk", action="store_true", help="small item table and cache, 30 s window")
    s.add_argument("--out")
    s.add_argument("--trace-out")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    level = getattr(logging, os.environ.get("MCACHE_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING, stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (HistoryError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
