import random

from mcache.analysis import SerializabilityGraph, mcsg
from mcache.fuzz import FuzzLimits, minimize, random_history, run_fuzz
from mcache.history import MethodOp, parse_history


def test_default_run_passes():
    report = run_fuzz(seed=11, count=300)
    assert report.ok and report.checked == 300
    assert "all checks passed" in report.summary()


def test_zero_count():
    report = run_fuzz(seed=0, count=0)
    assert report.ok and report.checked == 0


def test_limits_respected():
    limits = FuzzLimits(max_txs=3, max_elements=2, max_ops=8)
    rng = random.Random(5)
    for _ in range(300):
        h = random_history(rng, limits)
        assert len(h.txs) <= 3
        assert len(h.ops) <= 8


def test_rw_only_limits_produce_no_method_ops():
    rng = random.Random(2)
    for _ in range(100):
        h = random_history(rng, FuzzLimits(rw_only=True))
        assert not any(isinstance(o, MethodOp) for o in h.ops)


def broken_mcsg(h):
    g = mcsg(h)
    return SerializabilityGraph(g.nodes, frozenset((a, b) for a, b in g.edges if a < b))


def test_mutated_mcsg_is_caught_and_minimized():
    report = run_fuzz(seed=0, count=500, mcsg_impl=broken_mcsg)
    assert not report.ok
    first = report.first
    assert len(first.minimized.ops) <= len(first.history.ops)
    assert "FAIL" in report.summary()


def test_minimize_keeps_failure():
    h = parse_history("r1.1[x] w2[y] w3[x] c1 c2 c3")

    def fails(g):
        return any(o.tx == 3 for o in g.ops) and any(o.tx == 1 for o in g.ops)

    small = minimize(h, lambda g: not fails(g))
    assert fails(small) and len(small.ops) < len(h.ops)
