import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcache.fuzz import FuzzLimits, random_history
from mcache.history import (
    Abort,
    Commit,
    HistoryBuilder,
    HistoryError,
    McHistory,
    MethodOp,
    Read,
    Write,
    conflicts,
    data_elements,
    format_history,
    parse_history,
    parse_operation,
    rw_projection,
)

from .conftest import EXAMPLES

seeds = st.integers(min_value=0, max_value=2**32)


def op(text):
    return parse_operation(text)


class TestParse:
    def test_h1_tokens(self, h1):
        assert h1.ops == (
            Read(1, 4, "y"),
            Read(1, 4, "x"),
            Commit(1),
            Write(2, "x"),
            Commit(2),
            MethodOp(3, 1, 4),
            Read(3, 5, "x"),
            Commit(3),
        )
        assert h1.txs == {1, 2, 3}

    def test_empty(self):
        h = parse_history("")
        assert h.ops == () and h.txs == frozenset()

    def test_operation_after_terminal(self):
        with pytest.raises(HistoryError) as err:
            parse_history("c1 r1.1[x]")
        assert err.value.token == "r1.1[x]"
        assert err.value.position == 1

    def test_syntax_error_reports_position(self):
        with pytest.raises(HistoryError) as err:
            parse_history("r1.1[x] q2 c1")
        assert err.value.position == 1

    @pytest.mark.parametrize(
        "text",
        [
            "r1.1[x] r1.1[x]",  # duplicate
            "m2.1.1 r1.1[x] c1 c2",  # read after a hit on its call
            "r1.1[x] m2.5.1 c2",  # unknown producer
            "r0.1[x]",
            "c1 a1",
        ],
    )
    def test_invalid(self, text):
        with pytest.raises(HistoryError):
            parse_history(text)

    def test_comments_and_newlines(self):
        h = parse_history("# a comment\nr1.1[x]\n  w1[x] # trailing\nc1\n")
        assert format_history(h) == "r1.1[x] w1[x] c1"

    def test_colon_in_element_names(self):
        h = parse_history("r1.1[item:42] c1")
        assert h.ops[0] == Read(1, 1, "item:42")

    def test_method_op_without_reads_is_valid(self):
        h = parse_history("w1[x] c1 m2.1.7 c2")
        assert data_elements(h, MethodOp(2, 1, 7)) == frozenset()


class TestFormat:
    def test_h1(self, h1):
        assert format_history(h1) == EXAMPLES["H1"]

    def test_empty(self):
        assert format_history(McHistory()) == ""

    @given(seeds)
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, seed):
        h = random_history(random.Random(seed), FuzzLimits())
        assert parse_history(format_history(h)) == h


class TestDataElements:
    def test_method_op_covers_producer_reads(self, h1):
        assert data_elements(h1, op("m3.1.4")) == {"x", "y"}

    def test_write(self, h1):
        assert data_elements(h1, op("w2[x]")) == {"x"}

    def test_commit(self, h1):
        assert data_elements(h1, op("c1")) == frozenset()


class TestConflicts:
    def test_h1_pairs(self, h1):
        assert conflicts(h1, op("r1.4[x]"), op("w2[x]"))
        assert conflicts(h1, op("m3.1.4"), op("w2[x]"))
        assert not conflicts(h1, op("r1.4[x]"), op("r3.5[x]"))

    def test_write_and_method_op_of_same_tx(self, examples):
        assert conflicts(examples["H2"], op("w2[x]"), op("m2.1.1"))

    def test_read_with_itself(self, h1):
        assert not conflicts(h1, op("r1.4[x]"), op("r1.4[x]"))

    def test_same_tx_read_write(self):
        h = parse_history("r1.1[x] w1[x] c1")
        assert not conflicts(h, op("r1.1[x]"), op("w1[x]"))

    @given(seeds)
    @settings(max_examples=100, deadline=None)
    def test_symmetric(self, seed):
        h = random_history(random.Random(seed), FuzzLimits())
        for p in h.ops:
            for q in h.ops:
                assert conflicts(h, p, q) == conflicts(h, q, p)


class TestRwProjection:
    def test_h1(self, h1):
        assert format_history(rw_projection(h1)) == "r1.4[y] r1.4[x] c1 w2[x] c2 r3.5[x] c3"

    def test_fixed_point_without_method_ops(self):
        h = parse_history("r1.1[x] w2[x] c1 c2")
        assert rw_projection(h) == h

    @given(seeds)
    @settings(max_examples=200, deadline=None)
    def test_idempotent_and_order_preserving(self, seed):
        h = random_history(random.Random(seed), FuzzLimits())
        rw = rw_projection(h)
        assert rw_projection(rw) == rw
        assert list(rw.ops) == [o for o in h.ops if not isinstance(o, MethodOp)]


class TestDerived:
    def test_terminated_projection_drops_live_and_orphaned_hits(self):
        h = parse_history("r1.1[x] r2.1[y] m3.2.1 c1 c3")
        t = h.terminated_projection()
        # T2 never ends; T3's hit on T2's call has to go with it
        assert format_history(t) == "r1.1[x] c1 c3"

    def test_committed_and_aborted(self):
        h = parse_history("w1[x] w2[y] c1 a2 r3.1[x]")
        assert h.committed == {1} and h.aborted == {2}
        assert not h.is_complete()

    def test_builder_dedupes(self):
        b = HistoryBuilder()
        assert b.append(Read(1, 1, "x"))
        assert not b.append(Read(1, 1, "x"))
        b.append(Abort(1))
        assert format_history(b.build()) == "r1.1[x] a1"
