import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcache.fuzz import FuzzLimits, random_history
from mcache.history import parse_history, rw_projection
from mcache.recovery import (
    ReadsFromEntry,
    check_aca_decomposition,
    early_hit_offenders,
    is_aca,
    is_recoverable,
    is_strict,
    is_strict_via_decomposition,
    reads_from,
)

seeds = st.integers(min_value=0, max_value=2**32)


def classify(h):
    return is_recoverable(h), is_aca(h), is_strict(h)


class TestReadsFrom:
    def test_h4(self, examples):
        assert reads_from(examples["H4"]) == {
            ReadsFromEntry(1, "x", 2, "r1.1[x]"),
            ReadsFromEntry(3, "x", 2, "m3.1.1"),
        }

    def test_no_writes(self):
        assert reads_from(parse_history("r1.1[x] r2.1[x] c1 c2")) == frozenset()

    def test_aborted_intervening_writer_skipped(self):
        h = parse_history("w1[x] c1 w2[x] a2 r3.1[x] c3")
        assert reads_from(h) == {ReadsFromEntry(3, "x", 1, "r3.1[x]")}

    def test_own_write_read(self):
        h = parse_history("w1[x] r1.1[x] c1")
        assert reads_from(h) == {ReadsFromEntry(1, "x", 1, "r1.1[x]")}

    @given(seeds)
    @settings(max_examples=200, deadline=None)
    def test_rw_projection_subset(self, seed):
        h = random_history(random.Random(seed), FuzzLimits())
        assert reads_from(rw_projection(h)) <= reads_from(h)


class TestClassification:
    @pytest.mark.parametrize(
        "name, expected",
        [
            ("H5", (False, False, False)),
            ("H6", (True, False, False)),
            ("H7", (True, True, False)),
            ("H8", (True, True, True)),
        ],
    )
    def test_graded_examples(self, examples, name, expected):
        assert classify(examples[name]) == expected

    def test_empty(self):
        assert classify(parse_history("")) == (True, True, True)

    def test_h9_not_aca_but_projection_is(self, examples):
        h9 = examples["H9"]
        assert not is_aca(h9) and is_aca(rw_projection(h9))

    def test_h10_not_recoverable_but_projection_is(self, examples):
        h10 = examples["H10"]
        assert not is_recoverable(h10) and is_recoverable(rw_projection(h10))

    def test_overwrite_of_uncommitted_is_not_strict(self):
        h = parse_history("w1[x] w2[x] c1 c2")
        assert is_aca(h) and not is_strict(h)

    @given(seeds)
    @settings(max_examples=500, deadline=None)
    def test_inclusions(self, seed):
        h = random_history(random.Random(seed), FuzzLimits())
        rec, aca, strict = classify(h)
        assert not strict or aca
        assert not aca or rec

    @given(seeds)
    @settings(max_examples=500, deadline=None)
    def test_strict_decomposes(self, seed):
        h = random_history(random.Random(seed), FuzzLimits())
        assert is_strict(h) == is_strict_via_decomposition(h)


class TestAcaDecomposition:
    def test_h9_side_condition_violated(self, examples):
        result = check_aca_decomposition(examples["H9"])
        assert not result
        assert not result.predicate_ok and not result.holds
        assert result.offending == ("m2.1.1",)

    def test_rw_history_trivially_holds(self):
        result = check_aca_decomposition(parse_history("w1[x] r2.1[x] c1 c2"))
        assert result and result.offending == ()

    def test_hit_after_producer_commit_is_fine(self):
        h = parse_history("w1[x] r1.1[x] c1 m2.1.1 c2")
        assert early_hit_offenders(h) == ()
        assert check_aca_decomposition(h)

    @given(seeds)
    @settings(max_examples=500, deadline=None)
    def test_equivalence_whenever_side_condition_holds(self, seed):
        h = random_history(random.Random(seed), FuzzLimits())
        result = check_aca_decomposition(h)
        if result.predicate_ok:
            assert result.holds
