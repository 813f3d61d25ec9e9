from __future__ import annotations

import pytest

from mcache.history import McHistory, parse_history

# Example histories from the formal model, in the text format.
EXAMPLES = {
    "H1": "r1.4[y] r1.4[x] c1 w2[x] c2 m3.1.4 r3.5[x] c3",
    "H2": "r1.1[x] c1 w2[x] m2.1.1 c2",
    "H3": "r1.4[y] r1.4[x] c1 w2[x] c2 m3.1.4 w3[x] c3",
    "H4": "w2[x] r1.1[y] r1.1[x] c1 c2 m3.1.1 w3[x] c3",
    "H5": "w1[x] w1[y] w2[y] r2.1[x] m3.2.1 c3 c1 c2",
    "H6": "w1[x] w1[y] w2[y] r2.1[x] m3.2.1 c1 c3 c2",
    "H7": "w1[x] w1[y] w2[y] c1 r2.1[x] m3.2.1 c3 c2",
    "H8": "w1[x] w1[y] c1 w2[y] r2.1[x] m3.2.1 c3 c2",
    "H9": "w1[x] r1.1[x] m2.1.1 c1 c2",
    "H10": "w1[x] r2.1[x] m3.2.1 c3 c1 c2",
}


@pytest.fixture(scope="session")
def examples() -> dict[str, McHistory]:
    return {name: parse_history(text) for name, text in EXAMPLES.items()}


@pytest.fixture
def h1(examples) -> McHistory:
    return examples["H1"]
