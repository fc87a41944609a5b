from __future__ import annotations

from typing import List, Tuple

import pytest

from propulsion import GeneSpec, SearchSpace

_CRITERIA: List[Tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed again in the terminal summary."""

    def report(label: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else "")
        print(line)
        _CRITERIA.append((label, ok, detail))
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else ""))


@pytest.fixture
def mixed_space() -> SearchSpace:
    return SearchSpace(
        [
            GeneSpec.continuous("lr", -5.0, -1.0),
            GeneSpec.integer("layers", 1, 6),
            GeneSpec.categorical("act", ["relu", "tanh", "gelu"]),
            GeneSpec.continuous("drop", 0.0, 0.5),
        ]
    )


@pytest.fixture
def sphere_space() -> SearchSpace:
    return SearchSpace.box(2, 5.12)
