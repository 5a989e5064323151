from __future__ import annotations

from fractions import Fraction

import pytest

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: str, passed: bool | None, detail: str) -> None:
    """Queue a summary line; ``passed=None`` marks a skipped criterion."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"[{status}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def exact_fib(errors) -> Fraction:
    """Closed-form MSE score in exact rational arithmetic (test oracle)."""
    e = [Fraction(v) for v in errors]
    m = len(e)
    total = sum(e)
    if total == 0:
        return Fraction(1)
    return 1 - Fraction(m, m - 1) * sum((v / total - Fraction(1, m)) ** 2 for v in e)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
