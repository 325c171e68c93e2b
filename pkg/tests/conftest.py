import numpy as np
import pytest

from aronsson.grid import DomainSpec, Problem

# criterion number -> (name, passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def criterion():
    def record(n: int, name: str, ok: bool, detail: str = ""):
        ACCEPTANCE[n] = (name, bool(ok), detail)
        print(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return record


def interval_problem(gl: float, gr: float, h: float, tau: float = 1.0, l=-1.0, r=1.0) -> Problem:
    """Problem on (l, r) whose boundary data is linear with the given end values."""
    expr = f"{float(gl)!r} + ({float(gr)!r} - {float(gl)!r}) * (x - {float(l)!r}) / {float(r - l)!r}"
    return Problem.make(DomainSpec("interval", [(l, r)], h), expr, tau)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
