import numpy as np
import pytest

from driftgate.controller import Action

CRITERIA = {}


def check_run_invariants(log, cfg):
    """Budget and cooldown invariants every run must satisfy."""
    assert sum(e.k for e in log) <= cfg.label_budget
    assert all(e.k >= 0 for e in log)
    ts = [e.t for e in log]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    acts = [(e.t, e.executed if e.executed is not None else e.action) for e in log]
    # the launch deployment at t = 0 starts both cooldown clocks
    for code, gap in ((int(Action.A4), cfg.cooldown_retrain), (int(Action.A5), cfg.cooldown_rollback)):
        times = [0] + [t for t, a in acts if a == code]
        assert all(b - a >= gap for a, b in zip(times, times[1:])), (code, times)


@pytest.fixture
def run_invariants():
    return check_run_invariants


@pytest.fixture
def criterion():
    """Record an acceptance criterion's outcome for the end-of-run summary."""

    def record(number, passed, detail=""):
        CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
