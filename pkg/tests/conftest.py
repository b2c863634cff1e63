import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(rep, "when", "call") == "call":
                name = nodeid.split("::")[-1]
                lines.append((name, "PASS" if outcome == "passed" else "FAIL", getattr(rep, "duration", 0.0)))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status, dur in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}  ({dur:.1f}s)")
