import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("vcc", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("vcc")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report(capsys):
    """Record one PASS/FAIL line per acceptance criterion, echoed live and in the summary."""

    def report(number, title, ok, elapsed, limit, detail=""):
        line = (f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} "
                f"({elapsed:.1f}s, limit {limit:.0f}s){' ' + detail if detail else ''}")
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
