import pytest
from hypothesis import HealthCheck, settings

from taurus_mini.storage import GLOBAL_WRITE_CHECKER

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

APPEND_ONLY_AUDIT = "test_append_only_audit"


def pytest_collection_modifyitems(session, config, items):
    # the append-only audit inspects every write made by the session, so it goes last
    last = [item for item in items if item.name == APPEND_ONLY_AUDIT]
    items[:] = [item for item in items if item.name != APPEND_ONLY_AUDIT] + last


def pytest_sessionfinish(session, exitstatus):
    if GLOBAL_WRITE_CHECKER.violations and exitstatus == 0:
        session.exitstatus = 1
        print(f"\nshadow write checker: {GLOBAL_WRITE_CHECKER.overwritten} overwritten ranges")


@pytest.fixture
def rng():
    import random

    return random.Random(1234)


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the terminal summary repeats them all."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
