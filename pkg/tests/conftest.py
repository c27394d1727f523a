import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records a line for the acceptance summary."""
    def record(n, ok, detail, extra=""):
        status = "PASS" if ok is True else ("SKIP" if ok is None else "FAIL")
        _ACCEPTANCE.append((n, f"criterion {n:>2}: {status}  {detail}", extra))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line, extra in sorted(_ACCEPTANCE, key=lambda t: t[0]):
        terminalreporter.write_line(line)
        if extra:
            for row in extra.splitlines():
                terminalreporter.write_line("    " + row)
