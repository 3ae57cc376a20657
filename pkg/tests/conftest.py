import pytest
from hypothesis import HealthCheck, settings

from thermal_covert.config import load_config

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def cfg():
    return load_config("table6.json")


@pytest.fixture
def acceptance_report(request):
    """Collects one line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def report(number: int, name: str, passed: bool, detail: str) -> None:
        lines.append((number, f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"))
        print(lines[-1][1])

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
