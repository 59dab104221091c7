import pytest

from herding.kramers import KramersParams
from herding.meanfield import MeanFieldParams, find_fixed_points

P, K = 0.55, 11


@pytest.fixture(scope="session")
def reference_branch_09():
    return find_fixed_points(MeanFieldParams(0.9, P, K))


@pytest.fixture(scope="session")
def kramers_200_09():
    return KramersParams.build(0.9, P, K, 200)


@pytest.fixture(scope="session")
def kramers_200_1():
    return KramersParams.build(1.0, P, K, 200)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion.

    Call ``verdict(label, ok, detail)``; the lines are printed together at
    the end of the run.  The test still has to assert ``ok`` itself.
    """

    def record(label: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip()
        request.config.acceptance_lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
