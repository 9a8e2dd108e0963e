import numpy as np
import pytest

from pqla.experiments import ExperimentConfig, run_study

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def default_study():
    """The default ten-coordinate study: 300 replications at n = 1000, 2000, 3000, 10000."""
    return run_study(ExperimentConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
