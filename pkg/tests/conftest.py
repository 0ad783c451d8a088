import numpy as np
import pytest

from pcr.core import Database, SchemeConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def worked_db():
    return Database(np.array([[20, 0], [0, 20]]), 20)


@pytest.fixture
def worked_mask_config():
    # q=809 sits above R^2 d = 800 but the 40-wide mask pushes past it, so
    # the strict field check is relaxed exactly as in the worked instance
    return SchemeConfig(q=809, R=20, d=2, M=2, variant="mask", d_min=40, strict=False)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
