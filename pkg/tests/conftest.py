import numpy as np
import pytest

from bcmpc.scenarios import Libraries, ScenarioConfig

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def libs():
    return Libraries.load()


@pytest.fixture(scope="session")
def scfg():
    return ScenarioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
