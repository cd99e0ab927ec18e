import sys
from pathlib import Path

import pytest

from instanton.field import load_field

DATA = Path(__file__).resolve().parents[1] / "src" / "instanton" / "data"


def shipped_field(name):
    return load_field(DATA / f"{name}.field")


@pytest.fixture(scope="session")
def torus():
    return shipped_field("torus_sin")


@pytest.fixture(scope="session")
def circle():
    return shipped_field("circle_sin")


@pytest.fixture(scope="session")
def torus2():
    return shipped_field("torus_sin2")


@pytest.fixture(scope="session")
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
