import pathlib

import pytest

from langx.parser import parse_spec

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
GOLDEN = FIXTURES / "golden"


def load(name):
    return parse_spec((FIXTURES / f"{name}.lang").read_text(),
                      filename=f"{name}.lang")


@pytest.fixture(scope="session")
def stlc():
    return load("stlc")


@pytest.fixture(scope="session")
def stlc_consts():
    return load("stlc_consts")


@pytest.fixture(scope="session")
def references():
    return load("references")


@pytest.fixture(scope="session")
def app2():
    return load("app2")


@pytest.fixture(scope="session")
def langfunny():
    return load("langfunny")


@pytest.fixture(scope="session")
def boollist():
    return load("boollist")
