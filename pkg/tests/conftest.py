from pathlib import Path

import numpy as np
import pytest

from riskscuc import load_case

CASES = Path(__file__).resolve().parent.parent / "cases"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def cases_dir():
    return CASES


@pytest.fixture
def three_unit():
    return load_case(CASES / "three_unit.json")


@pytest.fixture
def stressed():
    return load_case(CASES / "stressed_1bus.json")


@pytest.fixture
def three_bus():
    return load_case(CASES / "three_bus.json")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
