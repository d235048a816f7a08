import numpy as np
import pytest

from accelsim import MachineSpec
from bf16_numerics import Bf16Grid, bf16_ulp
from costmodel import Scenario


@pytest.fixture
def machine():
    return MachineSpec()


@pytest.fixture
def pcie(machine):
    return Scenario.from_name("pcie", machine)


@pytest.fixture
def uvm(machine):
    return Scenario.from_name("uvm", machine)


@pytest.fixture
def upm(machine):
    return Scenario.from_name("upm", machine)


@pytest.fixture
def random_grid():
    def make(rows, cols=None, seed=0):
        return Bf16Grid.random(rows, rows if cols is None else cols, seed)
    return make


def max_ulp_distance(actual: Bf16Grid, expected: Bf16Grid) -> float:
    """Largest |actual - expected| measured in bfloat16 ULPs of the expected values."""
    diff = np.abs(actual.to_float64() - expected.to_float64())
    return float((diff / bf16_ulp(expected.data)).max())
