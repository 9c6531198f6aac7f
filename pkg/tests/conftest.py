import numpy as np
import pytest

from exact_oracle import discrete_chain
from kernels import CategoricalInitial, DiscreteKernel
from models import LagConfig

SLOW_MATRIX = [[0.95, 0.05], [0.05, 0.95]]
THREE_STATE = [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]
# every state jumps to 1: from X_L = 1, Y_0 = 0 the pair meets at the first joint step
JUMP_TO_ONE = [[0.0, 1.0], [0.0, 1.0]]
# every state jumps to 0: X_L = Y_0 = 0 right after the warm-up
STAY_AT_ZERO = [[1.0, 0.0], [1.0, 0.0]]
# a period-2 flip never lets the lagged pair meet at odd lags
FLIP = [[0.0, 1.0], [1.0, 0.0]]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def three_state_chain():
    return discrete_chain(THREE_STATE, [1.0, 0.0, 0.0])


@pytest.fixture
def slow_chain():
    return discrete_chain(SLOW_MATRIX, [1.0, 0.0])


@pytest.fixture
def three_state_kernel():
    return DiscreteKernel(np.array(THREE_STATE))


def point_mass_config(n: int, lag: int, max_sweeps: int = 10_000, horizon: int = 0, state: int = 0) -> LagConfig:
    start = np.zeros(n)
    start[state] = 1.0
    return LagConfig(lag, max_sweeps, CategoricalInitial(start), horizon=horizon)


def write_config(path, text: str):
    path.write_text(text)
    return path
