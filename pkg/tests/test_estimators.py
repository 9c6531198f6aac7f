import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SLOW_MATRIX, THREE_STATE, point_mass_config
from coupling import run_lagged_coupling
from errors import ConfigError, IndexOutOfTrace, MissingTau, PlanInvalid, TooFewProcesses
from estimators import (
    Coordinate,
    Identity,
    Indicator,
    Magnetization,
    h_backward,
    h_cv_single,
    h_forward,
    h_timeavg,
    h_timeavg_cv,
    loo_median,
    loo_medians,
    resolve_test_function,
)
from exact_oracle import discrete_chain
from kernels import DiscreteKernel
from models import CoupledTrace, EstimatorInput


@pytest.fixture
def hand_trace():
    # lag 1, tau 3: Y_t = X_{t+1} from t = 2 on
    return CoupledTrace([1, 2, 3, 4, 5], [10, 20, 4, 5], tau=3, lag=1)


def test_hand_computed_values(hand_trace):
    h = Identity()
    inp = EstimatorInput(hand_trace, 0)
    # J = 2: 1 + (2 - 10) + (3 - 20)
    assert h_forward(inp, h)[0] == -24
    # 3 + (1 - 10) + (2 - 20)
    assert h_backward(inp, h)[0] == -24
    assert h_cv_single(inp, h, 0)[0] == -15
    assert h_cv_single(inp, h, -1)[0] == -24


def test_hand_computed_time_average(hand_trace):
    h = Identity()
    inp = EstimatorInput(hand_trace, 0, 3)
    # t = 0..3 give -24, -15, 3, 4
    assert h_timeavg(inp, h)[0] == pytest.approx(-8.0)
    assert h_timeavg_cv(inp, h, [-1, -1, -1, -1])[0] == pytest.approx(-8.0)
    # t = 0 drops 1 - 10 and t = 1 drops 2 - 20
    assert h_timeavg_cv(inp, h, [0, 0, -1, -1])[0] == pytest.approx(-8.0 + (9 + 18) / 4)


def test_no_correction_past_meeting(hand_trace):
    inp = EstimatorInput(hand_trace, 2)
    assert h_backward(inp, Identity())[0] == 3
    assert h_forward(inp, Identity())[0] == 3


def test_missing_tau():
    trace = CoupledTrace([0, 1, 0], [1, 0], tau=None, lag=1)
    with pytest.raises(MissingTau):
        h_backward(EstimatorInput(trace, 0), Identity())


def test_index_out_of_trace(hand_trace):
    with pytest.raises(IndexOutOfTrace):
        h_backward(EstimatorInput(hand_trace, 10), Identity())
    with pytest.raises(IndexOutOfTrace):
        h_cv_single(EstimatorInput(hand_trace, 0), Identity(), 5)


def test_truncation_bounds(hand_trace):
    with pytest.raises(PlanInvalid):
        h_cv_single(EstimatorInput(hand_trace, 0), Identity(), -2)
    with pytest.raises(PlanInvalid):
        h_timeavg_cv(EstimatorInput(hand_trace, 0, 2), Identity(), [0])
    with pytest.raises(PlanInvalid):
        EstimatorInput(hand_trace, 3, 1)


@pytest.mark.parametrize("seed", range(25))
def test_forward_equals_backward_pathwise(seed):
    rng = np.random.default_rng(seed)
    kernel = DiscreteKernel(np.array(THREE_STATE))
    lag, k = int(rng.integers(1, 4)), int(rng.integers(0, 6))
    trace = run_lagged_coupling(kernel, point_mass_config(3, lag, horizon=k), rng)
    for h in (Identity(), Indicator(1)):
        inp = EstimatorInput(trace, k)
        assert np.allclose(h_forward(inp, h), h_backward(inp, h), rtol=1e-12, atol=1e-12)


@settings(deadline=None, max_examples=50)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_linear_in_h(a, b, seed):
    rng = np.random.default_rng(seed)
    kernel = DiscreteKernel(np.array(THREE_STATE))
    trace = run_lagged_coupling(kernel, point_mass_config(3, 2, horizon=8), rng)
    inp = EstimatorInput(trace, 1, 4)
    f, g = Indicator(0), Indicator(2)

    def combo(state):
        return a * f(state) + b * g(state)

    left = h_timeavg(inp, combo)
    right = a * h_timeavg(inp, f) + b * h_timeavg(inp, g)
    assert np.allclose(left, right, atol=1e-9)


def test_test_function_registry():
    assert isinstance(resolve_test_function("identity"), Identity)
    assert resolve_test_function("coordinate:2") == Coordinate(2)
    assert resolve_test_function("indicator:1") == Indicator(1)
    assert isinstance(resolve_test_function("magnetization"), Magnetization)
    for bad in ("coordinate:x", "mean", "identity:3"):
        with pytest.raises(ConfigError):
            resolve_test_function(bad)


def test_loo_median_examples():
    assert loo_median([0, 1, 2, 3], 0) == 2
    assert loo_median([0, 1, 2, 3], 3) == 1
    assert loo_median([-1, 4], 1) == -1


@given(st.lists(st.integers(-1, 12), min_size=2, max_size=40))
def test_loo_medians_match_one_at_a_time(values):
    expected = [loo_median(values, q) for q in range(len(values))]
    assert loo_medians(values).tolist() == expected


def test_loo_median_needs_two_processes():
    with pytest.raises(TooFewProcesses):
        loo_median([3], 0)
    with pytest.raises(TooFewProcesses):
        loo_medians([3])


@pytest.mark.slow
def test_estimators_unbiased_on_oracle_chain():
    chain = discrete_chain(SLOW_MATRIX, [1.0, 0.0])
    target = chain.stationary_vector[1]
    kernel = DiscreteKernel(chain.transition_matrix)
    rng = np.random.default_rng(77)
    lag, k, r, m = 1, 2, 8, 1
    h = Indicator(1)
    config = point_mass_config(2, lag, horizon=r + (m + 1) * lag + 1)

    values = {name: [] for name in ("forward", "backward", "cv", "timeavg", "timeavg_cv")}
    for _ in range(100_000):
        trace = run_lagged_coupling(kernel, config, rng)
        single, window = EstimatorInput(trace, k), EstimatorInput(trace, k, r)
        values["forward"].append(h_forward(single, h)[0])
        values["backward"].append(h_backward(single, h)[0])
        values["cv"].append(h_cv_single(single, h, m)[0])
        values["timeavg"].append(h_timeavg(window, h)[0])
        values["timeavg_cv"].append(h_timeavg_cv(window, h, [m] * (r - k + 1))[0])

    for name, v in values.items():
        v = np.asarray(v)
        se = v.std(ddof=1) / np.sqrt(v.size)
        assert abs(v.mean() - target) < 3 * se, name
