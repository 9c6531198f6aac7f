import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from conftest import THREE_STATE
from coupling import run_lagged_coupling
from distributions import Bernoulli, Categorical, IsotropicNormal, Normal, maximal_coupling_sample
from errors import EvaluationError, InvalidDistribution, InvalidMatrix, NonEvaluableDensity, PlanInvalid
from kernels import (
    DiscreteKernel,
    GaussianInitial,
    IsingInitial,
    RWMKernel,
    build_kernel,
    coupled_gibbs_gaussian,
    coupled_rwm_kernel,
    heat_bath_up,
    ising_ssg_kernel,
)
from models import GaussianTarget, LagConfig
from schemas import (
    DiscreteKernelConfig,
    GeometricKernelConfig,
    GibbsKernelConfig,
    IsingKernelConfig,
    RWMKernelConfig,
)

ALPHA = 0.001


def test_discrete_kernel_rejects_bad_rows():
    with pytest.raises(InvalidMatrix):
        DiscreteKernel(np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(InvalidMatrix):
        DiscreteKernel(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))


def test_categorical_rejects_non_probabilities():
    with pytest.raises(InvalidDistribution):
        Categorical(np.array([0.5, 0.6]))


def test_coupling_needs_densities(rng):
    class SampleOnly:
        def sample(self, rng):
            return 0.0

    with pytest.raises(NonEvaluableDensity):
        maximal_coupling_sample(SampleOnly(), Normal(0.0, 1.0), rng)


@pytest.mark.parametrize(
    "p, q, tv",
    [
        (Normal(0.0, 1.0), Normal(1.0, 1.0), stats.norm.cdf(0.5) - stats.norm.cdf(-0.5)),
        (Bernoulli(0.3), Bernoulli(0.6), 0.3),
        (Categorical(np.array([0.5, 0.3, 0.2])), Categorical(np.array([0.2, 0.3, 0.5])), 0.3),
    ],
)
def test_maximal_coupling_meeting_rate(p, q, tv):
    rng = np.random.default_rng(31)
    n = 20_000
    draws = [maximal_coupling_sample(p, q, rng) for _ in range(n)]
    met = np.mean([d[2] for d in draws])
    assert abs(met - (1 - tv)) < 3 * math.sqrt(tv * (1 - tv) / n)
    # the flag is truthful
    assert all((x == y) == m for x, y, m in draws)


def test_maximal_coupling_marginals():
    rng = np.random.default_rng(32)
    p, q = Normal(0.0, 1.0), Normal(1.0, 1.0)
    xs, ys = zip(*[maximal_coupling_sample(p, q, rng)[:2] for _ in range(10_000)])
    assert stats.kstest(xs, stats.norm(0.0, 1.0).cdf).pvalue > ALPHA
    assert stats.kstest(ys, stats.norm(1.0, 1.0).cdf).pvalue > ALPHA


def test_discrete_frozen_partner():
    kernel = DiscreteKernel(np.array(THREE_STATE))
    rng = np.random.default_rng(33)
    n = 20_000
    pairs = np.array([kernel.joint_step(0, 2, rng) for _ in range(n)])
    for col, state in ((0, 0), (1, 2)):
        counts = np.bincount(pairs[:, col], minlength=3)
        assert stats.chisquare(counts, kernel.transition_matrix[state] * n).pvalue > ALPHA


def test_rwm_frozen_partner():
    kernel = coupled_rwm_kernel(GaussianTarget(1), 1.5)
    rng = np.random.default_rng(34)
    x, y = np.array([0.0]), np.array([2.0])
    joint = [kernel.joint_step(x, y, rng)[0][0] for _ in range(5000)]
    alone = [kernel.marginal_step(x, rng)[0] for _ in range(5000)]
    assert stats.ks_2samp(joint, alone).pvalue > ALPHA


def test_rwm_leaves_target_invariant():
    kernel = coupled_rwm_kernel(GaussianTarget(1, mean=1.0, scale=2.0), 2.0)
    rng = np.random.default_rng(35)
    starts = 1.0 + 2.0 * rng.standard_normal(5000)
    ends = [kernel.marginal_step(np.array([s]), rng)[0] for s in starts]
    assert stats.kstest(ends, stats.norm(1.0, 2.0).cdf).pvalue > ALPHA


def test_rwm_reports_bad_density(rng):
    kernel = RWMKernel(lambda x: float("nan"), 1.0)
    with pytest.raises(EvaluationError):
        kernel.marginal_step(np.array([0.0]), rng)


def test_rwm_rejects_nonpositive_scale():
    with pytest.raises(PlanInvalid):
        coupled_rwm_kernel(GaussianTarget(1), 0.0)


def test_gibbs_frozen_partner():
    kernel = coupled_gibbs_gaussian(0.8)
    rng = np.random.default_rng(36)
    x, y = np.zeros(2), np.array([3.0, -3.0])
    pairs = [kernel.joint_step(x, y, rng) for _ in range(5000)]
    alone = np.array([kernel.marginal_step(x, rng) for _ in range(5000)])
    for coord in (0, 1):
        assert stats.ks_2samp([p[0][coord] for p in pairs], alone[:, coord]).pvalue > ALPHA
    # first coordinate given x[1] = 0 is N(0, 1 - rho^2)
    assert stats.kstest(alone[:, 0], stats.norm(0.0, 0.6).cdf).pvalue > ALPHA


def test_gibbs_rho_range():
    with pytest.raises(PlanInvalid):
        coupled_gibbs_gaussian(1.0)


def test_ising_frozen_partner():
    kernel = ising_ssg_kernel(4, 0.3)
    rng = np.random.default_rng(37)
    up = np.ones((4, 4), dtype=np.int64)
    joint = [np.mean(kernel.joint_step(up, -up, rng)[0]) for _ in range(5000)]
    alone = [np.mean(kernel.marginal_step(up, rng)) for _ in range(5000)]
    assert stats.ks_2samp(joint, alone).pvalue > ALPHA


def test_ising_sweep_respects_heat_bath_probability():
    kernel = ising_ssg_kernel(3, 0.4)
    up = np.ones((3, 3), dtype=np.int64)
    # the first site visited sees four up neighbours
    p = heat_bath_up(4.0, 0.4)
    assert p == pytest.approx(expit(8 * 0.4))
    assert heat_bath_up(-4.0, 0.4) == pytest.approx(1.0 - p)
    rng = np.random.default_rng(38)
    first = np.array([kernel.marginal_step(up, rng)[0, 0] for _ in range(20_000)])
    assert abs(np.mean(first == 1) - p) < 3 * math.sqrt(p * (1 - p) / 20_000)


def test_ising_near_zero_beta_meets_after_one_sweep():
    kernel = ising_ssg_kernel(8, 1e-9)
    config = LagConfig(1, 100, IsingInitial(8))
    for seed in range(20):
        trace = run_lagged_coupling(kernel, config, np.random.default_rng(seed))
        assert trace.tau == 2
        assert trace.joint_steps == 1


def test_gibbs_independent_coordinates_meet_after_one_sweep():
    # rho = 0: both conditionals are N(0, 1), so the maximal coupling always agrees
    kernel = coupled_gibbs_gaussian(0.0)
    config = LagConfig(1, 100, GaussianInitial(2, 0.0, 5.0))
    for seed in range(20):
        trace = run_lagged_coupling(kernel, config, np.random.default_rng(seed))
        assert trace.tau == 2
        assert kernel.states_equal(trace.x_path[2], trace.y_path[1])


@pytest.mark.slow
def test_ising_moderate_beta_always_meets():
    kernel = ising_ssg_kernel(8, 0.2)
    config = LagConfig(1, 10_000, IsingInitial(8))
    taus = [run_lagged_coupling(kernel, config, np.random.default_rng(seed)).tau for seed in range(100)]
    assert all(tau is not None and tau >= 1 for tau in taus)


@pytest.mark.slow
def test_rwm_chains_meet_under_the_cap():
    kernel = coupled_rwm_kernel(GaussianTarget(1, 0.0, 1.0), 2.0)
    config = LagConfig(1, 10**6, GaussianInitial(1, 0.0, 1.0))
    for seed in range(1000):
        # CapExceeded would propagate and fail the test
        trace = run_lagged_coupling(kernel, config, np.random.default_rng(seed))
        assert trace.tau >= 1


def test_ising_state_encoding():
    kernel = ising_ssg_kernel(3, 0.2)
    state = IsingInitial(3)(np.random.default_rng(0))
    assert np.array_equal(kernel.decode_state(kernel.encode_state(state)), state)


def test_ising_parameters():
    with pytest.raises(PlanInvalid):
        ising_ssg_kernel(1, 0.2)
    with pytest.raises(PlanInvalid):
        ising_ssg_kernel(4, 0.0)


@pytest.mark.parametrize(
    "config",
    [
        DiscreteKernelConfig(matrix=THREE_STATE),
        RWMKernelConfig(dimension=2, proposal_scale=0.5),
        GibbsKernelConfig(rho=0.5),
        IsingKernelConfig(side=4, beta=0.2),
    ],
)
def test_diagonal_is_absorbing(config):
    kernel, initial = build_kernel(config)
    rng = np.random.default_rng(39)
    x = initial(rng)
    for _ in range(200):
        a, b = kernel.joint_step(x, x, rng)
        assert kernel.states_equal(a, b)
        x = a


def test_build_kernel_initial_samplers():
    _, initial = build_kernel(DiscreteKernelConfig(matrix=THREE_STATE, initial=[0.0, 0.0, 1.0]))
    assert initial(np.random.default_rng(0)) == 2
    _, initial = build_kernel(RWMKernelConfig(dimension=3, proposal_scale=1.0, initial_mean=5.0, initial_scale=0.0))
    assert isinstance(initial, GaussianInitial)
    assert np.array_equal(initial(np.random.default_rng(0)), np.full(3, 5.0))
    _, initial = build_kernel(IsingKernelConfig(side=3, beta=0.1, initial="all_up"))
    assert np.all(initial(np.random.default_rng(0)) == 1)


def test_build_kernel_rejects_geometric():
    with pytest.raises(PlanInvalid):
        build_kernel(GeometricKernelConfig(p=0.5))


def test_isotropic_normal_density():
    dist = IsotropicNormal(np.zeros(2), 2.0)
    x = np.array([1.0, -1.0])
    assert dist.logpdf(x) == pytest.approx(2 * stats.norm.logpdf(1.0, scale=2.0))
