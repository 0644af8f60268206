import math
import tracemalloc

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import trapezoid
from scipy.special import logsumexp
from scipy.stats import chisquare

from conftest import make_flow, make_identity_flow
from core.errors import InvalidArgumentError, NumericalDivergenceError
from core.flow.hamiltonian import HamFlowParams, HamiltonianFlow
from core.flow.momentum import MomentumModel
from core.flow.state import AugmentedState
from core.mixflow import (MixFlow, density_triple, elbo_vs_burnin, estimate_elbo, estimate_elbo_const_mem,
                          estimate_elbo_replicated, log_density, sample, sample_with_index, sliding_logsumexp,
                          trajectory_average, trajectory_averages)
from core.targets.augmented import augment_target
from core.targets.reference import standard_reference
from core.targets.synthetic import NormalTarget, synthetic_target


def _brute_log_density(flow, state):
    """Every mixture term pushed back independently, Jacobians taken from forward()"""
    terms = []
    for n in range(flow.burn_in, flow.n_steps):
        preimages = [state]
        for _ in range(n):
            preimages.append(flow.transform.inverse(preimages[-1])[0])
        log_jac = sum(float(flow.transform.forward(preimages[j])[1]) for j in range(1, n + 1))
        terms.append(float(flow.reference.log_density(preimages[n])) - log_jac)
    return logsumexp(terms) - math.log(flow.n_components)


def _naive_elbo(flow, target, seed):
    """Mean of log p - log q along the forward trajectory, each log q evaluated from scratch"""
    log_p = augment_target(target, flow.reference.momentum).log_density
    x = flow.reference.sample(np.random.default_rng(seed))
    values = []
    for n in range(flow.n_steps):
        if n >= flow.burn_in:
            values.append(float(log_p(x)) - float(log_density(flow, x)))
        x, _ = flow.transform.forward(x)
    return float(np.mean(values))


@pytest.fixture
def normal_flow(std_normal):
    return make_flow(std_normal, epsilon=0.1, n_leapfrog=5, n_steps=10)


# ============
# CONSTRUCTION
# ============

@pytest.mark.parametrize('n_steps, burn_in', [(0, 0), (5, 5), (5, -1), (2.5, 0)])
def test_invalid_lengths(n_steps, burn_in):
    with pytest.raises(InvalidArgumentError):
        make_identity_flow(1, n_steps=n_steps, burn_in=burn_in)


def test_pseudotime_free_reference_needs_zero_shift(std_normal):
    with pytest.raises(InvalidArgumentError):
        make_flow(std_normal, use_pseudotime=False)
    flow = make_flow(std_normal, use_pseudotime=False, xi=0.0)
    assert flow.n_components == 10


def test_dimension_mismatch(banana):
    transform = HamiltonianFlow(HamFlowParams(0.1, 1), banana, MomentumModel('laplace', 2))
    with pytest.raises(InvalidArgumentError):
        MixFlow(standard_reference(1), transform, 3)


# ========
# SAMPLING
# ========

def test_single_component_returns_reference_draw(normal_flow):
    flow = normal_flow.with_steps(1)
    drawn = sample(flow, np.random.default_rng(5))
    replay = np.random.default_rng(5)
    replay.integers(0, 1)
    expected = flow.reference.sample(replay)
    assert_allclose(drawn.x, expected.x)
    assert_allclose(drawn.rho, expected.rho)
    assert drawn.u == expected.u


def test_sampling_is_deterministic(banana_flow):
    a = sample(banana_flow, np.random.default_rng(42))
    b = sample(banana_flow, np.random.default_rng(42))
    assert np.array_equal(a.to_array(), b.to_array())


def test_batched_sampling_matches_index(banana_flow):
    states, ks = sample_with_index(banana_flow, np.random.default_rng(9), size=30)
    assert states.batch_shape == (30,)
    replay = np.random.default_rng(9)
    replay.integers(0, banana_flow.n_steps, size=30)
    start = banana_flow.reference.sample(replay, (30,))
    for i in (0, 7, 29):
        expected = banana_flow.transform.iterate(start[i], int(ks[i]))
        assert_allclose(states.x[i], expected.x, atol=1e-12)


def test_mixture_index_is_uniform():
    flow = make_identity_flow(1, n_steps=8)
    rng = np.random.default_rng(17)
    ks = [int(sample_with_index(flow, rng)[1]) for _ in range(10000)]
    counts = np.bincount(ks, minlength=8)
    assert counts.shape == (8,)
    assert chisquare(counts).pvalue > 1e-3


def test_burn_in_restricts_index():
    flow = make_identity_flow(1, n_steps=8, burn_in=5)
    _, ks = sample_with_index(flow, np.random.default_rng(1), size=500)
    assert set(np.unique(ks)) == {5, 6, 7}


# =======
# DENSITY
# =======

def test_single_component_density_is_reference(normal_flow, rng):
    flow = normal_flow.with_steps(1)
    state = flow.reference.sample(rng, (6,))
    assert_allclose(log_density(flow, state), flow.reference.log_density(state))


def test_identity_density_is_reference(rng):
    flow = make_identity_flow(2, n_steps=7)
    state = flow.reference.sample(rng, (6,))
    assert_allclose(log_density(flow, state), flow.reference.log_density(state), rtol=1e-12)


@pytest.mark.parametrize('burn_in', [0, 4])
def test_density_matches_brute_force(normal_flow, rng, burn_in):
    flow = normal_flow.with_steps(10, burn_in)
    for _ in range(3):
        state = sample(flow, rng)
        assert_allclose(float(log_density(flow, state)), _brute_log_density(flow, state), rtol=1e-8)


@pytest.mark.parametrize('n_steps', [2, 10, 50])
def test_banana_density_matches_brute_force(banana, rng, n_steps):
    # a step size at which banana round trips stay near machine precision
    flow = make_flow(banana, epsilon=0.005, n_leapfrog=5, n_steps=n_steps)
    for _ in range(2):
        state = sample(flow, rng)
        assert_allclose(float(log_density(flow, state)), _brute_log_density(flow, state), rtol=1e-8)


def test_density_triple(banana_flow, rng):
    state = sample(banana_flow, rng, size=5)
    triple = density_triple(banana_flow, state)
    assert_allclose(triple.log_density, log_density(banana_flow, state), rtol=1e-10)
    preimage = state
    for _ in range(banana_flow.n_steps - 1):
        preimage, _ = banana_flow.transform.inverse(preimage)
    assert_allclose(triple.preimage.x, preimage.x)


def test_density_triple_single_component(normal_flow, rng):
    flow = normal_flow.with_steps(1)
    state = flow.reference.sample(rng)
    triple = density_triple(flow, state)
    assert triple.preimage is state
    assert_allclose(triple.density, np.exp(flow.reference.log_density(state)))
    assert float(triple.jacobian_product) == 1.0


def test_far_tail_density_is_finite(normal_flow):
    state = AugmentedState([40.0], [0.0], 0.5)
    value = float(log_density(normal_flow, state))
    assert np.isfinite(value) and value < -700.0
    far = AugmentedState([1400.0], [0.0], 0.5)
    assert_allclose(log_density(make_identity_flow(1), far), make_identity_flow(1).reference.log_density(far))


def test_divergence_carries_step(banana):
    flow = make_flow(banana, epsilon=1e10, n_leapfrog=10, n_steps=4, momentum='gaussian')
    with pytest.raises(NumericalDivergenceError) as info:
        log_density(flow, AugmentedState([1.0, 1.0], [1.0, 1.0], 0.5))
    assert info.value.step == 1


@pytest.mark.parametrize('n_steps', [1, 5, 20])
def test_density_is_normalized(n_steps):
    # no pseudotime, so (x, rho) carries the whole density
    target = NormalTarget([0.0], [1.0])
    flow = make_flow(target, epsilon=0.05, n_leapfrog=10, n_steps=n_steps, use_pseudotime=False, xi=0.0)
    x = np.linspace(-7.0, 7.0, 401)
    rho = np.linspace(-12.0, 12.0, 801)
    xx, rr = np.meshgrid(x, rho, indexing='ij')
    state = AugmentedState(xx[..., None], rr[..., None], np.zeros(xx.shape))
    dens = np.exp(log_density(flow, state))
    assert_allclose(trapezoid(trapezoid(dens, rho, axis=1), x), 1.0, atol=1e-2)


# ====
# ELBO
# ====

def test_identity_elbo_vanishes(std_normal):
    flow = MixFlow(standard_reference(1), make_identity_flow(1).transform, 1)
    assert estimate_elbo(flow, std_normal, np.random.default_rng(0)) == 0.0
    flow = flow.with_steps(6)
    assert abs(estimate_elbo(flow, std_normal, np.random.default_rng(0))) < 1e-10
    assert abs(estimate_elbo_const_mem(flow, std_normal, np.random.default_rng(0))) < 1e-10


def test_single_component_elbo(banana_flow, banana):
    flow = banana_flow.with_steps(1)
    x0 = flow.reference.sample(np.random.default_rng(3))
    expected = float(augment_target(banana, flow.reference.momentum).log_density(x0)
                     - flow.reference.log_density(x0))
    assert_allclose(estimate_elbo(flow, banana, np.random.default_rng(3)), expected)
    assert_allclose(estimate_elbo_const_mem(flow, banana, np.random.default_rng(3)), expected)


def test_elbo_matches_naive(banana):
    flow = make_flow(banana, epsilon=0.1, n_leapfrog=5, n_steps=20)
    for seed in (1, 2):
        assert_allclose(estimate_elbo(flow, banana, np.random.default_rng(seed)),
                        _naive_elbo(flow, banana, seed), rtol=1e-8)


def test_burn_in_elbo_matches_naive(banana):
    flow = make_flow(banana, epsilon=0.1, n_leapfrog=5, n_steps=20, burn_in=6)
    assert_allclose(estimate_elbo(flow, banana, np.random.default_rng(4)),
                    _naive_elbo(flow, banana, 4), rtol=1e-8)


@pytest.mark.parametrize('n_steps', [1, 7, 50, 100])
def test_const_mem_matches_recursive(banana, n_steps):
    flow = make_flow(banana, epsilon=0.1, n_leapfrog=5, n_steps=n_steps)
    a = estimate_elbo(flow, banana, np.random.default_rng(n_steps))
    b = estimate_elbo_const_mem(flow, banana, np.random.default_rng(n_steps))
    assert abs(a - b) < 1e-6


def test_const_mem_rejects_burn_in(banana):
    flow = make_flow(banana, n_steps=5, burn_in=1)
    with pytest.raises(InvalidArgumentError):
        estimate_elbo_const_mem(flow, banana, np.random.default_rng(0))


def test_const_mem_memory_does_not_grow(std_normal):
    def peak(n_steps):
        flow = make_flow(std_normal, epsilon=0.1, n_leapfrog=2, n_steps=n_steps)
        tracemalloc.start()
        try:
            tracemalloc.reset_peak()
            base = tracemalloc.get_traced_memory()[0]
            estimate_elbo_const_mem(flow, std_normal, np.random.default_rng(0))
            return tracemalloc.get_traced_memory()[1] - base
        finally:
            tracemalloc.stop()

    peak(10)
    assert peak(1000) - peak(10) < 16384


def test_elbo_accepts_augmented_target(banana_flow, banana):
    augmented = augment_target(banana, banana_flow.reference.momentum)
    a = estimate_elbo(banana_flow, augmented, np.random.default_rng(8))
    b = estimate_elbo(banana_flow, banana, np.random.default_rng(8))
    assert a == b


def test_elbo_rejects_wrong_target_dimension(banana_flow, std_normal):
    with pytest.raises(InvalidArgumentError):
        estimate_elbo(banana_flow, std_normal, np.random.default_rng(0))


# =================
# ELBO VS BURN-IN
# =================

def test_burnin_curve(banana):
    flow = make_flow(banana, epsilon=0.1, n_leapfrog=5, n_steps=20)
    curve = elbo_vs_burnin(flow, banana, np.random.default_rng(12), [0, 5, 10, 19])
    assert [m for m, _ in curve] == [0, 5, 10, 19]
    assert_allclose(curve[0][1], estimate_elbo(flow, banana, np.random.default_rng(12)), atol=1e-6)
    burned = flow.with_steps(20, 5)
    assert_allclose(curve[1][1], _naive_elbo(burned, banana, 12), rtol=1e-8)


def test_identity_burnin_curve(std_normal):
    flow = make_identity_flow(1, n_steps=10)
    for _, value in elbo_vs_burnin(flow, std_normal, np.random.default_rng(0), range(10)):
        assert abs(value) < 1e-10


def test_burnin_curve_rejects_invalid_values(banana_flow, banana):
    with pytest.raises(InvalidArgumentError):
        elbo_vs_burnin(banana_flow, banana, np.random.default_rng(0), [0, banana_flow.n_steps])


@pytest.mark.parametrize('width', [1, 2, 3, 7, 13, 40])
def test_sliding_logsumexp(rng, width):
    values = rng.normal(scale=30.0, size=40)
    values[5] = -np.inf
    expected = [logsumexp(values[s:s + width]) for s in range(40 - width + 1)]
    assert_allclose(sliding_logsumexp(values, width), expected, rtol=1e-12, atol=1e-12)


def test_sliding_logsumexp_rejects_width():
    with pytest.raises(InvalidArgumentError):
        sliding_logsumexp(np.zeros(3), 4)


# ====================
# TRAJECTORY AVERAGES
# ====================

def test_trajectory_average_of_constant(banana_flow):
    assert trajectory_average(banana_flow, lambda s: np.full(s.batch_shape, 3.0), np.random.default_rng(0)) == 3.0


def test_trajectory_average_single_component(banana_flow):
    flow = banana_flow.with_steps(1)
    x0 = flow.reference.sample(np.random.default_rng(6))
    value = trajectory_average(flow, lambda s: s.x[..., 0], np.random.default_rng(6))
    assert value == float(x0.x[0])


def _l1_norm(state):
    return np.sum(np.abs(state.x), axis=-1)


def test_trajectory_average_is_unbiased(banana_flow):
    flow = banana_flow.with_steps(50)
    starts = flow.reference.sample(np.random.default_rng(31), (5000,))
    averages = trajectory_averages(flow, _l1_norm, starts)
    draws = _l1_norm(sample(flow, np.random.default_rng(32), size=5000))
    pooled = math.sqrt(averages.var(ddof=1) / 5000 + draws.var(ddof=1) / 5000)
    assert abs(averages.mean() - draws.mean()) < 3 * pooled


def test_trajectory_averages_batch(banana_flow, rng):
    start = banana_flow.reference.sample(rng, (4,))
    batch = trajectory_averages(banana_flow, lambda s: s.x[..., 1], start)
    single = trajectory_averages(banana_flow, lambda s: s.x[..., 1], start[2])
    assert_allclose(batch[2], single, rtol=1e-12)


# ===========
# REPLICATION
# ===========

def test_replicates_do_not_depend_on_workers(banana_flow, banana):
    serial = estimate_elbo_replicated(banana_flow, banana, seed=7, replicates=6, workers=1)
    parallel = estimate_elbo_replicated(banana_flow, banana, seed=7, replicates=6, workers=3)
    assert np.array_equal(serial.values, parallel.values)
    assert serial.stderr > 0


def test_single_replicate_has_no_stderr(banana_flow, banana):
    result = estimate_elbo_replicated(banana_flow, banana, seed=7, replicates=1)
    assert math.isnan(result.stderr)
    assert result.values.shape == (1,)


def test_replicate_streams_differ(banana_flow, banana):
    a = estimate_elbo_replicated(banana_flow, banana, seed=7, replicates=3, stream=(0,))
    b = estimate_elbo_replicated(banana_flow, banana, seed=7, replicates=3, stream=(1,))
    assert not np.array_equal(a.values, b.values)


@pytest.mark.slow
def test_elbo_improves_with_flow_length():
    target = synthetic_target('gauss1d')
    flow = make_flow(target, epsilon=0.05, n_leapfrog=50, n_steps=1)
    single = estimate_elbo_replicated(flow, target, seed=3, replicates=32)
    mixed = estimate_elbo_replicated(flow.with_steps(100), target, seed=3, replicates=32)
    # KL(N(0, 1) || N(2, 2^2)) = 0.8181 at N = 1
    assert abs(single.mean + 0.8181) < 4 * single.stderr
    assert mixed.mean - single.mean > 0.4

    draws = sample(flow.with_steps(100), np.random.default_rng(5), size=10000).x[:, 0]
    assert abs(draws.mean() - 2.0) < 0.1
    assert abs(draws.std() - 2.0) < 0.15


def _elbo_curve(target, epsilon, n_leapfrog, grid, replicates=64):
    flow = make_flow(target, epsilon=epsilon, n_leapfrog=n_leapfrog, n_steps=1)
    estimates = [estimate_elbo_replicated(flow.with_steps(n), target, seed=11, replicates=replicates) for n in grid]
    return np.array([e.mean for e in estimates]), np.array([e.stderr for e in estimates])


@pytest.mark.slow
def test_coarse_step_size_peaks_then_declines(banana):
    grid = [1, 10, 50, 100, 200, 400]
    coarse, coarse_se = _elbo_curve(banana, 0.2, 10, grid)
    best = int(np.argmax(coarse))
    assert 0 < best < len(grid) - 1
    assert coarse[-1] < coarse[best] - 3 * math.hypot(coarse_se[-1], coarse_se[best])

    # forty times finer: no decline anywhere on the grid
    fine, fine_se = _elbo_curve(banana, 0.005, 5, grid)
    for i in range(len(grid) - 1):
        assert fine[i + 1] >= fine[i] - 3 * math.hypot(fine_se[i], fine_se[i + 1])
