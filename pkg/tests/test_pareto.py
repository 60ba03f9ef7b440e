import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdplab.core import FiniteMdp, StochasticPolicy, optimal_gain, stationary_distribution
from mdplab.envs import make_multireward_toy, random_chain, random_mdp
from mdplab.errors import DegenerateChain, ValidationError
from mdplab.pareto import (
    DirectConeConfig,
    MultiRewardMdp,
    common_ascent_direction,
    direct_cone_optimize,
    fd_tangent_gradient,
    gain_determinant,
    gain_gradient,
    gains,
    project_tangent,
    sample_gain_cloud,
    steer,
)


def seeds():
    return st.integers(min_value=0, max_value=2**31 - 1)


@pytest.fixture(scope="module")
def toy2():
    m, tables = make_multireward_toy(0.1)
    return MultiRewardMdp(m, tables)


def random_policies(rng, n, n_s, n_a):
    return rng.dirichlet(np.ones(n_a), size=(n, n_s))


def dominated_by(cloud, g, tol):
    return np.any(np.all(cloud > g + tol, axis=1))


# ---------------------------------------------------------------------------
# determinant gain
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("eps", [0.01, 0.3, 0.9])
def test_symmetric_chain(eps):
    assert gain_determinant([[1 - eps, eps], [eps, 1 - eps]], [1, 0]) == pytest.approx(0.5, abs=1e-12)


def test_block_diagonal_is_degenerate():
    p = np.kron(np.eye(2), np.full((2, 2), 0.5))
    with pytest.raises(DegenerateChain):
        gain_determinant(p, np.ones(4))


def test_toy_always_stay(toy2):
    pi = StochasticPolicy.deterministic([1, 1], 2)
    p, r = toy2.chain(pi)
    sigma = stationary_distribution(p)
    g = gains(toy2, pi)
    assert np.allclose(g, [sigma @ r[0], sigma @ r[1]], atol=1e-9)
    assert np.allclose(g, [0.5, 0.5], atol=1e-12)


@given(seeds(), st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_determinant_matches_stationary(seed, n):
    rng = np.random.default_rng(seed)
    p = random_chain(rng, n)
    r = rng.uniform(-1, 1, size=n)
    assert gain_determinant(p, r) == pytest.approx(stationary_distribution(p) @ r, abs=1e-9)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_constant_reward_has_zero_gradient():
    m = random_mdp(np.random.default_rng(1), 3, 2)
    mm = MultiRewardMdp(m, [np.full((3, 2), 0.4)])
    pi = np.full((3, 2), 0.5)
    assert np.abs(project_tangent(gain_gradient(mm, pi, 0))).max() <= 1e-12


def test_toy_gradient_matches_finite_differences(toy2):
    pi = np.full((2, 2), 0.5)
    for k in range(2):
        an = project_tangent(gain_gradient(toy2, pi, k))
        fd = fd_tangent_gradient(toy2, pi, k)
        assert np.abs(an - fd).max() <= 1e-5 * max(1.0, np.abs(fd).max())


@given(seeds())
@settings(max_examples=10, deadline=None)
def test_gradient_random_instances(seed):
    rng = np.random.default_rng(seed)
    base = random_mdp(rng, 3, 2)
    mm = MultiRewardMdp(base, [rng.uniform(0, 1, (3, 2)), rng.uniform(-1, 1, (3, 2))])
    for pi in random_policies(rng, 10, 3, 2):
        pi = 0.9 * pi + 0.05  # stay clear of the boundary for the probes
        for k in range(2):
            an = project_tangent(gain_gradient(mm, pi, k))
            fd = fd_tangent_gradient(mm, pi, k)
            assert np.abs(an - fd).max() <= 1e-5 * max(1.0, np.abs(fd).max())


def test_gradient_on_degenerate_chain(toy2):
    m, tables = make_multireward_toy(0.0)
    mm = MultiRewardMdp(m, tables)
    with pytest.raises(DegenerateChain):
        gain_gradient(mm, StochasticPolicy.deterministic([1, 1], 2), 0)


def test_reward_tables_validated():
    m, _ = make_multireward_toy()
    with pytest.raises(ValidationError):
        MultiRewardMdp(m, [np.full((2, 2), 2.0)])
    with pytest.raises(ValidationError):
        MultiRewardMdp(m, [])
    # negative reset-style penalties are allowed
    MultiRewardMdp(m, [-np.eye(2)])


# ---------------------------------------------------------------------------
# ascent LP
# ---------------------------------------------------------------------------


def test_orthant_is_feasible():
    asc = common_ascent_direction([[1.0, 0.0], [0.0, 1.0]])
    assert asc.feasible and asc.margin == pytest.approx(1.0)
    assert np.allclose(asc.direction, [1, 1])


def test_opposing_gradients_infeasible():
    asc = common_ascent_direction([[1.0, 0.0], [-1.0, 0.0]])
    assert not asc.feasible and asc.margin <= 0


def test_lp_respects_tangency_and_boundary():
    pi = np.array([[0.0, 1.0], [0.5, 0.5]])
    grads = np.array([[-1.0, 0.0, 1.0, 0.0]])
    asc = common_ascent_direction(grads, pi)
    d = asc.direction
    assert np.allclose(d.sum(axis=1), 0)
    assert d[0, 0] >= 0


def test_empty_active_set():
    with pytest.raises(ValidationError):
        common_ascent_direction([[1.0]], active_set=[])


def _random_tangent_directions(rng, n, shape, pi, tol=1e-9):
    d = rng.normal(size=(n,) + shape)
    d -= d.mean(axis=2, keepdims=True)
    # on the boundary only inward moves are feasible
    at_bd = pi <= tol
    return d[~np.any((d < 0) & at_bd, axis=(1, 2))]


def test_dominated_policy_has_ascent_and_optimum_does_not(toy2):
    rng = np.random.default_rng(0)
    bad = np.array([[0.5, 0.5], [0.5, 0.5]])
    grads = np.stack([gain_gradient(toy2, bad, k).ravel() for k in range(2)])
    assert common_ascent_direction(grads, bad).feasible
    res = direct_cone_optimize(toy2, bad)
    assert res.status == "infeasible"
    pi = res.final.policy.probs
    grads = np.stack([project_tangent(gain_gradient(toy2, pi, k)) for k in range(2)])
    dirs = _random_tangent_directions(rng, 10_000, (2, 2), pi)
    slopes = np.einsum("nsa,ksa->nk", dirs, grads)
    assert not np.any(np.all(slopes > 1e-6, axis=1))


# ---------------------------------------------------------------------------
# direct-cone optimization
# ---------------------------------------------------------------------------


def test_single_reward_reaches_optimal_gain():
    m = random_mdp(np.random.default_rng(8), 3, 2)
    mm = MultiRewardMdp(m, [m.mean_rewards])
    res = direct_cone_optimize(mm, np.full((3, 2), 0.5))
    assert res.final.gains[0] == pytest.approx(optimal_gain(m).max(), abs=1e-6)


def test_uniform_init_on_toy(toy2):
    res = direct_cone_optimize(toy2, np.full((2, 2), 0.5))
    assert res.status == "infeasible"
    g = res.final.gains
    rng = np.random.default_rng(1)
    cloud = np.array([gains(toy2, pi) for pi in random_policies(rng, 10_000, 2, 2)])
    assert not dominated_by(cloud, g, 1e-3)


def test_iterates_are_monotone_and_valid(toy2):
    res = direct_cone_optimize(toy2, np.array([[0.7, 0.3], [0.2, 0.8]]))
    prev = None
    for it in res.iterates:
        pi = it.policy.probs
        assert np.abs(pi.sum(axis=1) - 1).max() <= 1e-12 and pi.min() >= 0
        assert np.allclose(it.gains, gains(toy2, pi), atol=1e-10)
        if prev is not None:
            assert np.all(it.gains >= prev - 1e-12)
        prev = it.gains


def test_corner_init_ends_stochastic(toy2):
    res = direct_cone_optimize(toy2, np.array([[0.999, 0.001], [0.001, 0.999]]))
    assert res.status == "infeasible"
    pi = res.final.policy.probs
    assert np.any((pi > 1e-3) & (pi < 1 - 1e-3))


def test_non_interior_init_is_projected(toy2):
    res = direct_cone_optimize(toy2, np.array([[1.0, 0.0], [0.0, 1.0]]), DirectConeConfig(max_iter=0))
    assert res.iterates[0].policy.probs.min() >= 1e-7


def test_iteration_cap(toy2):
    res = direct_cone_optimize(toy2, np.full((2, 2), 0.5), DirectConeConfig(max_iter=1))
    assert res.status in ("iteration-cap", "infeasible")
    assert len(res.iterates) <= 2


# ---------------------------------------------------------------------------
# steering
# ---------------------------------------------------------------------------


def test_steer_single_objective(toy2):
    res = steer(toy2, np.full((2, 2), 0.5), [((0, 10_000), (0,))], DirectConeConfig(max_iter=2000))
    rng = np.random.default_rng(2)
    cloud = np.array([gains(toy2, pi) for pi in random_policies(rng, 10_000, 2, 2)])
    top = next(it for it in res.iterates if it.active == (0,) and not it.lp_margin > 1e-8)
    assert top.gains[0] >= cloud[:, 0].max() - 1e-3


def test_steer_all_active_equals_plain(toy2):
    init = np.array([[0.6, 0.4], [0.3, 0.7]])
    a = steer(toy2, init, [((0, 10_000), (0, 1))])
    b = direct_cone_optimize(toy2, init)
    assert np.array_equal(a.final.policy.probs, b.final.policy.probs)


def test_steering_moves_towards_first_gain(toy2):
    init = np.full((2, 2), 0.5)
    plain = direct_cone_optimize(toy2, init)
    steered = steer(toy2, init, [((0, 20), (0,))])
    assert steered.status == "infeasible"
    assert steered.final.gains[0] > plain.final.gains[0]


def test_steer_rejects_empty_subset(toy2):
    with pytest.raises(ValidationError):
        steer(toy2, np.full((2, 2), 0.5), [((0, 5), ())])


# ---------------------------------------------------------------------------
# gain clouds
# ---------------------------------------------------------------------------


def test_deterministic_enumeration_count(toy2):
    cloud = sample_gain_cloud(toy2, 0)
    assert cloud.deterministic.shape == (4, 2) and cloud.stochastic.shape == (0, 2)
    assert sorted(map(tuple, np.round(cloud.deterministic, 12))) == [(0, 0), (0, 0.9), (0.5, 0.5), (0.9, 0)]


def test_stochastic_gains_beyond_deterministic(toy2):
    cloud = sample_gain_cloud(toy2, 5000, seed=0)
    det = cloud.deterministic
    # some stochastic gain vector is not dominated by any deterministic one
    undominated = [g for g in cloud.stochastic if not np.any(np.all(det >= g, axis=1))]
    assert undominated
    # gains of any policy satisfy g1 + g2 <= 1, so no point can beat (0.9, 0) and (0, 0.9) at once
    assert np.all(cloud.stochastic.sum(axis=1) <= 1 + 1e-12)


def test_single_reward_cloud_below_optimum():
    m = random_mdp(np.random.default_rng(3), 3, 2)
    cloud = sample_gain_cloud(MultiRewardMdp(m, [m.mean_rewards]), 2000)
    assert cloud.stochastic.max() <= optimal_gain(m).max() + 1e-9
    assert cloud.deterministic.max() == pytest.approx(optimal_gain(m).max(), abs=1e-9)


def test_degenerate_policies_are_counted():
    m, tables = make_multireward_toy(0.0)
    cloud = sample_gain_cloud(MultiRewardMdp(m, tables), 0)
    assert cloud.n_degenerate >= 1 and len(cloud.deterministic) + cloud.n_degenerate == 4
