import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdplab.core import FiniteMdp, optimal_gain
from mdplab.envs import make_racetrack, make_riverswim_mdp, make_shaping_toy, random_mdp
from mdplab.errors import NonConvergence, ValidationError
from mdplab.metrics import mehc
from mdplab.ofu import (
    ExtendedMdp,
    FixedPolicy,
    Ucrl2,
    check_initial_state_gain,
    evi,
    make_learner,
    optimal_subchain,
    optimistic_transitions,
    regret_report,
    reset_ucrl_step,
    run_learning,
    ucrl2_step,
)


def seeds():
    return st.integers(min_value=0, max_value=2**31 - 1)


def grid_inner_max(p_hat, radius, u, step=1e-3):
    """Exhaustive search over a 2-point simplex grid."""
    best, arg = p_hat @ u, p_hat
    for q0 in np.arange(0.0, 1.0 + step / 2, step):
        q = np.array([q0, 1 - q0])
        if np.abs(q - p_hat).sum() <= radius + 1e-12 and q @ u > best:
            best, arg = q @ u, q
    return arg


# ---------------------------------------------------------------------------
# inner maximization
# ---------------------------------------------------------------------------


def test_inner_max_example():
    q = optimistic_transitions(np.array([0.5, 0.5]), np.array(0.2), np.array([0.0, 1.0]))
    assert np.allclose(q, [0.4, 0.6], atol=1e-15)
    assert np.allclose(grid_inner_max(np.array([0.5, 0.5]), 0.2, np.array([0.0, 1.0])), q, atol=1e-9)


@given(seeds(), st.floats(0.0, 2.0))
@settings(max_examples=40, deadline=None)
def test_inner_max_matches_grid_on_two_states(seed, radius):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet([1, 1])
    u = rng.normal(size=2)
    q = optimistic_transitions(p, np.array(radius), u)
    g = grid_inner_max(p, radius, u)
    assert q @ u >= g @ u - 1e-12
    assert q @ u - g @ u <= 1e-3 * np.abs(u).sum()


@given(seeds(), st.integers(2, 7), st.floats(0.0, 2.0))
@settings(max_examples=40, deadline=None)
def test_inner_max_feasible_and_near_optimal(seed, n, radius):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n))
    u = rng.normal(size=n)
    q = optimistic_transitions(p, np.array(radius), u)
    assert q.min() >= 0 and abs(q.sum() - 1) <= 1e-12
    assert np.abs(q - p).sum() <= radius + 1e-12
    # random feasible points: mix p with random distributions inside the ball
    cand = rng.dirichlet(np.ones(n), size=10_000)
    dist = np.abs(cand - p).sum(axis=1)
    lam = np.minimum(1.0, radius / np.maximum(dist, 1e-300))
    pts = p + lam[:, None] * (cand - p)
    assert (pts @ u).max() <= q @ u + 1e-12


def test_inner_max_tie_goes_to_lower_index():
    q = optimistic_transitions(np.array([0.2, 0.4, 0.4]), np.array(0.4), np.array([0.0, 1.0, 1.0]))
    assert np.allclose(q, [0.0, 0.6, 0.4])


# ---------------------------------------------------------------------------
# extended value iteration
# ---------------------------------------------------------------------------


@given(seeds(), st.integers(2, 5), st.integers(1, 3))
@settings(max_examples=30, deadline=None)
def test_evi_with_zero_radii_is_value_iteration(seed, n, a):
    m = random_mdp(np.random.default_rng(seed), n, a)
    res = evi(ExtendedMdp.around(m), 1e-10, aperiodicity=0.5)
    assert res.gain == pytest.approx(optimal_gain(m).max(), abs=1e-8)


def test_evi_toy_policy(toy):
    res = evi(ExtendedMdp.around(toy, 0.01, 0.0), 1e-10)
    assert list(res.policy) == [1, 0]


@given(seeds(), st.floats(0.0, 0.5), st.floats(0.0, 0.2))
@settings(max_examples=30, deadline=None)
def test_evi_optimism(seed, p_rad, r_rad):
    m = random_mdp(np.random.default_rng(seed), 4, 2)
    res = evi(ExtendedMdp.around(m, p_rad, r_rad), 1e-9, aperiodicity=0.9)
    assert res.gain >= optimal_gain(m).max() - 1e-8


@given(seeds(), st.floats(0.0, 0.5))
@settings(max_examples=20, deadline=None)
def test_evi_spans_bounded_by_mehc(seed, p_rad):
    m = random_mdp(np.random.default_rng(seed), 4, 2)
    res = evi(ExtendedMdp.around(m, p_rad, 0.0), 1e-8, record_spans=True, max_iter=10**5)
    assert res.spans.max() <= mehc(m) + 1e-6


def test_evi_non_convergence(toy):
    with pytest.raises(NonConvergence) as err:
        evi(ExtendedMdp.around(toy), 1e-14, max_iter=2)
    assert err.value.last_span >= 0


def test_extended_mdp_validation(toy):
    ext = ExtendedMdp.around(toy)
    with pytest.raises(ValidationError):
        ExtendedMdp(ext.counts, ext.r_hat, ext.p_hat, ext.r_radius - 1, ext.p_radius, ext.known_exact)
    exact = np.ones_like(ext.known_exact)
    with pytest.raises(ValidationError):
        ExtendedMdp(ext.counts, ext.r_hat, ext.p_hat, ext.r_radius + 0.1, ext.p_radius, exact)


# ---------------------------------------------------------------------------
# learners
# ---------------------------------------------------------------------------


def test_radii_formulas():
    lr = Ucrl2(3, 2, delta=0.1)
    lr.t = 100
    lr.counts[0, 0] = 25
    lr.p_counts[0, 0, 1] = 25
    ext = lr.extended_mdp()
    assert ext.r_radius[0, 0] == pytest.approx(np.sqrt(7 * np.log(2 * 3 * 2 * 100 / 0.1) / 50))
    assert ext.p_radius[0, 0] == pytest.approx(np.sqrt(14 * 3 * np.log(2 * 2 * 100 / 0.1) / 25))
    assert ext.p_radius[1, 1] == pytest.approx(np.sqrt(14 * 3 * np.log(2 * 2 * 100 / 0.1)))
    assert np.allclose(ext.p_hat[1, 1], 1 / 3)


def test_bernstein_radii_never_wider():
    m = make_riverswim_mdp()
    a = make_learner("ucrl2", m)
    b = make_learner("ucrl2-bernstein", m)
    run_learning(m, a, 3000, 0)
    run_learning(m, b, 3000, 0)
    b.counts, b.nu, b.p_counts = a.counts, a.nu, a.p_counts
    b.r_sum, b.r_sq, b.t = a.r_sum, a.r_sq, a.t
    assert np.all(b.extended_mdp().r_radius <= a.extended_mdp().r_radius + 1e-15)


def test_single_state_no_regret():
    m = FiniteMdp.from_means(np.ones((1, 3, 1)), [[0.4, 0.4, 0.4]])
    tr = run_learning(m, make_learner("ucrl2", m), 500, 0)
    rep = regret_report(tr, m)
    assert np.allclose(rep.regret, 0.0, atol=1e-9)


def test_deterministic_traces():
    m = make_riverswim_mdp()
    a = run_learning(m, make_learner("ucrl2", m), 2000, 5)
    b = run_learning(m, make_learner("ucrl2", m), 2000, 5)
    for f in ("states", "actions", "rewards", "episodes"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_trace_bookkeeping():
    m = make_racetrack()
    tr = run_learning(m, make_learner("ucrl2", m), 3000, 1)
    assert tr.cumulative_reward[-1] == pytest.approx(tr.rewards.sum())
    assert tr.cumulative_resets[-1] == np.count_nonzero(tr.actions == 3)
    assert tr.resets_per_state(8).sum() == tr.cumulative_resets[-1]
    rep = regret_report(tr, m)
    t = np.arange(1, 3001)
    assert np.allclose(rep.regret, t * (160 / 1107) - np.cumsum(tr.rewards), atol=1e-9)
    assert set(rep.curves()) == {"cumulative_resets", "average_resets", "average_reward", "subchain_resets"}


def _regret_ratio(horizon, n_seeds):
    m = make_riverswim_mdp()
    rho = optimal_gain(m)[0]
    early, late = [], []
    for seed in range(n_seeds):
        cum = run_learning(m, make_learner("ucrl2", m), horizon, seed).cumulative_reward
        early.append((1_000 * rho - cum[999]) / 1_000)
        late.append((horizon * rho - cum[-1]) / horizon)
    return np.median(late) / np.median(early)


@pytest.mark.xfail(strict=True, reason="with the standard confidence constants UCRL2 is still exploring at 1e5 steps")
def test_regret_halves_by_1e5_steps():
    assert _regret_ratio(100_000, 20) < 0.5


@pytest.mark.slow
def test_regret_sublinear_on_riverswim():
    assert _regret_ratio(1_000_000, 5) < 0.5


def test_zero_reward_env_has_zero_regret():
    m = random_mdp(np.random.default_rng(0), 3, 2).with_means(np.zeros((3, 2)))
    rep = regret_report(run_learning(m, make_learner("ucrl2", m), 300, 0), m)
    assert np.all(rep.regret == 0)


def test_optimal_policy_regret_vanishes():
    m = make_riverswim_mdp()
    res = evi(ExtendedMdp.around(m), 1e-12)
    rep = regret_report(run_learning(m, FixedPolicy(res.policy), 100_000, 0), m)
    assert abs(rep.regret[-1]) / 100_000 < 0.01


def test_optimal_subchain_racetrack():
    assert list(optimal_subchain(make_racetrack())) == [True] * 4 + [False] * 4
    assert optimal_subchain(make_riverswim_mdp()).all()


def test_initial_state_check_warns_on_racetrack():
    with pytest.warns(UserWarning):
        assert not check_initial_state_gain(make_racetrack())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_initial_state_gain(make_riverswim_mdp())


def test_reset_entries_known_exact():
    m = make_racetrack()
    lr = make_learner("reset-ucrl", m)
    run_learning(m, lr, 5000, 0)
    ext = lr.extended_mdp()
    assert ext.known_exact[:, 3].all() and not ext.known_exact[:, :3].any()
    assert np.all(ext.p_hat[:, 3, 0] == 1.0) and np.all(ext.r_hat[:, 3] == 0.0)
    assert np.all(ext.p_radius[:, 3] == 0) and np.all(ext.r_radius[:, 3] == 0)


def test_reset_flag_off_matches_ucrl2():
    m = make_riverswim_mdp()
    a = run_learning(m, Ucrl2(6, 2, reset=None), 3000, 2)
    b = run_learning(m, make_learner("ucrl2", m), 3000, 2)
    assert np.array_equal(a.actions, b.actions)
    with pytest.raises(ValidationError):
        make_learner("reset-ucrl", m)
    with pytest.raises(ValidationError):
        reset_ucrl_step(Ucrl2(6, 2), 0)


def test_step_interface():
    m = make_racetrack()
    lr = make_learner("reset-ucrl", m)
    a = reset_ucrl_step(lr, 0)
    b = reset_ucrl_step(lr, (0, a, 0.0, 1))
    assert 0 <= b < 4 and lr.t == 2
    lr2 = make_learner("ucrl2", m)
    assert ucrl2_step(lr2, 0) == a


def _reset_mdp(seed):
    """Communicating MDP with positive rewards plus a zero-reward reset."""
    rng = np.random.default_rng(seed)
    base = random_mdp(rng, 4, 2)
    p = np.concatenate([base.transitions, np.zeros((4, 1, 4))], axis=1)
    p[:, 2, 0] = 1.0
    r = np.concatenate([0.5 + 0.5 * base.mean_rewards, np.zeros((4, 1))], axis=1)
    return FiniteMdp.from_means(p, r, reset=(2, 0))


def test_reset_ucrl_resets_less_when_reset_is_dominated():
    m = _reset_mdp(3)
    plain, reset = [], []
    for seed in range(20):
        plain.append(run_learning(m, make_learner("ucrl2", m), 5000, seed).cumulative_resets[-1])
        reset.append(run_learning(m, make_learner("reset-ucrl", m), 5000, seed).cumulative_resets[-1])
    assert np.median(reset) <= np.median(plain)


def test_plain_ucrl2_resets_inside_optimal_subchain():
    m = make_racetrack()
    rep = regret_report(run_learning(m, make_learner("ucrl2", m), 20_000, 0), m)
    assert rep.subchain_resets[-1] > 0
