"""Catalog of the small benchmark environments."""

from __future__ import annotations

import numpy as np

from mdplab.core import FiniteMdp, Mrp, RewardTable
from mdplab.errors import ValidationError


def make_riverswim_mrp() -> Mrp:
    """Six-state RiverSwim chain under the always-swim-upstream policy.

    Reward is a point mass of 1 at the most upstream state, 0 elsewhere.
    """
    p = np.zeros((6, 6))
    p[0, 0], p[0, 1] = 0.7, 0.3
    for s in range(1, 5):
        p[s, s - 1], p[s, s], p[s, s + 1] = 0.1, 0.6, 0.3
    p[5, 4], p[5, 5] = 0.7, 0.3
    r = np.zeros(6)
    r[5] = 1.0
    return Mrp.from_matrix(p, r, r_max=1.0)


def make_riverswim_mdp() -> FiniteMdp:
    """RiverSwim with both actions: 0 swims downstream, 1 swims upstream.

    Downstream moves one state left deterministically (staying at the left
    bank) and pays 0.005 at the left bank; upstream follows the chain of
    :func:`make_riverswim_mrp`.
    """
    n = 6
    p = np.zeros((n, 2, n))
    for s in range(n):
        p[s, 0, max(s - 1, 0)] = 1.0
    p[:, 1, :] = make_riverswim_mrp().transition_matrix
    r = np.zeros((n, 2))
    r[0, 0] = 0.005
    r[n - 1, 1] = 1.0
    return FiniteMdp.from_means(p, r, r_max=1.0)


def make_shaping_toy(alpha: float = 0.11, beta: float = 0.1, epsilon: float = 0.05) -> FiniteMdp:
    """Two states, two actions: ``a1`` (index 0) stays, ``a2`` (index 1) flips w.p. epsilon.

    Mean reward is ``1 - alpha`` at s1 and ``1 - beta`` at s2 for both actions.
    """
    if not (0 <= alpha <= 1 and 0 <= beta <= 1 and 0 < epsilon < 1):
        raise ValidationError("need alpha, beta in [0, 1] and epsilon in (0, 1)")
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = p[1, 0, 1] = 1.0
    p[0, 1] = [1 - epsilon, epsilon]
    p[1, 1] = [epsilon, 1 - epsilon]
    r = np.array([[1 - alpha, 1 - alpha], [1 - beta, 1 - beta]])
    return FiniteMdp.from_means(p, r, r_max=1.0)


def make_racetrack(l: int = 4, k: int = 2, delta: float = 0.2, with_reset: bool = True) -> FiniteMdp:
    """Lap racing MDP.

    States ``0..l-1`` are track positions, ``l..2l-1`` the crashed state at
    each position. Action 0 is the good action (advance, wrapping around, with
    probability ``1 - delta``; otherwise crash), actions ``1..k`` crash
    deterministically, and action ``k + 1`` (when ``with_reset``) moves to
    position 0 with zero reward. Any non-reset action taken at the last track
    position pays 1, so one lap earns one unit and resetting never pays on
    the track. Crashed states are absorbing under non-reset actions.
    """
    if l < 2 or k < 0 or not 0 <= delta <= 1:
        raise ValidationError("need l >= 2, k >= 0, delta in [0, 1]")
    n = 2 * l
    n_a = k + 1 + int(with_reset)
    p = np.zeros((n, n_a, n))
    r = np.zeros((n, n_a))
    for j in range(l):
        crash = l + j
        p[j, 0, (j + 1) % l] += 1 - delta
        p[j, 0, crash] += delta
        for a in range(1, k + 1):
            p[j, a, crash] = 1.0
        p[crash, : k + 1, crash] = 1.0
    r[l - 1, : k + 1] = 1.0
    reset = None
    if with_reset:
        p[:, k + 1, 0] = 1.0
        reset = (k + 1, 0)
    return FiniteMdp.from_means(p, r, r_max=1.0, reset=reset)


def make_multireward_toy(epsilon: float = 0.1):
    """Two-state, two-reward MDP; action 0 switches state, action 1 stays.

    Each action has the opposite effect with probability ``epsilon``. Reward
    table 0 pays 1 for staying at s1, table 1 pays 1 for staying at s2.
    Returns ``(mdp, [reward_table_0, reward_table_1])``.
    """
    if not 0 <= epsilon <= 1:
        raise ValidationError("epsilon must lie in [0, 1]")
    p = np.zeros((2, 2, 2))
    p[0, 0] = [epsilon, 1 - epsilon]
    p[1, 0] = [1 - epsilon, epsilon]
    p[0, 1] = [1 - epsilon, epsilon]
    p[1, 1] = [epsilon, 1 - epsilon]
    r1 = np.array([[0.0, 1.0], [0.0, 0.0]])
    r2 = np.array([[0.0, 0.0], [0.0, 1.0]])
    return FiniteMdp.from_means(p, r1, r_max=1.0), [r1, r2]


def make_mk_chain(k: int) -> np.ndarray:
    """Chain M_k: s1 self-loops w.p. 1 - 1/(k-1), else walks s2 -> ... -> sk -> s1."""
    if k < 3:
        raise ValidationError("M_k needs k >= 3")
    p = np.zeros((k, k))
    p[0, 0] = 1 - 1 / (k - 1)
    p[0, 1] = 1 / (k - 1)
    for s in range(1, k):
        p[s, (s + 1) % k] = 1.0
    return p


def make_final_visit_chains():
    """The three two/three-state MRPs with rewards 1 at s2 only.

    Returns ``(top, middle, bottom)``; the start state is index 0 in each.
    """
    top = Mrp.from_matrix([[0.0, 1.0], [0.0, 1.0]], [0.0, 1.0])
    middle = Mrp.from_matrix(
        [[0.0, 0.5, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0, 1.0, 0.0]
    )
    bottom = Mrp.from_matrix([[0.0, 1.0], [0.0, 1.0]], [0.0, 0.0])
    return top, middle, bottom


def cycle_chain(n: int) -> np.ndarray:
    return np.roll(np.eye(n), 1, axis=1)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, density: float = 1.0, r_max: float = 1.0) -> FiniteMdp:
    """Random MDP with Dirichlet rows (optionally sparsified) and uniform mean rewards."""
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if density < 1.0:
        keep = rng.random(p.shape) < density
        keep[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], rng.integers(0, n_states, (n_states, n_actions))] = True
        p = np.where(keep, p, 0.0)
        p /= p.sum(axis=2, keepdims=True)
    r = rng.uniform(0, r_max, size=(n_states, n_actions))
    return FiniteMdp.from_means(p, r, r_max=r_max)


def random_chain(rng: np.random.Generator, n_states: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_states), size=n_states)
