"""Optimism-in-the-face-of-uncertainty learners.

UCRL2 with extended value iteration (EVI), an empirical-Bernstein reward
radius variant, and Reset-UCRL, which plugs the known semantics of reset
actions into the extended MDP. ``run_learning`` closes the loop with an
environment and ``regret_report`` turns a trace into the usual curves.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mdplab.core import FiniteMdp, _cdf, make_rng, optimal_gain
from mdplab.errors import NonConvergence, ValidationError


@dataclass(frozen=True)
class ExtendedMdp:
    """Confidence sets around empirical estimates, one per state-action pair.

    Rewards range over ``[0, min(r_hat + r_radius, r_max)]`` and transitions
    over the L1 ball of radius ``p_radius`` around ``p_hat`` (intersected
    with the simplex). ``known_exact`` pairs have zero radii.
    """

    counts: np.ndarray
    r_hat: np.ndarray
    p_hat: np.ndarray
    r_radius: np.ndarray
    p_radius: np.ndarray
    known_exact: np.ndarray
    r_max: float = 1.0

    def __post_init__(self):
        if np.any(self.r_radius < 0) or np.any(self.p_radius < 0):
            raise ValidationError("confidence radii must be nonnegative")
        if np.any(self.known_exact & ((self.r_radius != 0) | (self.p_radius != 0))):
            raise ValidationError("known_exact pairs must have zero radii")
        if np.abs(self.p_hat.sum(axis=2) - 1).max() > 1e-9:
            raise ValidationError("p_hat rows must sum to 1")

    @classmethod
    def around(cls, mdp: FiniteMdp, p_radius=0.0, r_radius=0.0) -> "ExtendedMdp":
        """Sets centred at the true parameters of ``mdp`` (truth always inside)."""
        shape = (mdp.n_states, mdp.n_actions)
        pr = np.broadcast_to(np.asarray(p_radius, float), shape).copy()
        rr = np.broadcast_to(np.asarray(r_radius, float), shape).copy()
        return cls(np.zeros(shape), mdp.mean_rewards.copy(), mdp.transitions.copy(), rr, pr, np.zeros(shape, bool), mdp.r_max)

    @property
    def n_states(self) -> int:
        return self.p_hat.shape[0]


def optimistic_transitions(p_hat: np.ndarray, radius: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Maximize ``p @ u`` over the L1 ball around each row of ``p_hat``.

    Adds ``radius / 2`` to the best state (capped at 1) and drains the
    surplus from the worst states first. Ties in ``u`` go to the lower index.
    """
    n = u.size
    order = np.lexsort((np.arange(n), -u))  # best first
    worst_first = order[::-1]
    q = p_hat[..., worst_first].copy()
    q[..., -1] = np.minimum(1.0, q[..., -1] + radius / 2.0)
    excess = q.sum(axis=-1) - 1.0
    before = np.cumsum(q[..., :-1], axis=-1) - q[..., :-1]
    drain = np.clip(excess[..., None] - before, 0.0, q[..., :-1])
    q[..., :-1] -= drain
    out = np.empty_like(q)
    out[..., worst_first] = q
    return out


@dataclass(frozen=True)
class EviResult:
    policy: np.ndarray
    u: np.ndarray
    iterations: int
    gain: float
    spans: Optional[np.ndarray] = None


def evi(ext: ExtendedMdp, tolerance: float, max_iter: int = 10**7, aperiodicity: float = 1.0, record_spans: bool = False, u0=None) -> EviResult:
    """Extended value iteration until ``span(u_{i+1} - u_i) < tolerance``.

    With ``aperiodicity < 1`` the update is ``(1 - tau) u + tau T(u)``, which
    converges on periodic models; the gain estimate is rescaled accordingly.
    ``record_spans`` keeps ``span(u_i)`` of every iterate.
    """
    tau = aperiodicity
    if not 0 < tau <= 1:
        raise ValidationError("aperiodicity must lie in (0, 1]")
    r_opt = np.minimum(ext.r_hat + ext.r_radius, ext.r_max)
    u = np.zeros(ext.n_states) if u0 is None else np.asarray(u0, float).copy()
    spans = [float(u.max() - u.min())] if record_spans else None
    diff = np.zeros_like(u)
    for i in range(1, max_iter + 1):
        p_opt = optimistic_transitions(ext.p_hat, ext.p_radius, u)
        q = r_opt + p_opt @ u
        new = q.max(axis=1)
        if tau < 1:
            new = (1 - tau) * u + tau * new
        diff = new - u
        u = new - new.min()  # keep iterates bounded; spans are shift-invariant
        if record_spans:
            spans.append(float(u.max() - u.min()))
        if diff.max() - diff.min() < tolerance:
            policy = q.argmax(axis=1)
            gain = 0.5 * (diff.max() + diff.min()) / tau
            return EviResult(policy, u, i, float(gain), None if spans is None else np.array(spans))
    raise NonConvergence(f"EVI did not converge in {max_iter} iterations", last_span=float(diff.max() - diff.min()))


# ---------------------------------------------------------------------------
# learners
# ---------------------------------------------------------------------------


class Ucrl2:
    """UCRL2 with the doubling episode rule.

    Set ``bernstein`` for empirical-Bernstein reward radii and pass
    ``reset=(action, initial_state)`` to get Reset-UCRL.
    """

    def __init__(self, n_states: int, n_actions: int, r_max: float = 1.0, delta: float = 0.05, bernstein: bool = False, reset: Optional[tuple] = None, aperiodicity: float = 0.99):
        if not 0 < delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        self.n_states, self.n_actions = n_states, n_actions
        self.r_max, self.delta = r_max, delta
        self.bernstein = bernstein
        self.reset = None if reset is None else (int(reset[0]), int(reset[1]))
        self.aperiodicity = aperiodicity
        self.counts = np.zeros((n_states, n_actions))
        self.nu = np.zeros((n_states, n_actions))
        self.r_sum = np.zeros((n_states, n_actions))
        self.r_sq = np.zeros((n_states, n_actions))
        self.p_counts = np.zeros((n_states, n_actions, n_states))
        self.t = 1
        self.episode = 0
        self.policy = None

    @property
    def name(self) -> str:
        if self.reset is not None:
            return "reset-ucrl"
        return "ucrl2-bernstein" if self.bernstein else "ucrl2"

    def extended_mdp(self) -> ExtendedMdp:
        s, a = self.n_states, self.n_actions
        n = self.counts + self.nu  # equals self.counts at episode starts
        n1 = np.maximum(1.0, n)
        t = max(self.t, 1)
        r_hat = np.where(n > 0, self.r_sum / n1, 0.0)
        p_hat = np.where(n[..., None] > 0, self.p_counts / n1[..., None], 1.0 / s)
        log_r = math.log(2 * s * a * t / self.delta)
        r_rad = self.r_max * np.sqrt(7 * log_r / (2 * n1))
        if self.bernstein:
            var = np.maximum(np.where(n > 0, self.r_sq / n1, 0.0) - r_hat**2, 0.0)
            bern = np.sqrt(2 * var * log_r / n1) + 7 * self.r_max * log_r / (3 * np.maximum(1.0, n - 1))
            r_rad = np.minimum(r_rad, bern)
        p_rad = np.sqrt(14 * s * math.log(2 * a * t / self.delta) / n1)
        exact = np.zeros((s, a), dtype=bool)
        if self.reset is not None:
            act, init = self.reset
            exact[:, act] = True
            r_hat[:, act] = 0.0
            p_hat[:, act, :] = 0.0
            p_hat[:, act, init] = 1.0
            r_rad[:, act] = 0.0
            p_rad[:, act] = 0.0
        return ExtendedMdp(n.copy(), r_hat, p_hat, r_rad, p_rad, exact, self.r_max)

    def _new_episode(self):
        self.counts += self.nu
        self.nu[:] = 0.0
        self.episode += 1
        res = evi(self.extended_mdp(), self.r_max / math.sqrt(self.t), aperiodicity=self.aperiodicity)
        self.policy = res.policy

    def act(self, state: int) -> int:
        if self.policy is None:
            self._new_episode()
        a = self.policy[state]
        if self.nu[state, a] >= max(1.0, self.counts[state, a]):
            self._new_episode()
            a = self.policy[state]
        return int(a)

    def observe(self, state: int, action: int, reward: float, next_state: int) -> None:
        self.nu[state, action] += 1
        self.r_sum[state, action] += reward
        self.r_sq[state, action] += reward * reward
        self.p_counts[state, action, next_state] += 1
        self.t += 1


def make_learner(kind: str, mdp: FiniteMdp, delta: float = 0.05) -> Ucrl2:
    if kind == "ucrl2":
        return Ucrl2(mdp.n_states, mdp.n_actions, mdp.r_max, delta)
    if kind == "ucrl2-bernstein":
        return Ucrl2(mdp.n_states, mdp.n_actions, mdp.r_max, delta, bernstein=True)
    if kind == "reset-ucrl":
        if mdp.reset is None:
            raise ValidationError("reset-ucrl needs an MDP with a reset action")
        return Ucrl2(mdp.n_states, mdp.n_actions, mdp.r_max, delta, reset=mdp.reset)
    raise ValidationError(f"unknown learner {kind!r}")


def ucrl2_step(learner: Ucrl2, observation) -> int:
    """Feed ``(prev_state, prev_action, reward, state)`` (or just ``state`` first) and act."""
    if isinstance(observation, tuple):
        s, a, r, nxt = observation
        learner.observe(s, a, r, nxt)
        observation = nxt
    return learner.act(int(observation))


def reset_ucrl_step(learner: Ucrl2, observation) -> int:
    if learner.reset is None:
        raise ValidationError("learner was not told about a reset action")
    return ucrl2_step(learner, observation)


class FixedPolicy:
    """A stationary deterministic policy posing as a learner."""

    def __init__(self, actions):
        self.actions = np.asarray(actions, dtype=int)
        self.episode = 0

    def act(self, state: int) -> int:
        return int(self.actions[state])

    def observe(self, *args) -> None:
        pass


@dataclass(frozen=True)
class LearnerTrace:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    episodes: np.ndarray
    reset_action: Optional[int] = None
    seed: Optional[int] = None

    @property
    def cumulative_reward(self) -> np.ndarray:
        return np.cumsum(self.rewards)

    @property
    def is_reset(self) -> np.ndarray:
        if self.reset_action is None:
            return np.zeros(self.actions.size, dtype=bool)
        return self.actions == self.reset_action

    @property
    def cumulative_resets(self) -> np.ndarray:
        return np.cumsum(self.is_reset)

    def resets_per_state(self, n_states: int) -> np.ndarray:
        return np.bincount(self.states[self.is_reset], minlength=n_states)


def run_learning(env: FiniteMdp, learner, horizon: int, seed: int, start: int = 0) -> LearnerTrace:
    """Run ``learner`` on ``env`` for ``horizon`` steps.

    Each step consumes three uniforms (unused component slot, next state,
    reward), matching the sampling convention of the MRP samplers.
    """
    rng = make_rng(seed)
    cdf = _cdf(env.transitions)
    kind, a_tab, b_tab = env.rewards.kind, env.rewards.a, env.rewards.b
    offsets = env.rewards.offsets
    states = np.empty(horizon, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon)
    episodes = np.empty(horizon, dtype=np.int64)
    s = start
    block = 4096
    for lo in range(0, horizon, block):
        u = rng.random((min(block, horizon - lo), 3))
        for j in range(u.shape[0]):
            t = lo + j
            a = learner.act(s)
            nxt = int(np.searchsorted(cdf[s, a], u[j, 1], side="right"))
            k = kind[s, a]
            if k == 0:
                r = a_tab[s, a]
            elif k == 1:
                r = b_tab[s, a] if u[j, 2] < a_tab[s, a] else 0.0
            else:
                r = a_tab[s, a] + (b_tab[s, a] - a_tab[s, a]) * u[j, 2]
            if offsets is not None:
                r += offsets[s, a, nxt]
            states[t], actions[t], rewards[t], episodes[t] = s, a, r, learner.episode
            learner.observe(s, a, r, nxt)
            s = nxt
    return LearnerTrace(states, actions, rewards, episodes, None if env.reset is None else env.reset[0], seed)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def optimal_bias(mdp: FiniteMdp, tol: float = 1e-12, max_iter: int = 10**6):
    """Gain and bias of a communicating MDP by relative value iteration."""
    p, r = mdp.transitions, mdp.mean_rewards
    h = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        t = 0.5 * h + 0.5 * (r + p @ h).max(axis=1)
        diff = t - h
        h = t - t[0]
        if diff.max() - diff.min() < tol:
            return 2 * float(diff.mean()), h
    raise NonConvergence("relative value iteration did not converge")


def optimal_subchain(mdp: FiniteMdp) -> np.ndarray:
    """States where some non-reset action is optimal, i.e. resetting is never needed."""
    if mdp.reset is None:
        return np.ones(mdp.n_states, dtype=bool)
    _, h = optimal_bias(mdp)
    q = mdp.mean_rewards + mdp.transitions @ h
    act = mdp.reset[0]
    others = np.delete(q, act, axis=1).max(axis=1)
    return others >= q[:, act] - 1e-9


def check_initial_state_gain(mdp: FiniteMdp) -> bool:
    """True when adding resets leaves the initial state's optimal gain unchanged; warns otherwise."""
    if mdp.reset is None:
        return True
    init = mdp.reset[1]
    with_reset = optimal_gain(mdp)[init]
    without = optimal_gain(mdp.without_reset())[init]
    ok = with_reset <= without + 1e-9
    if not ok:
        warnings.warn(
            f"resets raise the optimal gain of the initial state ({without:.6g} -> {with_reset:.6g})",
            stacklevel=2,
        )
    return bool(ok)


@dataclass(frozen=True)
class RegretReport:
    gain: float
    regret: np.ndarray
    cumulative_resets: np.ndarray
    average_resets: np.ndarray
    average_reward: np.ndarray
    subchain_resets: np.ndarray

    def curves(self) -> dict:
        return {
            "cumulative_resets": self.cumulative_resets,
            "average_resets": self.average_resets,
            "average_reward": self.average_reward,
            "subchain_resets": self.subchain_resets,
        }


def regret_report(trace: LearnerTrace, env: FiniteMdp, start: int = 0) -> RegretReport:
    rho = float(optimal_gain(env)[start])
    t = np.arange(1, trace.rewards.size + 1)
    cum = trace.cumulative_reward
    resets = trace.is_reset
    inside = optimal_subchain(env)[trace.states]
    return RegretReport(
        rho, t * rho - cum, np.cumsum(resets), np.cumsum(resets) / t,
        cum / t, np.cumsum(resets & inside),
    )
