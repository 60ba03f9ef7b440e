"""Structural constants of chains and MDPs.

Hitting and recurrence times, diameter, maximum expected hitting cost (MEHC),
the loop constants ``alpha(s) = E_s[gamma^{H_s+}]`` and ``beta(s)``, the
exponential return-time tail bound, and the cover-time bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mdplab.core import FiniteMdp, Mrp, _cdf, _chain, make_rng, subchain_decomposition
from mdplab.errors import InfiniteEntries, InfiniteTau, SingularSystem, TransientState
from mdplab.linalg import dense_solve


@dataclass(frozen=True)
class HittingProfile:
    """Expected first-passage times to ``target``.

    ``expected_hit_from[s']`` is ``E_{s'}[H+]`` (so the entry at the target is
    the recurrence time). ``tau`` maximizes over all start states;
    ``tau_class`` only over the recurrent class of the target (None if the
    target is transient).
    """

    target: int
    expected_hit_from: np.ndarray
    recurrence_time: float
    max_expected_hitting_time: float
    tau_class: Optional[float] = None

    @property
    def tau(self) -> float:
        return self.max_expected_hitting_time


@dataclass(frozen=True)
class LoopConstants:
    alpha: float
    beta: float

    @property
    def value(self) -> float:
        return self.beta / (1.0 - self.alpha)


def _reaches(adj: np.ndarray, goal: np.ndarray, through: np.ndarray) -> np.ndarray:
    """States that reach ``goal`` in >= 0 steps moving only through ``through``."""
    hit = goal.copy()
    while True:
        new = hit | (through & (adj & hit[None, :]).any(axis=1))
        if np.array_equal(new, hit):
            return hit
        hit = new


def _first_passage(p: np.ndarray, target: int):
    n = p.shape[0]
    adj = p > 0
    others = np.ones(n, dtype=bool)
    others[target] = False
    goal = np.zeros(n, dtype=bool)
    goal[target] = True
    can_hit = _reaches(adj, goal, others)
    dead = others & ~can_hit
    # a positive chance of drifting into a dead state makes the mean infinite
    infinite = others & _reaches(adj, dead, others)
    h = np.full(n, np.inf)
    fin = np.flatnonzero(others & ~infinite)
    if fin.size:
        q = p[np.ix_(fin, fin)]
        h[fin] = dense_solve(np.eye(fin.size) - q, np.ones(fin.size))
    row = p[target].copy()
    row[target] = 0.0
    pos = row > 0
    rho = np.inf if np.isinf(h[pos]).any() else 1.0 + row[pos] @ h[pos]
    h[target] = rho
    return h


def expected_hitting_times(p, target: int) -> HittingProfile:
    """First-step analysis ``h(s') = 1 + sum_{s'' != s} P h(s'')``; unreachable sources give inf."""
    p = _chain(p)
    h = _first_passage(p, target)
    tau_class = None
    dec = subchain_decomposition(p)
    cls = dec.class_of(target)
    if cls is not None:
        tau_class = float(h[list(dec.classes[cls])].max())
    return HittingProfile(target, h, float(h[target]), float(h.max()), tau_class)


def hitting_time_matrix(p) -> np.ndarray:
    """``Y[s, s'] = E_s[H_{s'}+]``."""
    p = _chain(p)
    return np.column_stack([_first_passage(p, t) for t in range(p.shape[0])])


# ---------------------------------------------------------------------------
# stochastic shortest paths: diameter and MEHC
# ---------------------------------------------------------------------------


def min_expected_hitting_cost(mdp_p: np.ndarray, cost: np.ndarray, target: int, tol: float = 1e-10, max_iter: int = 10**7) -> np.ndarray:
    """Minimum over policies of the expected cost accumulated before hitting ``target``.

    ``cost[s, a] >= 0``. A policy may also avoid the target forever inside a
    closed zero-cost region, which costs 0; states that cannot do either
    with probability one get ``inf``. Value iteration from zero, followed by
    exact policy-iteration polishing.
    """
    n, n_a, _ = mdp_p.shape
    cost = np.where(cost < 1e-12, 0.0, cost)
    support = mdp_p > 0
    # largest region where some zero-cost action keeps us inside forever
    zero = np.ones(n, dtype=bool)
    zero[target] = False
    while True:
        ok = (cost == 0) & ~(support & ~zero[None, None, :]).any(axis=2) & zero[:, None]
        new = ok.any(axis=1)
        if np.array_equal(new, zero):
            break
        zero = new
    goal = zero.copy()
    goal[target] = True
    # almost-sure reachability of the goal set
    live = np.ones(n, dtype=bool)
    while True:
        allowed = ~(support & ~live[None, None, :]).any(axis=2) & live[:, None]
        adj = (support & allowed[:, :, None]).any(axis=1)
        new = _reaches(adj, goal, live & ~goal) & live
        if np.array_equal(new, live):
            break
        live = new
    v = np.zeros(n)
    v[~live] = np.inf
    free = live & ~goal
    if not free.any():
        return v
    idx = np.flatnonzero(free)
    pf = mdp_p[idx][:, :, live]
    cf = cost[idx]
    mask = allowed[idx]
    live_idx = np.flatnonzero(live)
    pos = {s: i for i, s in enumerate(live_idx)}
    w = np.zeros(live_idx.size)
    free_local = np.array([pos[s] for s in idx])
    for _ in range(max_iter):
        q = np.where(mask, cf + pf @ w, np.inf)
        new = q.min(axis=1)
        change = np.abs(new - w[free_local]).max()
        w[free_local] = new
        if change < tol:
            break
    # policy iteration polish
    q = np.where(mask, cf + pf @ w, np.inf)
    acts = q.argmin(axis=1)
    for _ in range(100):
        a_mat = np.eye(idx.size) - pf[np.arange(idx.size), acts][:, free_local]
        try:
            exact = dense_solve(a_mat, cf[np.arange(idx.size), acts])
        except SingularSystem:
            break
        if np.any(exact < -1e-9) or np.abs(exact - w[free_local]).max() > 1e-6 * max(1.0, np.abs(exact).max()):
            break
        w[free_local] = exact
        q = np.where(mask, cf + pf @ w, np.inf)
        cur = q[np.arange(idx.size), acts]
        better = q.min(axis=1) < cur - 1e-12 * np.maximum(1.0, np.abs(cur))
        if not better.any():
            break
        acts = np.where(better, q.argmin(axis=1), acts)
    v[idx] = w[free_local]
    return v


def hitting_cost_matrix(mdp: FiniteMdp, unit_cost: bool = False) -> np.ndarray:
    """``C[s, s']``: min-policy expected hitting cost from s to s' (zero on the diagonal).

    With ``unit_cost`` every step costs 1 (diameter); otherwise a step costs
    ``r_max - rbar(s, a)`` (MEHC).
    """
    p = mdp.transitions
    if unit_cost:
        cost = np.ones((mdp.n_states, mdp.n_actions))
    else:
        cost = np.clip(mdp.r_max - mdp.mean_rewards, 0.0, None)
    return np.column_stack([min_expected_hitting_cost(p, cost, t) for t in range(mdp.n_states)])


def diameter(mdp: FiniteMdp) -> float:
    return float(hitting_cost_matrix(mdp, unit_cost=True).max())


def mehc(mdp: FiniteMdp) -> float:
    return float(hitting_cost_matrix(mdp).max())


# ---------------------------------------------------------------------------
# loop constants
# ---------------------------------------------------------------------------


def loop_constants(mrp: Mrp, s: int, gamma: float) -> LoopConstants:
    """Exact ``alpha(s) = E_s[gamma^I]`` and ``beta(s) = E_s[sum_{u<I} gamma^u R_u]``."""
    p = mrp.transition_matrix
    r = mrp.mean_rewards
    if math.isinf(_first_passage(p, s)[s]):
        raise TransientState(f"state {s} is not positive recurrent")
    n = p.shape[0]
    rest = np.flatnonzero(np.arange(n) != s)
    q = p[np.ix_(rest, rest)]
    a = np.eye(rest.size) - gamma * q
    f = dense_solve(a, gamma * p[rest, s]) if rest.size else np.zeros(0)
    g = dense_solve(a, r[rest]) if rest.size else np.zeros(0)
    alpha = gamma * (p[s, s] + p[s, rest] @ f)
    beta = r[s] + gamma * (p[s, rest] @ g)
    return LoopConstants(float(alpha), float(beta))


# ---------------------------------------------------------------------------
# Monte-Carlo companions
# ---------------------------------------------------------------------------


def sample_return_times(p, s: int, n_samples: int, seed: int, horizon: int) -> np.ndarray:
    """First return times to ``s`` from ``s``; runs longer than ``horizon`` report ``horizon + 1``."""
    p = _chain(p)
    cdf = _cdf(p)
    rng = make_rng(seed)
    cur = np.full(n_samples, s)
    out = np.full(n_samples, horizon + 1)
    active = np.arange(n_samples)
    for t in range(1, horizon + 1):
        u = rng.random(active.size)
        cur = (u[:, None] < cdf[cur]).argmax(axis=1)
        back = cur == s
        out[active[back]] = t
        active, cur = active[~back], cur[~back]
        if active.size == 0:
            break
    return out


@dataclass(frozen=True)
class TailCheck:
    t: np.ndarray
    empirical: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    flagged: np.ndarray  # t values with empirical - 3 stderr > bound

    @property
    def ok(self) -> bool:
        return self.flagged.size == 0


def return_time_tail_check(p, s: int, horizon: int, n_samples: int, seed: int) -> TailCheck:
    """Compare ``P[H_s+ >= t]`` from simulation with ``e * exp(-t / (e tau_s))``."""
    p = _chain(p)
    tau = expected_hitting_times(p, s).tau
    if math.isinf(tau):
        raise InfiniteTau(f"tau_{s} is infinite")
    h = sample_return_times(p, s, n_samples, seed, horizon)
    t = np.arange(1, horizon + 1)
    counts = np.bincount(np.minimum(h, horizon + 1), minlength=horizon + 2)
    # P[H >= t] = 1 - P[H <= t - 1]
    emp = 1.0 - np.cumsum(counts)[t - 1] / n_samples
    se = np.sqrt(emp * (1 - emp) / n_samples)
    bound = math.e * np.exp(-t / (math.e * tau))
    flagged = t[emp - 3 * se > bound]
    return TailCheck(t, emp, se, bound, flagged)


def cover_time_bound(p, delta: float) -> float:
    """``e * max_s tau_s * log(e S / delta)``: cover time holds below this w.p. >= 1 - delta."""
    p = _chain(p)
    n = p.shape[0]
    taus = [expected_hitting_times(p, s).tau for s in range(n)]
    if any(math.isinf(x) for x in taus):
        raise InfiniteTau("some state is not reachable from everywhere")
    return math.e * max(taus) * math.log(math.e * n / delta)


def sample_cover_times(p, start: int, n_runs: int, seed: int, max_steps: int = 10**7) -> np.ndarray:
    """Steps until every state has been visited, one entry per run."""
    p = _chain(p)
    n = p.shape[0]
    cdf = _cdf(p)
    rng = make_rng(seed)
    seen = np.zeros((n_runs, n), dtype=bool)
    cur = np.full(n_runs, start)
    seen[:, start] = True
    out = np.zeros(n_runs, dtype=np.int64)
    active = np.arange(n_runs)
    done = seen.all(axis=1)
    active, cur = active[~done], cur[~done]
    for t in range(1, max_steps + 1):
        if active.size == 0:
            break
        u = rng.random(active.size)
        cur = (u[:, None] < cdf[cur]).argmax(axis=1)
        seen[active, cur] = True
        fin = seen[active].all(axis=1)
        out[active[fin]] = t
        active, cur = active[~fin], cur[~fin]
    return out


def return_time_transition_identity(p) -> float:
    """``max |Y - P (Y - diag Y + E)|`` over the matrix of expected first return times."""
    p = _chain(p)
    y = hitting_time_matrix(p)
    if not np.all(np.isfinite(y)):
        raise InfiniteEntries("some expected first return time is infinite")
    n = p.shape[0]
    rhs = p @ (y - np.diag(np.diag(y)) + np.ones((n, n)))
    return float(np.abs(y - rhs).max())
