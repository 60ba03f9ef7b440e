"""Multi-reward planning by direct-cone ascent.

The gain of a unichain policy is a ratio of two determinants, which makes
exact gradients with respect to the policy table cheap (Jacobi's formula).
Each iteration finds a direction that improves every active gain to first
order by solving a small LP, then line-searches along it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from mdplab.core import FiniteMdp, StochasticPolicy, stationary_distribution
from mdplab.errors import DegenerateChain, DimensionMismatch, LpNumericalFailure, NonTermination, ValidationError
from mdplab.linalg import adjugate
from mdplab.simplex import linprog_max

DET_TOL = 1e-12


@dataclass(frozen=True)
class MultiRewardMdp:
    """Shared dynamics with ``K`` mean-reward tables (entries in ``[-r_max, r_max]``)."""

    base: FiniteMdp
    reward_tables: tuple

    def __post_init__(self):
        tables = tuple(np.array(t, dtype=float) for t in self.reward_tables)
        shape = (self.base.n_states, self.base.n_actions)
        if not tables:
            raise ValidationError("need at least one reward table")
        for t in tables:
            if t.shape != shape:
                raise DimensionMismatch(f"reward table of shape {t.shape}, expected {shape}")
            if np.abs(t).max() > self.base.r_max + 1e-12:
                raise ValidationError("reward table outside [-r_max, r_max]")
            t.setflags(write=False)
        object.__setattr__(self, "reward_tables", tables)

    @property
    def n_rewards(self) -> int:
        return len(self.reward_tables)

    @property
    def transitions(self) -> np.ndarray:
        return self.base.transitions

    def chain(self, policy) -> tuple[np.ndarray, np.ndarray]:
        """Induced transition matrix and the ``K x S`` induced reward vectors."""
        pi = _probs(policy)
        p = np.einsum("sa,sat->st", pi, self.transitions)
        r = np.stack([np.einsum("sa,sa->s", pi, t) for t in self.reward_tables])
        return p, r


def _probs(policy) -> np.ndarray:
    return policy.probs if isinstance(policy, StochasticPolicy) else np.asarray(policy, dtype=float)


def _bordered(p: np.ndarray, last: np.ndarray) -> np.ndarray:
    m = p - np.eye(p.shape[0])
    m[:, -1] = last
    return m


def gain_determinant(p, r) -> float:
    """``sigma @ r`` as ``det[P - I | r] / det[P - I | 1]`` (last column replaced)."""
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    den = np.linalg.det(_bordered(p, np.ones(p.shape[0])))
    if abs(den) <= DET_TOL:
        raise DegenerateChain("stationary distribution is not unique")
    return float(np.linalg.det(_bordered(p, r)) / den)


def gains(mdp: MultiRewardMdp, policy) -> np.ndarray:
    p, r = mdp.chain(policy)
    return np.array([gain_determinant(p, rk) for rk in r])


def gain_gradient(mdp: MultiRewardMdp, policy, k: int) -> np.ndarray:
    """Gradient of gain ``k`` with respect to the ``S x A`` policy table.

    Entry ``(s, a)`` is the derivative along ``pi(a|s)`` with row ``s`` of the
    induced chain and reward moving linearly in it; project onto the simplex
    tangent space to get feasible directional derivatives.
    """
    p, r = mdp.chain(policy)
    n = p.shape[0]
    dmat = _bordered(p, np.ones(n))
    nmat = _bordered(p, r[k])
    det_d = np.linalg.det(dmat)
    if abs(det_d) <= DET_TOL:
        raise DegenerateChain("stationary distribution is not unique")
    g = np.linalg.det(nmat) / det_d
    adj_n = adjugate(nmat)
    adj_d = adjugate(dmat)
    trans = mdp.transitions  # S x A x S
    # d det(M) along pi(a|s) is adj(M)[:, s] . (new row s of M)
    head_n = np.einsum("js,saj->sa", adj_n[: n - 1], trans[:, :, : n - 1])
    head_d = np.einsum("js,saj->sa", adj_d[: n - 1], trans[:, :, : n - 1])
    dn = head_n + adj_n[n - 1][:, None] * mdp.reward_tables[k]
    dd = head_d
    return (dn - g * dd) / det_d


def project_tangent(grad: np.ndarray) -> np.ndarray:
    return grad - grad.mean(axis=1, keepdims=True)


def fd_tangent_gradient(mdp: MultiRewardMdp, policy, k: int, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``sigma @ r_k`` along ``e_{s,a} - uniform_s``."""
    pi = _probs(policy)
    n_s, n_a = pi.shape
    out = np.zeros_like(pi)

    def g(q):
        p, r = mdp.chain(q)
        return float(stationary_distribution(p) @ r[k])

    for s in range(n_s):
        for a in range(n_a):
            d = np.zeros_like(pi)
            d[s] = -1.0 / n_a
            d[s, a] += 1.0
            out[s, a] = (g(pi + h * d) - g(pi - h * d)) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# common ascent LP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AscentDirection:
    feasible: bool
    direction: Optional[np.ndarray]
    margin: float


def common_ascent_direction(gradients, policy=None, active_set: Optional[Sequence[int]] = None, boundary_tol: float = 1e-9, margin_tol: float = 1e-8) -> AscentDirection:
    """Solve ``max m`` s.t. ``grad_k . d >= m`` for active ``k`` and ``|d| <= 1``.

    With a ``policy`` (``S x A``) the direction must also be tangent to each
    simplex row and nonnegative where ``pi(a|s) <= boundary_tol``. Without one
    the direction is unconstrained apart from the box.
    """
    grads = np.asarray(gradients, dtype=float)
    k_all = grads.shape[0]
    flat = grads.reshape(k_all, -1)
    active = list(range(k_all)) if active_set is None else sorted(set(active_set))
    if not active:
        raise ValidationError("active set is empty")
    flat = flat[active]
    n = flat.shape[1]
    big = float(np.abs(flat).sum(axis=1).max()) + 1.0
    bounds = [(-1.0, 1.0)] * n + [(-big, big)]
    a_eq = b_eq = None
    if policy is not None:
        pi = _probs(policy)
        n_s, n_a = pi.shape
        if n_s * n_a != n:
            raise DimensionMismatch("gradient length does not match the policy table")
        for i in np.flatnonzero(pi.ravel() <= boundary_tol):
            bounds[i] = (0.0, 1.0)
        a_eq = np.zeros((n_s, n + 1))
        for s in range(n_s):
            a_eq[s, s * n_a : (s + 1) * n_a] = 1.0
        b_eq = np.zeros(n_s)
    # m - grad_k . d <= 0
    a_ub = np.hstack([-flat, np.ones((flat.shape[0], 1))])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = linprog_max(c, a_ub, np.zeros(flat.shape[0]), a_eq, b_eq, bounds)
    if res.status != "optimal":
        # d = 0, m = 0 is always feasible, so anything else is numerical trouble
        raise LpNumericalFailure(f"ascent LP ended with status {res.status}")
    margin = float(res.objective)
    d = res.x[:n].reshape(_probs(policy).shape if policy is not None else grads.shape[1:])
    if margin > margin_tol:
        return AscentDirection(True, d, margin)
    return AscentDirection(False, None, margin)


# ---------------------------------------------------------------------------
# direct-cone optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectConeConfig:
    max_iter: int = 500
    initial_step: float = 0.5
    max_backtracks: int = 30
    boundary_tol: float = 1e-9
    margin_tol: float = 1e-8
    clip: float = 1e-12
    interior_min: float = 1e-6
    raise_on_cap: bool = False


@dataclass(frozen=True)
class ParetoIterate:
    policy: StochasticPolicy
    gains: np.ndarray
    gradients: np.ndarray  # K x (S*A)
    lp_margin: float
    step: float = 0.0
    active: tuple = ()


@dataclass(frozen=True)
class DirectConeResult:
    iterates: list
    status: str  # "infeasible" | "line-search-failed" | "iteration-cap"

    @property
    def final(self) -> ParetoIterate:
        return self.iterates[-1]


def _interior(pi: np.ndarray, floor: float) -> np.ndarray:
    if pi.min() >= floor:
        return pi
    q = np.maximum(pi, floor)
    return q / q.sum(axis=1, keepdims=True)


def _clip(pi: np.ndarray, floor: float) -> np.ndarray:
    q = np.maximum(pi, floor)
    return q / q.sum(axis=1, keepdims=True)


def _all_gradients(mdp: MultiRewardMdp, pi) -> np.ndarray:
    return np.stack([gain_gradient(mdp, pi, k).ravel() for k in range(mdp.n_rewards)])


def _schedule_active(schedule, it: int, phase: int, k: int):
    """Active subset for iteration ``it`` given the current phase index."""
    if schedule is None:
        return phase, tuple(range(k))
    while phase < len(schedule):
        (lo, hi), subset = schedule[phase]
        if it < hi:
            return phase, tuple(sorted(subset))
        phase += 1
    return phase, tuple(range(k))


def steer(mdp: MultiRewardMdp, init, schedule, config: DirectConeConfig = DirectConeConfig()) -> DirectConeResult:
    """Direct-cone ascent where only a scheduled subset of gains enters the LP.

    ``schedule`` is a list of ``((start, stop), subset)`` phases in order;
    after the last phase every gain is active. A phase also ends early when
    its LP becomes infeasible.
    """
    k = mdp.n_rewards
    if schedule is not None:
        for _, subset in schedule:
            if not subset:
                raise ValidationError("empty active set in steering schedule")
            if any(not 0 <= j < k for j in subset):
                raise ValidationError("active set refers to an unknown reward")
    pi = _interior(_probs(init).astype(float), config.interior_min)
    g = gains(mdp, pi)
    iterates = []
    phase = 0
    step = 0.0
    for it in range(config.max_iter + 1):
        phase, active = _schedule_active(schedule, it, phase, k)
        grads = _all_gradients(mdp, pi)
        asc = common_ascent_direction(grads, pi, active, config.boundary_tol, config.margin_tol)
        iterates.append(ParetoIterate(StochasticPolicy(pi), g, grads, asc.margin, step, active))
        if not asc.feasible:
            if schedule is not None and phase < len(schedule):
                phase += 1
                schedule = list(schedule[:phase]) + [((0, np.inf), s) for _, s in schedule[phase:]]
                continue
            return DirectConeResult(iterates, "infeasible")
        if it == config.max_iter:
            break
        act = list(active)
        eta = config.initial_step
        for _ in range(config.max_backtracks + 1):
            cand = _clip(pi + eta * asc.direction, config.clip)
            try:
                g_new = gains(mdp, cand)
            except DegenerateChain:
                g_new = None
            if g_new is not None:
                delta = g_new[act] - g[act]
                if delta.min() >= -1e-12 and delta.max() >= 1e-12:
                    break
            eta /= 2
        else:
            return DirectConeResult(iterates, "line-search-failed")
        pi, g, step = cand, g_new, eta
    if config.raise_on_cap:
        raise NonTermination(f"no convergence within {config.max_iter} iterations")
    return DirectConeResult(iterates, "iteration-cap")


def direct_cone_optimize(mdp: MultiRewardMdp, init, config: DirectConeConfig = DirectConeConfig()) -> DirectConeResult:
    return steer(mdp, init, None, config)


# ---------------------------------------------------------------------------
# gain clouds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GainCloud:
    stochastic: np.ndarray
    deterministic: np.ndarray
    n_degenerate: int = 0


def sample_gain_cloud(mdp: MultiRewardMdp, n_stochastic: int, include_deterministic: bool = True, seed: int = 0) -> GainCloud:
    """Gains of Dirichlet-sampled policies plus, when ``A^S <= 1e5``, all deterministic ones."""
    rng = np.random.default_rng(seed)
    n_s, n_a = mdp.base.n_states, mdp.base.n_actions
    skipped = 0
    sto = []
    for _ in range(n_stochastic):
        pi = rng.dirichlet(np.ones(n_a), size=n_s)
        try:
            sto.append(gains(mdp, pi))
        except DegenerateChain:
            skipped += 1
    det = []
    if include_deterministic and n_a**n_s <= 10**5:
        for acts in itertools.product(range(n_a), repeat=n_s):
            try:
                det.append(gains(mdp, StochasticPolicy.deterministic(acts, n_a)))
            except DegenerateChain:
                skipped += 1
    k = mdp.n_rewards
    return GainCloud(np.array(sto).reshape(-1, k), np.array(det).reshape(-1, k), skipped)
