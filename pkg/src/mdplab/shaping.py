"""Potential-based reward shaping and its effect on the MEHC.

Shaping with a potential ``phi`` turns a transition reward ``r`` for
``s -> s'`` into ``r - phi(s) + phi(s')``. Gains of every policy are
unchanged, while the maximum expected hitting cost can change by at most a
factor of two.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from mdplab.core import FiniteMdp, StochasticPolicy, chain_gains, optimal_gain
from mdplab.errors import BoundednessViolated, PreconditionFailed, StructureMismatch, ValidationError
from mdplab.metrics import hitting_cost_matrix
from mdplab.ofu import ExtendedMdp, optimistic_transitions

BOUND_TOL = 1e-12


@dataclass(frozen=True)
class Potential:
    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 1 or not np.all(np.isfinite(phi)):
            raise ValidationError("potential must be a finite vector")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    def __neg__(self) -> "Potential":
        return Potential(-self.phi)


def _as_phi(phi) -> np.ndarray:
    return phi.phi if isinstance(phi, Potential) else np.asarray(phi, dtype=float)


def shift_table(mdp: FiniteMdp, phi) -> np.ndarray:
    """``phi(s') - phi(s)`` broadcast to ``S x A x S``."""
    phi = _as_phi(phi)
    return np.broadcast_to(phi[None, None, :] - phi[:, None, None], mdp.transitions.shape)


def shape(mdp: FiniteMdp, phi) -> FiniteMdp:
    """Shaped MDP with rewards ``r - phi(s) + phi(s')`` realised per transition.

    Raises BoundednessViolated if some reachable outcome leaves ``[0, r_max]``.
    The reset marker is dropped when shaping gives the reset action a nonzero
    reward.
    """
    phi = _as_phi(phi)
    if phi.shape != (mdp.n_states,):
        raise StructureMismatch("potential length differs from the number of states")
    if not np.any(phi):
        return mdp
    shift = shift_table(mdp, phi)
    base = mdp.rewards.offsets if mdp.rewards.offsets is not None else 0.0
    offsets = base + shift
    lo, hi = mdp.rewards.base_bounds()
    support = mdp.transitions > 0
    low = np.where(support, lo[..., None] + offsets, np.inf)
    high = np.where(support, hi[..., None] + offsets, -np.inf)
    for vals, bad in ((low, low < -BOUND_TOL), (high, high > mdp.r_max + BOUND_TOL)):
        if bad.any():
            s, a, s2 = map(int, np.argwhere(bad)[0])
            raise BoundednessViolated(s, a, s2, float(vals[s, a, s2]))
    if np.abs(offsets).max() == 0.0:
        offsets = None
    reset = mdp.reset
    if reset is not None and offsets is not None and np.any(offsets[:, reset[0], :][support[:, reset[0], :]]):
        reset = None
    return FiniteMdp(mdp.transitions, mdp.rewards.with_offsets(offsets), mdp.r_max, reset)


def _policies(n_states: int, n_actions: int, n_random: int, rng: np.random.Generator):
    if n_states * n_actions <= 12:
        for acts in itertools.product(range(n_actions), repeat=n_states):
            yield StochasticPolicy.deterministic(acts, n_actions).probs
    for _ in range(n_random):
        yield rng.dirichlet(np.ones(n_actions), size=n_states)


def check_pi_equivalence(m1: FiniteMdp, m2: FiniteMdp, n_policies: int = 100, seed: int = 0) -> float:
    """Largest per-state gain difference over sampled policies.

    Uses ``n_policies`` random stochastic policies plus every deterministic
    policy when ``S * A <= 12``.
    """
    if m1.transitions.shape != m2.transitions.shape or not np.array_equal(m1.transitions, m2.transitions):
        raise StructureMismatch("models differ in states, actions or transitions")
    rng = np.random.default_rng(seed)
    r1, r2 = m1.mean_rewards, m2.mean_rewards
    gap = 0.0
    for pi in _policies(m1.n_states, m1.n_actions, n_policies, rng):
        p = np.einsum("sa,sat->st", pi, m1.transitions)
        g1 = chain_gains(p, np.einsum("sa,sa->s", pi, r1))
        g2 = chain_gains(p, np.einsum("sa,sa->s", pi, r2))
        gap = max(gap, float(np.abs(g1 - g2).max()))
    return gap


@dataclass(frozen=True)
class ShapingReport:
    kappa: float
    kappa_shaped: float
    ratio: float

    @property
    def factor_two_holds(self) -> bool:
        return 0.5 - 1e-12 <= self.ratio <= 2.0 + 1e-12


def mehc_shaping_report(mdp: FiniteMdp, phi) -> ShapingReport:
    """MEHC before and after shaping.

    Raises PreconditionFailed when the optimal gain is saturated or the MEHC
    is infinite, where the factor-two bound does not apply.
    """
    if optimal_gain(mdp).max() >= mdp.r_max - 1e-12:
        raise PreconditionFailed("optimal gain is saturated at r_max")
    kappa = float(hitting_cost_matrix(mdp).max())
    if not np.isfinite(kappa) or kappa <= 0:
        raise PreconditionFailed("MEHC is infinite or zero")
    shaped = float(hitting_cost_matrix(shape(mdp, phi)).max())
    return ShapingReport(kappa, shaped, shaped / kappa)


def hitting_cost_shift_residual(mdp: FiniteMdp, phi) -> float:
    """``max |c_phi(s, s') - (c(s, s') + phi(s) - phi(s'))|`` over finite pairs."""
    phi = _as_phi(phi)
    c = hitting_cost_matrix(mdp)
    c_phi = hitting_cost_matrix(shape(mdp, phi))
    fin = np.isfinite(c) & np.isfinite(c_phi)
    pred = c + phi[:, None] - phi[None, :]
    return float(np.abs(c_phi - pred)[fin].max(initial=0.0))


@dataclass(frozen=True)
class SpanCheck:
    spans: np.ndarray
    kappa: float

    @property
    def max_span(self) -> float:
        return float(self.spans.max())

    def holds(self, tol: float = 1e-9) -> bool:
        return self.max_span <= self.kappa + tol


def span_lemma_check(mdp: FiniteMdp, i_max: int, p_radius=0.0, r_radius=0.0) -> SpanCheck:
    """Run EVI for ``i_max`` iterations on sets centred at the truth and record ``span(u_i)``."""
    ext = ExtendedMdp.around(mdp, p_radius, r_radius)
    r_opt = np.minimum(ext.r_hat + ext.r_radius, ext.r_max)
    u = np.zeros(mdp.n_states)
    spans = np.zeros(i_max + 1)
    for i in range(1, i_max + 1):
        u = (r_opt + optimistic_transitions(ext.p_hat, ext.p_radius, u) @ u).max(axis=1)
        spans[i] = u.max() - u.min()
    kappa = float(hitting_cost_matrix(mdp).max()) if mdp.n_states > 1 else 0.0
    return SpanCheck(spans, kappa)


def sample_admissible_potential(mdp: FiniteMdp, rng: np.random.Generator, max_tries: int = 100) -> Potential:
    """Random potential keeping every shaped outcome inside ``[0, r_max]``.

    Draws ``phi`` uniformly from ``[0, r_max / 2]^S`` and shrinks it towards
    its mean by the largest admissible factor (computed exactly, since the
    constraints are linear in the factor).
    """
    lo, hi = mdp.rewards.base_bounds()
    base = mdp.rewards.offsets if mdp.rewards.offsets is not None else 0.0
    support = mdp.transitions > 0
    lo3 = np.broadcast_to(lo[..., None] + base, support.shape)[support]
    hi3 = np.broadcast_to(hi[..., None] + base, support.shape)[support]
    for _ in range(max_tries):
        phi0 = rng.uniform(0.0, mdp.r_max / 2, size=mdp.n_states)
        d = shift_table(mdp, phi0)[support]
        lam = 1.0
        neg, pos = d < 0, d > 0
        if neg.any():
            lam = min(lam, float(np.min(lo3[neg] / -d[neg])))
        if pos.any():
            lam = min(lam, float(np.min((mdp.r_max - hi3[pos]) / d[pos])))
        lam *= 1 - 1e-9
        if lam > 1e-6:
            m = phi0.mean()
            return Potential(m + lam * (phi0 - m))
    raise PreconditionFailed("no admissible potential found")
