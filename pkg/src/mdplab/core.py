"""Finite MDPs, reward processes and chains, plus exact solvers.

Everything here is a pure function of its inputs (and a seed, for sampling).
Model objects are frozen dataclasses wrapping read-only numpy arrays.

Random numbers come from numpy's counter-based Philox generator seeded
through ``SeedSequence(seed)``; each simulated step consumes exactly three
uniforms (mixture component, next state, reward), so a path of length T is a
deterministic function of ``(model, start, T, seed)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from mdplab.errors import (
    DimensionMismatch,
    MultichainInput,
    NonUniqueStationary,
    SingularSystem,
    ValidationError,
)
from mdplab.linalg import dense_solve

ROW_TOL = 1e-12

POINT, BERNOULLI, UNIFORM = 0, 1, 2
_KIND_NAMES = {"point": POINT, "bernoulli": BERNOULLI, "uniform": UNIFORM}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _check_stochastic(p: np.ndarray, what: str, tol: float = ROW_TOL) -> None:
    if not np.all(np.isfinite(p)):
        raise ValidationError(f"{what}: non-finite probability")
    if p.min(initial=0.0) < 0.0 or p.max(initial=0.0) > 1.0:
        raise ValidationError(f"{what}: probability outside [0, 1]")
    err = np.abs(p.sum(axis=-1) - 1.0)
    if err.size and err.max() > tol:
        bad = np.unravel_index(int(err.argmax()), err.shape)
        raise ValidationError(f"{what}: row {bad} sums to {p.sum(axis=-1)[bad]!r}")


# ---------------------------------------------------------------------------
# reward distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardTable:
    """A table of bounded reward distributions.

    Each cell is a point mass (``a``), a Bernoulli with success probability
    ``a`` paying ``b``, or a uniform on ``[a, b]``. ``offsets`` optionally
    adds a next-state dependent shift: the realized reward for
    ``cell -> s'`` is ``base_sample + offsets[cell + (s',)]``.
    """

    kind: np.ndarray
    a: np.ndarray
    b: np.ndarray
    offsets: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _frozen(self.kind, int))
        object.__setattr__(self, "a", _frozen(self.a))
        object.__setattr__(self, "b", _frozen(self.b))
        if self.offsets is not None:
            object.__setattr__(self, "offsets", _frozen(self.offsets))
            if self.offsets.shape[:-1] != self.kind.shape:
                raise DimensionMismatch("reward offsets shape does not match table")
        if not (self.kind.shape == self.a.shape == self.b.shape):
            raise DimensionMismatch("reward table arrays disagree in shape")
        if not np.isin(self.kind, (POINT, BERNOULLI, UNIFORM)).all():
            raise ValidationError("unknown reward kind")
        bern = self.kind == BERNOULLI
        if np.any((self.a[bern] < 0) | (self.a[bern] > 1)):
            raise ValidationError("Bernoulli probability outside [0, 1]")
        uni = self.kind == UNIFORM
        if np.any(self.a[uni] > self.b[uni]):
            raise ValidationError("uniform reward with lo > hi")

    @property
    def shape(self):
        return self.kind.shape

    @classmethod
    def point(cls, values) -> "RewardTable":
        values = np.asarray(values, dtype=float)
        return cls(np.full(values.shape, POINT), values, values)

    @classmethod
    def bernoulli(cls, probs, r_max: float) -> "RewardTable":
        probs = np.asarray(probs, dtype=float)
        return cls(np.full(probs.shape, BERNOULLI), probs, np.full(probs.shape, r_max))

    @classmethod
    def uniform(cls, lo, hi) -> "RewardTable":
        lo = np.asarray(lo, dtype=float)
        return cls(np.full(lo.shape, UNIFORM), lo, np.broadcast_to(hi, lo.shape))

    def with_offsets(self, offsets) -> "RewardTable":
        return RewardTable(self.kind, self.a, self.b, offsets)

    def base_mean(self) -> np.ndarray:
        return np.select(
            [self.kind == POINT, self.kind == BERNOULLI],
            [self.a, self.a * self.b],
            (self.a + self.b) / 2.0,
        )

    def mean(self, next_probs: Optional[np.ndarray] = None) -> np.ndarray:
        """Mean reward per cell; ``next_probs`` weights the offsets."""
        m = self.base_mean()
        if self.offsets is not None:
            m = m + np.einsum("...j,...j->...", next_probs, self.offsets)
        return m

    def base_bounds(self):
        lo = np.select(
            [self.kind == POINT, self.kind == BERNOULLI],
            [self.a, np.where(self.a < 1.0, 0.0, self.b)],
            self.a,
        )
        hi = np.select(
            [self.kind == POINT, self.kind == BERNOULLI],
            [self.a, np.where(self.a > 0.0, self.b, 0.0)],
            self.b,
        )
        return lo, hi

    def sample_base(self, index, u: np.ndarray) -> np.ndarray:
        kind, a, b = self.kind[index], self.a[index], self.b[index]
        return np.select(
            [kind == POINT, kind == BERNOULLI],
            [a, np.where(u < a, b, 0.0)],
            a + (b - a) * u,
        )

    def take(self, index) -> "RewardTable":
        off = None if self.offsets is None else self.offsets[index]
        return RewardTable(self.kind[index], self.a[index], self.b[index], off)

    def to_specs(self) -> list:
        specs = []
        for k, a, b in zip(self.kind.ravel(), self.a.ravel(), self.b.ravel()):
            if k == POINT:
                specs.append({"kind": "point", "params": [float(a)]})
            elif k == BERNOULLI:
                specs.append({"kind": "bernoulli", "params": [float(a)]})
            else:
                specs.append({"kind": "uniform", "params": [float(a), float(b)]})
        return specs

    @classmethod
    def from_specs(cls, specs: Sequence[dict], shape, r_max: float) -> "RewardTable":
        n = int(np.prod(shape))
        if len(specs) != n:
            raise DimensionMismatch(f"expected {n} reward specs, got {len(specs)}")
        kind = np.empty(n, dtype=int)
        a = np.empty(n)
        b = np.empty(n)
        for i, spec in enumerate(specs):
            name = spec.get("kind")
            params = list(spec.get("params", []))
            if name not in _KIND_NAMES:
                raise ValidationError(f"reward spec {i}: unknown kind {name!r}")
            kind[i] = _KIND_NAMES[name]
            if name == "point" and len(params) == 1:
                a[i] = b[i] = params[0]
            elif name == "bernoulli" and len(params) == 1:
                a[i], b[i] = params[0], r_max
            elif name == "uniform" and len(params) == 2:
                a[i], b[i] = params
            else:
                raise ValidationError(f"reward spec {i}: bad params for {name!r}")
        return cls(kind.reshape(shape), a.reshape(shape), b.reshape(shape))


def _check_reward_bounds(rewards: RewardTable, support: np.ndarray, r_max: float, tol=1e-12):
    lo, hi = rewards.base_bounds()
    if rewards.offsets is None:
        if lo.min(initial=0.0) < -tol or hi.max(initial=0.0) > r_max + tol:
            raise ValidationError("reward support outside [0, r_max]")
        return
    off = np.where(support, rewards.offsets, 0.0)
    lo_o = np.where(support, lo[..., None] + off, np.inf)
    hi_o = np.where(support, hi[..., None] + off, -np.inf)
    if lo_o.min(initial=np.inf) < -tol or hi_o.max(initial=-np.inf) > r_max + tol:
        raise ValidationError("reward support outside [0, r_max]")


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteMdp:
    """Finite MDP with transition tensor ``P[s, a, s']`` and bounded rewards."""

    transitions: np.ndarray
    rewards: RewardTable
    r_max: float = 1.0
    reset: Optional[tuple] = None  # (reset action, initial state)

    def __post_init__(self):
        p = _frozen(self.transitions)
        object.__setattr__(self, "transitions", p)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or 0 in p.shape:
            raise DimensionMismatch(f"transition tensor must be S x A x S, got {p.shape}")
        if self.rewards.shape != p.shape[:2]:
            raise DimensionMismatch("reward table must be S x A")
        if self.rewards.offsets is not None and self.rewards.offsets.shape != p.shape:
            raise DimensionMismatch("reward offsets must be S x A x S")
        if not self.r_max >= 0:
            raise ValidationError("r_max must be nonnegative")
        _check_stochastic(p, "transitions")
        _check_reward_bounds(self.rewards, p > 0, self.r_max)
        if self.reset is not None:
            act, init = (int(x) for x in self.reset)
            object.__setattr__(self, "reset", (act, init))
            if not (0 <= act < self.n_actions and 0 <= init < self.n_states):
                raise ValidationError("reset action or initial state out of range")
            target = np.zeros(self.n_states)
            target[init] = 1.0
            if not np.array_equal(p[:, act, :], np.broadcast_to(target, (self.n_states, self.n_states))):
                raise ValidationError("reset action must move deterministically to the initial state")
            col = self.rewards.take((slice(None), act))
            lo, hi = col.base_bounds()
            off = 0.0 if col.offsets is None else np.abs(col.offsets).max()
            if np.any(lo != 0) or np.any(hi != 0) or off != 0:
                raise ValidationError("reset action must pay a point mass of zero")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def mean_rewards(self) -> np.ndarray:
        return self.rewards.mean(self.transitions)

    @classmethod
    def from_means(cls, transitions, mean_rewards, r_max: float = 1.0, reset=None) -> "FiniteMdp":
        return cls(np.asarray(transitions, float), RewardTable.point(mean_rewards), r_max, reset)

    def restrict_actions(self, actions: Sequence[int]) -> "FiniteMdp":
        actions = list(actions)
        reset = None
        if self.reset is not None and self.reset[0] in actions:
            reset = (actions.index(self.reset[0]), self.reset[1])
        return FiniteMdp(
            self.transitions[:, actions, :],
            self.rewards.take((slice(None), actions)),
            self.r_max,
            reset,
        )

    def without_reset(self) -> "FiniteMdp":
        if self.reset is None:
            return self
        keep = [a for a in range(self.n_actions) if a != self.reset[0]]
        return self.restrict_actions(keep)

    def with_means(self, mean_rewards, r_max: Optional[float] = None) -> "FiniteMdp":
        r_max = self.r_max if r_max is None else r_max
        return FiniteMdp(self.transitions, RewardTable.point(mean_rewards), r_max, self.reset)


@dataclass(frozen=True)
class Mrp:
    """Markov reward process.

    Stored as a mixture ``P = sum_k w[s, k] * kernel[s, k, :]`` so that an MRP
    induced from an MDP keeps the action-conditioned reward law (needed for
    next-state dependent rewards). A plain MRP has a single component.
    """

    kernel: np.ndarray
    rewards: RewardTable
    weights: np.ndarray
    r_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kernel", _frozen(self.kernel))
        object.__setattr__(self, "weights", _frozen(self.weights))
        k = self.kernel
        if k.ndim != 3 or k.shape[0] != k.shape[2] or self.weights.shape != k.shape[:2]:
            raise DimensionMismatch("MRP kernel must be S x K x S with S x K weights")
        if self.rewards.shape != k.shape[:2]:
            raise DimensionMismatch("MRP reward table must be S x K")
        _check_stochastic(self.weights, "component weights")
        _check_stochastic(self.transition_matrix, "transition matrix")
        r = self.mean_rewards
        if r.min(initial=0.0) < -1e-12 or r.max(initial=0.0) > self.r_max + 1e-12:
            raise ValidationError("mean rewards outside [0, r_max]")

    @classmethod
    def from_matrix(cls, transition_matrix, mean_rewards, r_max: float = 1.0, rewards: Optional[RewardTable] = None) -> "Mrp":
        p = np.asarray(transition_matrix, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionMismatch("transition matrix must be square")
        if rewards is None:
            rewards = RewardTable.point(np.asarray(mean_rewards, float).reshape(-1, 1))
        return cls(p[:, None, :], rewards, np.ones((p.shape[0], 1)), r_max)

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def transition_matrix(self) -> np.ndarray:
        return np.einsum("sk,skt->st", self.weights, self.kernel)

    @property
    def mean_rewards(self) -> np.ndarray:
        return np.einsum("sk,sk->s", self.weights, self.rewards.mean(self.kernel))


@dataclass(frozen=True)
class StochasticPolicy:
    """Per-state action distributions ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise DimensionMismatch("policy table must be S x A")
        object.__setattr__(self, "probs", p)
        _check_stochastic(p, "policy")

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "StochasticPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "StochasticPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def actions(self) -> np.ndarray:
        if not self.is_deterministic:
            raise ValueError("policy is not deterministic")
        return self.probs.argmax(axis=1)


@dataclass(frozen=True)
class Trajectory:
    """Sample path ``(t, X_t, A_t, R_t)``; ``actions`` is None for MRP paths."""

    states: np.ndarray
    rewards: np.ndarray
    seed: Optional[int] = None
    actions: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.states)

    @property
    def records(self) -> list:
        acts = self.actions if self.actions is not None else itertools.repeat(None)
        return [
            (t, int(s), None if a is None else int(a), float(r))
            for t, (s, a, r) in enumerate(zip(self.states, acts, self.rewards))
        ]


@dataclass(frozen=True)
class GainBias:
    gain: float
    bias: np.ndarray
    reference: int = 0


@dataclass(frozen=True)
class SubchainDecomposition:
    classes: tuple  # tuple of sorted state tuples
    transient: tuple

    def class_of(self, state: int) -> Optional[int]:
        for i, c in enumerate(self.classes):
            if state in c:
                return i
        return None


# ---------------------------------------------------------------------------
# policies and sampling
# ---------------------------------------------------------------------------


def induce_mrp(mdp: FiniteMdp, policy: StochasticPolicy) -> Mrp:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise DimensionMismatch(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )
    return Mrp(mdp.transitions, mdp.rewards, policy.probs, mdp.r_max)


def _cdf(probs: np.ndarray) -> np.ndarray:
    """Row CDFs whose tail is pinned to exactly 1 from the last positive entry."""
    c = np.cumsum(probs, axis=-1)
    pos = probs > 0
    last = probs.shape[-1] - 1 - np.argmax(pos[..., ::-1], axis=-1)
    idx = np.arange(probs.shape[-1])
    c[idx >= last[..., None]] = 1.0
    return c


def _as_mrp(model, policy) -> tuple[Mrp, bool]:
    if isinstance(model, FiniteMdp):
        if policy is None:
            raise ValueError("sampling an MDP requires a policy")
        return induce_mrp(model, policy), True
    if isinstance(model, tuple):
        return induce_mrp(*model), True
    return model, False


_BLOCK = 4096


def sample_paths(model, start: int, horizon: int, seeds: Sequence[int], policy: Optional[StochasticPolicy] = None):
    """Sample one path per seed, stepping all paths together.

    Returns ``(states, actions, rewards)`` arrays of shape ``(n_seeds, horizon)``;
    ``actions`` is None for MRPs. Row ``i`` equals ``sample_path(..., seeds[i])``.
    """
    mrp, is_mdp = _as_mrp(model, policy)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not 0 <= start < mrp.n_states:
        raise DimensionMismatch("start state out of range")
    n = len(seeds)
    rngs = [make_rng(int(sd)) for sd in seeds]
    wcdf = _cdf(mrp.weights)
    kcdf = _cdf(mrp.kernel)
    single = mrp.weights.shape[1] == 1
    states = np.empty((horizon + 1, n), dtype=np.int64)
    comps = np.zeros((horizon, n), dtype=np.int64)
    rewards = np.empty((horizon, n))
    cur = np.full(n, start, dtype=np.int64)
    states[0] = cur
    # uniforms are drawn in time blocks to bound memory; the stream is unchanged
    for lo in range(0, horizon, _BLOCK):
        hi = min(horizon, lo + _BLOCK)
        u = np.stack([g.random((hi - lo, 3)) for g in rngs], axis=1)
        for t in range(lo, hi):
            ut = u[t - lo]
            if single:
                k = comps[t]
            else:
                k = (ut[:, 0, None] < wcdf[cur]).argmax(axis=1)
                comps[t] = k
            cur = (ut[:, 1, None] < kcdf[cur, k]).argmax(axis=1)
            states[t + 1] = cur
        x, c, nxt = states[lo:hi], comps[lo:hi], states[lo + 1 : hi + 1]
        r = mrp.rewards.sample_base((x, c), u[:, :, 2])
        if mrp.rewards.offsets is not None:
            r = r + mrp.rewards.offsets[x, c, nxt]
        rewards[lo:hi] = r
    return states[:-1].T.copy(), (comps.T.copy() if is_mdp else None), rewards.T.copy()


def sample_path(model, start: int, horizon: int, seed: int, policy: Optional[StochasticPolicy] = None) -> Trajectory:
    """Simulate ``horizon`` steps from ``start``.

    ``model`` is an Mrp, a FiniteMdp (with ``policy``), or an ``(mdp, policy)`` pair.
    """
    x, a, r = sample_paths(model, start, horizon, [seed], policy)
    return Trajectory(x[0], r[0], seed, None if a is None else a[0])


# ---------------------------------------------------------------------------
# exact solvers
# ---------------------------------------------------------------------------


def _chain(model) -> np.ndarray:
    if isinstance(model, Mrp):
        return model.transition_matrix
    return np.asarray(model, dtype=float)


def solve_discounted_values(mrp: Mrp, gamma: float) -> np.ndarray:
    """Exact ``v = (I - gamma P)^-1 r``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    p = mrp.transition_matrix
    return dense_solve(np.eye(p.shape[0]) - gamma * p, mrp.mean_rewards)


def stationary_distribution(p) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic matrix.

    Iterates the lazy chain ``(I + P) / 2`` (same stationary law, aperiodic)
    by repeated squaring, and falls back to a direct solve of
    ``sigma (P - I) = 0, sum(sigma) = 1`` if the residual is not below 1e-12.
    """
    p = _chain(p)
    n = p.shape[0]
    aug = np.vstack([(p - np.eye(n)).T, np.ones((1, n))])
    if np.linalg.matrix_rank(aug, tol=1e-10) < n:
        raise NonUniqueStationary("stationary distribution is not unique")
    q = 0.5 * (p + np.eye(n))
    for _ in range(64):
        q2 = q @ q
        q2 /= q2.sum(axis=1, keepdims=True)
        done = np.abs(q2 - q).max() < 1e-15
        q = q2
        if done:
            break
    sigma = np.clip(q.mean(axis=0), 0.0, None)
    sigma /= sigma.sum()
    if np.abs(sigma @ p - sigma).sum() > 1e-12:
        a = (p - np.eye(n)).T.copy()
        a[-1] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        direct = np.clip(dense_solve(a, rhs), 0.0, None)
        direct /= direct.sum()
        if np.abs(direct @ p - direct).sum() < np.abs(sigma @ p - sigma).sum():
            sigma = direct
    return sigma


def _support_graph(model) -> np.ndarray:
    if isinstance(model, FiniteMdp):
        return (model.transitions > 0).any(axis=1)
    return _chain(model) > 0


def subchain_decomposition(model) -> SubchainDecomposition:
    """Closed irreducible classes (bottom SCCs of the support graph) and transient states.

    For an MDP the support graph ranges over all actions.
    """
    adj = _support_graph(model)
    n = adj.shape[0]
    _, labels = connected_components(csr_matrix(adj), directed=True, connection="strong")
    classes = []
    transient = []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        leaves = adj[members][:, labels != lab].any()
        if leaves:
            transient.extend(members.tolist())
        else:
            classes.append(tuple(members.tolist()))
    classes.sort()
    return SubchainDecomposition(tuple(classes), tuple(sorted(transient)))


def solve_gain_bias(mrp: Mrp) -> GainBias:
    """Gain and bias of a unichain MRP, with bias pinned to 0 at the class's first state."""
    p = mrp.transition_matrix
    r = mrp.mean_rewards
    dec = subchain_decomposition(p)
    if len(dec.classes) != 1:
        raise MultichainInput(f"{len(dec.classes)} recurrent classes; decompose first")
    n = p.shape[0]
    ref = dec.classes[0][0]
    # unknowns: bias at all states except ref, then gain
    a = np.eye(n) - p
    a[:, ref] = 1.0
    x = dense_solve(a, r)
    gain = float(x[ref])
    bias = x.copy()
    bias[ref] = 0.0
    return GainBias(gain, bias, ref)


def chain_gains(p, r) -> np.ndarray:
    """Per-state long-run average reward of a (possibly multichain) chain."""
    p = _chain(p)
    r = np.asarray(r, dtype=float)
    n = p.shape[0]
    dec = subchain_decomposition(p)
    g = np.zeros(n)
    for cls in dec.classes:
        idx = np.array(cls)
        sub = p[np.ix_(idx, idx)]
        sigma = stationary_distribution(sub)
        g[idx] = sigma @ r[idx]
    if dec.transient:
        t = np.array(dec.transient)
        rec = np.setdiff1d(np.arange(n), t)
        q = p[np.ix_(t, t)]
        g[t] = dense_solve(np.eye(t.size) - q, p[np.ix_(t, rec)] @ g[rec])
    return g


def _condensation_order(adj: np.ndarray):
    """SCC labels and the SCC ids ordered sinks-first."""
    n_comp, labels = connected_components(csr_matrix(adj), directed=True, connection="strong")
    succ = [set() for _ in range(n_comp)]
    src, dst = np.nonzero(adj)
    for i, j in zip(labels[src], labels[dst]):
        if i != j:
            succ[i].add(j)
    order, done = [], [False] * n_comp
    pending = {c: len(succ[c]) for c in range(n_comp)}
    preds = [[] for _ in range(n_comp)]
    for c in range(n_comp):
        for d in succ[c]:
            preds[d].append(c)
    ready = [c for c in range(n_comp) if pending[c] == 0]
    while ready:
        c = ready.pop()
        order.append(c)
        done[c] = True
        for b in preds[c]:
            pending[b] -= 1
            if pending[b] == 0:
                ready.append(b)
    return labels, order


def maximal_end_components(p: np.ndarray, states: Sequence[int]):
    """Maximal end components of the sub-MDP on ``states``.

    Returns a list of ``(state_indices, allowed_action_mask)`` where the mask is
    an ``S x A`` boolean array of actions whose support stays in the component.
    """
    n_s, n_a, _ = p.shape
    inside = np.zeros(n_s, dtype=bool)
    inside[list(states)] = True
    support = p > 0
    allowed = ~(support & ~inside[None, None, :]).any(axis=2) & inside[:, None]
    while True:
        alive = allowed.any(axis=1)
        adj = (support & allowed[:, :, None]).any(axis=1) & alive[:, None] & alive[None, :]
        _, labels = connected_components(csr_matrix(adj), directed=True, connection="strong")
        same = labels[:, None] == labels[None, :]
        leaving = (support & ~same[:, None, :] & alive[None, None, :]).any(axis=2) | (
            support & ~alive[None, None, :]
        ).any(axis=2)
        new_allowed = allowed & ~leaving
        if np.array_equal(new_allowed, allowed):
            break
        allowed = new_allowed
    alive = allowed.any(axis=1)
    comps = []
    for lab in np.unique(labels[alive]):
        members = np.flatnonzero(alive & (labels == lab))
        mask = np.zeros_like(allowed)
        mask[members] = allowed[members]
        comps.append((members, mask))
    return comps


def _communicating_gain(p, r, members, mask, tol=1e-13, max_iter=10**6) -> float:
    """Optimal gain of a communicating sub-MDP by relative value iteration."""
    sub_p = p[np.ix_(members, np.arange(p.shape[1]), members)]
    sub_r = r[members]
    m = mask[members]
    tau = 0.5  # aperiodicity transform: h <- (1 - tau) h + tau T(h)
    h = np.zeros(members.size)
    g_est = 0.0
    for _ in range(max_iter):
        q = np.where(m, sub_r + sub_p @ h, -np.inf)
        th = q.max(axis=1)
        diff = th - h
        g_est = 0.5 * (diff.max() + diff.min())
        if diff.max() - diff.min() < tol:
            break
        h = (1 - tau) * h + tau * (th - th[0])
    q = np.where(m, sub_r + sub_p @ h, -np.inf)
    acts = q.argmax(axis=1)
    chain = sub_p[np.arange(members.size), acts]
    exact = chain_gains(chain, sub_r[np.arange(members.size), acts]).max()
    return float(exact) if abs(exact - g_est) < 1e-7 else float(g_est)


def optimal_gain(mdp: FiniteMdp, per_state: bool = True, tol: float = 1e-14, max_iter: int = 10**6):
    """Optimal long-run average reward ``g*(s)`` of a possibly multichain MDP.

    Strongly connected components of the support graph are processed
    sinks-first. Inside each component the maximal end components get their
    communicating optimal gain by relative value iteration; the remaining
    states solve ``w(s) = max(stop(s), max_a sum_s' p w)`` where ``stop`` is the
    end-component gain.
    """
    p = mdp.transitions
    r = mdp.mean_rewards
    n_s, n_a, _ = p.shape
    adj = (p > 0).any(axis=1)
    labels, order = _condensation_order(adj)
    g = np.zeros(n_s)
    for comp in order:
        members = np.flatnonzero(labels == comp)
        stop = np.full(n_s, -np.inf)
        for mec_states, mask in maximal_end_components(p, members):
            stop[mec_states] = _communicating_gain(p, r, mec_states, mask)
        w = g.copy()
        w[members] = np.maximum(stop[members], 0.0)
        pm = p[members]
        for _ in range(max_iter):
            best = (pm @ w).max(axis=1)
            new = np.maximum(stop[members], best)
            change = np.abs(new - w[members]).max()
            w[members] = new
            if change < tol:
                break
        # polish with an exact solve of the greedy stop/continue strategy
        q = pm @ w
        acts = q.argmax(axis=1)
        stops = stop[members] >= q.max(axis=1) - 1e-12
        k = members.size
        local = {s: i for i, s in enumerate(members)}
        a_mat = np.eye(k)
        rhs = np.where(stops, stop[members], 0.0)
        outside = np.setdiff1d(np.arange(n_s), members)
        for i in range(k):
            if stops[i]:
                continue
            row = pm[i, acts[i]]
            for s in members:
                a_mat[i, local[s]] -= row[s]
            rhs[i] = row[outside] @ g[outside]
        try:
            exact = dense_solve(a_mat, rhs)
            if np.abs(exact - w[members]).max() < 1e-8:
                w[members] = exact
        except SingularSystem:
            pass
        g[members] = w[members]
    return g if per_state else float(g.max())


def is_recoverable(mdp: FiniteMdp) -> bool:
    g = optimal_gain(mdp)
    return bool(g.max() - g.min() <= 1e-9)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def _load_rows(flat, shape, what: str) -> np.ndarray:
    p = np.asarray(flat, dtype=float)
    if p.size != int(np.prod(shape)):
        raise DimensionMismatch(f"{what}: expected {int(np.prod(shape))} entries, got {p.size}")
    p = p.reshape(shape)
    if p.min(initial=0.0) < 0:
        raise ValidationError(f"{what}: negative probability")
    err = np.abs(p.sum(axis=-1) - 1.0)
    if err.max() > 1e-9:
        raise ValidationError(f"{what}: row off by {err.max():.3g} (> 1e-9)")
    return p / p.sum(axis=-1, keepdims=True)


def mdp_from_dict(doc: dict) -> FiniteMdp:
    """Build a FiniteMdp from the JSON model document."""
    try:
        n_s, n_a = int(doc["n_states"]), int(doc["n_actions"])
        r_max = float(doc["r_max"])
        p = _load_rows(doc["transitions"], (n_s, n_a, n_s), "transitions")
        rewards = RewardTable.from_specs(doc["rewards"], (n_s, n_a), r_max)
    except KeyError as exc:
        raise ValidationError(f"model document missing field {exc.args[0]!r}") from None
    if doc.get("reward_offsets") is not None:
        rewards = rewards.with_offsets(np.asarray(doc["reward_offsets"], float).reshape(n_s, n_a, n_s))
    reset = doc.get("reset")
    if reset is not None:
        reset = (int(reset["action"]), int(reset["initial"]))
    return FiniteMdp(p, rewards, r_max, reset)


def mdp_to_dict(mdp: FiniteMdp) -> dict:
    doc = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "transitions": [float(x) for x in mdp.transitions.ravel()],
        "rewards": mdp.rewards.to_specs(),
        "r_max": float(mdp.r_max),
        "reset": None if mdp.reset is None else {"action": mdp.reset[0], "initial": mdp.reset[1]},
    }
    if mdp.rewards.offsets is not None:
        doc["reward_offsets"] = [float(x) for x in mdp.rewards.offsets.ravel()]
    return doc


ModelLike = Union[FiniteMdp, Mrp]
