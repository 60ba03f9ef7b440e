"""Single-path policy evaluation: loop, model-based and TD(k) estimators.

Each estimator has an online fold (``*_update``, one record at a time, pure)
and a batch routine that processes many seeds at once and reports
estimates at a list of checkpoints. Batch and fold agree to rounding.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

from mdplab.core import Mrp, sample_paths, solve_discounted_values
from mdplab.errors import NoCompletedLoops, ValidationError

# ---------------------------------------------------------------------------
# loop estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoopEstimatorState:
    """O(1) running state of the loop estimator for one target state."""

    target: int
    gamma: float
    n_loops: int = 0
    alpha_hat: float = 0.0
    beta_hat: float = 0.0
    in_loop: bool = False
    loop_discount_accum: float = 1.0
    loop_reward_accum: float = 0.0


def loop_update(state: LoopEstimatorState, record) -> LoopEstimatorState:
    """Consume one ``(X_t, R_t)`` record.

    A visit to the target closes the running loop (if any) and opens a new
    one. Records before the first visit are ignored.
    """
    x, r = int(record[0]), float(record[1])
    n, a, b = state.n_loops, state.alpha_hat, state.beta_hat
    disc, acc, in_loop = state.loop_discount_accum, state.loop_reward_accum, state.in_loop
    if x == state.target:
        if in_loop:
            n += 1
            a = disc / n + (1 - 1 / n) * a
            b = acc / n + (1 - 1 / n) * b
        in_loop, disc, acc = True, 1.0, 0.0
    if in_loop:
        acc += disc * r
        disc *= state.gamma
    return replace(
        state, n_loops=n, alpha_hat=a, beta_hat=b, in_loop=in_loop,
        loop_discount_accum=disc, loop_reward_accum=acc,
    )


def loop_estimate(state: LoopEstimatorState) -> float:
    """``beta_hat / (1 - alpha_hat)``."""
    if state.n_loops == 0:
        raise NoCompletedLoops(f"no loop through state {state.target} has completed")
    return state.beta_hat / (1.0 - state.alpha_hat)


def loop_statistics(states: np.ndarray, rewards: np.ndarray, target: int, gamma: float):
    """Per-loop ``(gamma^I_i, G_i, end_i)`` of one path, by direct segmentation."""
    states = np.asarray(states)
    rewards = np.asarray(rewards, dtype=float)
    w = np.flatnonzero(states == target)
    if w.size < 2:
        e = np.zeros(0)
        return e, e, np.zeros(0, dtype=np.int64)
    t = np.arange(states.size)
    last = np.maximum.accumulate(np.where(states == target, t, -1))
    weights = np.where(last >= 0, gamma ** (t - np.maximum(last, 0)), 0.0)
    g = np.add.reduceat(weights * rewards, w)[:-1]
    return gamma ** np.diff(w).astype(float), g, w[1:]


def loop_estimates_batch(states, rewards, gamma: float, n_states: int, checkpoints: Sequence[int], fill: float = 0.0):
    """Loop estimates of every state at each checkpoint.

    ``checkpoints`` count records, so checkpoint ``c`` sees ``X_0..X_{c-1}``.
    Returns ``(estimates, n_loops)`` of shape ``(n_seeds, n_checkpoints, S)``;
    states with no completed loop get ``fill``.
    """
    states = np.atleast_2d(states)
    rewards = np.atleast_2d(rewards)
    ck = np.asarray(checkpoints, dtype=np.int64)
    n = states.shape[0]
    est = np.full((n, ck.size, n_states), fill)
    loops = np.zeros((n, ck.size, n_states), dtype=np.int64)
    for i in range(n):
        for s in range(n_states):
            gi, g, ends = loop_statistics(states[i], rewards[i], s, gamma)
            if ends.size == 0:
                continue
            cnt = np.searchsorted(ends, ck - 1, side="right")
            ca = np.concatenate([[0.0], np.cumsum(gi)])[cnt]
            cb = np.concatenate([[0.0], np.cumsum(g)])[cnt]
            ok = cnt > 0
            safe = np.maximum(cnt, 1)
            est[i, ok, s] = (cb / safe / (1.0 - ca / safe))[ok]
            loops[i, :, s] = cnt
    return est, loops


# ---------------------------------------------------------------------------
# model-based plug-in estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelBasedState:
    """Transition counts, reward sums and visit counts of one path."""

    counts: np.ndarray
    reward_sums: np.ndarray
    visits: np.ndarray
    last: tuple = None  # pending (X_t, R_t) awaiting its successor

    @classmethod
    def empty(cls, n_states: int) -> "ModelBasedState":
        return cls(np.zeros((n_states, n_states), dtype=np.int64), np.zeros(n_states), np.zeros(n_states, dtype=np.int64))


def model_based_update(state: ModelBasedState, record) -> ModelBasedState:
    x, r = int(record[0]), float(record[1])
    if state.last is None:
        return replace(state, last=(x, r))
    px, pr = state.last
    counts = state.counts.copy()
    sums = state.reward_sums.copy()
    visits = state.visits.copy()
    counts[px, x] += 1
    sums[px] += pr
    visits[px] += 1
    return ModelBasedState(counts, sums, visits, (x, r))


def _smoothed(counts, sums, visits):
    n_states = counts.shape[-1]
    denom = 1.0 + visits
    p_hat = (1.0 / n_states + counts) / denom[..., None]
    return p_hat, sums / denom


def model_based_estimate(state: ModelBasedState, gamma: float) -> np.ndarray:
    """Add-one smoothed plug-in values ``(I - gamma P_hat)^-1 r_hat``."""
    p_hat, r_hat = _smoothed(state.counts, state.reward_sums, state.visits)
    return np.linalg.solve(np.eye(p_hat.shape[0]) - gamma * p_hat, r_hat)


def model_based_estimates_batch(states, rewards, gamma: float, n_states: int, checkpoints: Sequence[int]) -> np.ndarray:
    states = np.atleast_2d(states)
    rewards = np.atleast_2d(rewards)
    n = states.shape[0]
    ck = np.asarray(checkpoints, dtype=np.int64)
    counts = np.zeros((n, n_states, n_states))
    sums = np.zeros((n, n_states))
    visits = np.zeros((n, n_states))
    out = np.empty((n, ck.size, n_states))
    seed = np.arange(n)[:, None]
    done = 0  # transitions (X_t, X_{t+1}) with t < done are counted
    eye = np.eye(n_states)
    for j, c in enumerate(ck):
        hi = max(int(c) - 1, 0)
        if hi > done:
            x = states[:, done:hi]
            y = states[:, done + 1 : hi + 1]
            sb = np.broadcast_to(seed, x.shape)
            np.add.at(counts, (sb, x, y), 1.0)
            np.add.at(sums, (sb, x), rewards[:, done:hi])
            np.add.at(visits, (sb, x), 1.0)
            done = hi
        p_hat, r_hat = _smoothed(counts, sums, visits)
        out[:, j] = np.linalg.solve(eye - gamma * p_hat, r_hat[..., None])[..., 0]
    return out


# ---------------------------------------------------------------------------
# TD(k)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TdEstimatorState:
    """k-step TD with learning rate ``1 / visits^d``."""

    k: int
    d: float
    gamma: float
    values: np.ndarray
    visit_counts: np.ndarray
    window: tuple = field(default=())

    @classmethod
    def empty(cls, n_states: int, gamma: float, k: int = 0, d: float = 1.0) -> "TdEstimatorState":
        if k < 0 or not 0.5 <= d <= 1:
            raise ValidationError("need k >= 0 and d in [1/2, 1]")
        return cls(k, d, gamma, np.zeros(n_states), np.zeros(n_states, dtype=np.int64))


def td_update(state: TdEstimatorState, record) -> TdEstimatorState:
    """Append a record; once ``X_{t+k+1}`` is known, update the value of ``X_t``."""
    window = state.window + ((int(record[0]), float(record[1])),)
    if len(window) < state.k + 2:
        return replace(state, window=window)
    x = window[0][0]
    y = window[-1][0]
    ret = sum(state.gamma**j * window[j][1] for j in range(state.k + 1))
    values = state.values.copy()
    counts = state.visit_counts.copy()
    counts[x] += 1
    eta = counts[x] ** (-state.d)
    values[x] = (1 - eta) * values[x] + eta * (ret + state.gamma ** (state.k + 1) * state.values[y])
    return replace(state, values=values, visit_counts=counts, window=window[1:])


def td_estimates_batch(states, rewards, gamma: float, n_states: int, checkpoints: Sequence[int], k: int = 0, d: float = 1.0) -> np.ndarray:
    """TD(k) values at each checkpoint; the last ``k + 1`` records never trigger updates."""
    states = np.atleast_2d(states)
    rewards = np.atleast_2d(rewards)
    n, horizon = states.shape
    ck = np.asarray(checkpoints, dtype=np.int64)
    m = max(horizon - k - 1, 0)  # number of updates available
    ret = np.zeros((n, m))
    for j in range(k + 1):
        ret += gamma**j * rewards[:, j : j + m]
    boot = gamma ** (k + 1)
    v = np.zeros((n, n_states))
    cnt = np.zeros((n, n_states))
    out = np.empty((n, ck.size, n_states))
    rows = np.arange(n)
    # checkpoint c includes updates t <= c - k - 2
    limits = ck - k - 1
    j = 0
    for t in range(m + 1):
        while j < ck.size and limits[j] <= t:
            out[:, j] = v
            j += 1
        if t == m or j == ck.size:
            break
        x = states[:, t]
        y = states[:, t + k + 1]
        cnt[rows, x] += 1.0
        eta = cnt[rows, x] ** (-d)
        tgt = ret[:, t] + boot * v[rows, y]
        v[rows, x] = (1 - eta) * v[rows, x] + eta * tgt
    out[:, j:] = v[:, None, :]
    return out


# ---------------------------------------------------------------------------
# comparison harness
# ---------------------------------------------------------------------------

Estimator = Union[str, Callable]
_TD = re.compile(r"^td\((\d+)\s*,\s*([0-9.]+)\)$")


def log_checkpoints(horizon: int, n: int = 30, first: int = 100) -> np.ndarray:
    pts = np.unique(np.round(np.geomspace(first, horizon, n)).astype(np.int64))
    return pts


def _run_one(name: Estimator, states, rewards, gamma, n_states, ck):
    if callable(name):
        return name(states, rewards, gamma, n_states, ck)
    if name in ("loop", "loop-all-states"):
        return loop_estimates_batch(states, rewards, gamma, n_states, ck)[0]
    if name == "model-based":
        return model_based_estimates_batch(states, rewards, gamma, n_states, ck)
    m = _TD.match(name.replace(" ", ""))
    if m:
        return td_estimates_batch(states, rewards, gamma, n_states, ck, int(m.group(1)), float(m.group(2)))
    raise ValidationError(f"unknown estimator {name!r}")


@dataclass(frozen=True)
class ComparisonResult:
    """Normalized absolute errors ``|v_hat - v| / max_s v(s)``.

    ``errors[name]`` has shape ``(n_seeds, n_checkpoints, S)``.
    """

    gamma: float
    checkpoints: np.ndarray
    seeds: np.ndarray
    true_values: np.ndarray
    errors: dict

    def linf(self, name) -> np.ndarray:
        return self.errors[name].max(axis=2)

    def summary(self) -> list:
        rows = []
        for name, err in self.errors.items():
            linf = err.max(axis=2)
            for j, c in enumerate(self.checkpoints):
                rows.append({
                    "estimator": str(name), "step": int(c),
                    "mean": float(linf[:, j].mean()), "std": float(linf[:, j].std()),
                    "median": float(np.median(linf[:, j])),
                })
        return rows

    def rows(self) -> list:
        """Long-format rows ``(estimator, seed, step, linf_error, e_0, ..., e_{S-1})``."""
        out = []
        for name, err in self.errors.items():
            for i, sd in enumerate(self.seeds):
                for j, c in enumerate(self.checkpoints):
                    e = err[i, j]
                    out.append([str(name), int(sd), int(c), float(e.max()), *map(float, e)])
        return out


def run_comparison(env: Mrp, gamma: float, horizon: int, n_seeds: int, estimators: Sequence[Estimator], start: int = 0, seed_offset: int = 0, checkpoints=None) -> ComparisonResult:
    """Run each estimator on the same ``n_seeds`` sample paths and record errors.

    Estimators see only the sampled states and rewards. A callable estimator
    receives ``(states, rewards, gamma, n_states, checkpoints)`` and returns
    estimates of shape ``(n_seeds, n_checkpoints, S)``.
    """
    ck = log_checkpoints(horizon) if checkpoints is None else np.asarray(checkpoints, dtype=np.int64)
    seeds = np.arange(seed_offset, seed_offset + n_seeds)
    v = solve_discounted_values(env, gamma)
    scale = float(np.abs(v).max()) or 1.0
    states, _, rewards = sample_paths(env, start, horizon, seeds)
    errors = {}
    for name in estimators:
        est = _run_one(name, states, rewards, gamma, env.n_states, ck)
        errors[name] = np.abs(est - v) / scale
    return ComparisonResult(gamma, ck, seeds, v, errors)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.corrcoef(x, y)[0, 1])


def hoeffding_visit_bound(r_max: float, gamma: float, n: int, delta: float) -> float:
    """Deviation bound for the loop estimate after ``n`` completed loops."""
    return r_max / (1 - gamma) ** 2 * math.sqrt(math.log(4 / delta) / (2 * n))
