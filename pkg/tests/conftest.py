import itertools

import numpy as np
import pytest

from mdplab.core import chain_gains
from mdplab.envs import make_riverswim_mrp, make_shaping_toy


@pytest.fixture
def riverswim():
    return make_riverswim_mrp()


@pytest.fixture
def toy():
    return make_shaping_toy()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def enumerate_gains(mdp):
    """Per-state max gain over all deterministic policies (brute-force oracle)."""
    p, r = mdp.transitions, mdp.mean_rewards
    n = mdp.n_states
    best = np.full(n, -np.inf)
    for acts in itertools.product(range(mdp.n_actions), repeat=n):
        idx = np.arange(n), np.array(acts)
        best = np.maximum(best, chain_gains(p[idx], r[idx]))
    return best


def value_iteration(p, r, gamma, tol=1e-13):
    v = np.zeros(len(r))
    while True:
        new = r + gamma * p @ v
        if np.abs(new - v).max() < tol:
            return new
        v = new


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
