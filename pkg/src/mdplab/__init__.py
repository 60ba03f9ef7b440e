"""Finite-MDP numerical laboratory.

Exact solvers for finite Markov decision processes, reward processes and
chains, single-path value estimators (loop, model-based, TD(k)), hitting-cost
analysis under potential-based reward shaping, optimistic regret minimizers
(UCRL2 and Reset-UCRL), and direct-cone Pareto policy optimization.
"""

from mdplab.core import (
    FiniteMdp,
    GainBias,
    Mrp,
    RewardTable,
    StochasticPolicy,
    Trajectory,
    induce_mrp,
    is_recoverable,
    optimal_gain,
    sample_path,
    solve_discounted_values,
    solve_gain_bias,
    stationary_distribution,
    subchain_decomposition,
)
from mdplab.errors import MdpLabError

__version__ = "0.1.0"

__all__ = [
    "FiniteMdp",
    "GainBias",
    "MdpLabError",
    "Mrp",
    "RewardTable",
    "StochasticPolicy",
    "Trajectory",
    "induce_mrp",
    "is_recoverable",
    "optimal_gain",
    "sample_path",
    "solve_discounted_values",
    "solve_gain_bias",
    "stationary_distribution",
    "subchain_decomposition",
]
