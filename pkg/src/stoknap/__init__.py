"""Correlated stochastic knapsack with a submodular objective and a partition matroid."""
from .cgreedy import GreedyConfig, continuous_greedy, greedy_quality_report
from .estimator import StochasticKnapsackPolicy
from .io import read_instance, read_solution, write_instance
from .model import (
    BaseItem,
    ExpandedItem,
    Instance,
    InstanceError,
    PartitionMatroid,
    RewardCurve,
    SizeDistribution,
    apply_size_cap,
    expand_with_caps,
    spot_reduce,
    validate_instance,
)
from .objective import (
    Additive,
    ConcaveOfSum,
    NestedCoverage,
    check_monotone_lattice_submodular,
    multilinear_estimate,
    multilinear_exact,
)
from .polytope import build_constraints, check_feasibility, solve_weighted
from .rounding import execute, run_policy_once
from .verify import optimal_adaptive_dp, simulate_favg

__version__ = "0.1.0"

__all__ = [
    "Additive",
    "BaseItem",
    "ConcaveOfSum",
    "ExpandedItem",
    "GreedyConfig",
    "Instance",
    "InstanceError",
    "NestedCoverage",
    "PartitionMatroid",
    "RewardCurve",
    "SizeDistribution",
    "StochasticKnapsackPolicy",
    "apply_size_cap",
    "build_constraints",
    "check_feasibility",
    "check_monotone_lattice_submodular",
    "continuous_greedy",
    "execute",
    "expand_with_caps",
    "greedy_quality_report",
    "multilinear_estimate",
    "multilinear_exact",
    "optimal_adaptive_dp",
    "read_instance",
    "read_solution",
    "run_policy_once",
    "simulate_favg",
    "solve_weighted",
    "spot_reduce",
    "validate_instance",
    "write_instance",
]
