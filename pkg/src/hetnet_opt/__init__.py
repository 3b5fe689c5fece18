"""Pattern-based joint user association and resource allocation for HetNets."""

from .association import (Association, JointResult, association_update, effective_rates,
                          re_association, solve_fixed_association, solve_single_bs)
from .corrective import RestrictedProblem, restricted_solve, solve_relaxed_fc
from .fw_solver import (Allocation, SolverOptions, SolverResult, armijo_step, lmo,
                        solve_relaxed_fw, utility_and_gradient)
from .harness import MetricsReport, StrategySpec, metrics, run_comparison
from .patterns import PatternSet, Topology, build_strategy_patterns, enumerate_all_patterns
from .rates import FadingOptions, RateMatrix, compute_rate_matrix
from .scenario import Scenario, ScenarioConfig, generate_scenario, pathloss_db

__version__ = "0.1.0"

__all__ = [
    "Association", "JointResult", "association_update", "effective_rates", "re_association",
    "solve_fixed_association", "solve_single_bs",
    "RestrictedProblem", "restricted_solve", "solve_relaxed_fc",
    "Allocation", "SolverOptions", "SolverResult", "armijo_step", "lmo", "solve_relaxed_fw",
    "utility_and_gradient",
    "MetricsReport", "StrategySpec", "metrics", "run_comparison",
    "PatternSet", "Topology", "build_strategy_patterns", "enumerate_all_patterns",
    "FadingOptions", "RateMatrix", "compute_rate_matrix",
    "Scenario", "ScenarioConfig", "generate_scenario", "pathloss_db",
]
