"""Record stopping on proportional-increment counting processes."""

from .exact_values import (
    Tolerance,
    f_j,
    gap_n1,
    pi_record_is_best,
    threshold_rule_value,
)
from .hjb_solver import SolverConfig, extract_boundary, solve_optimal, solve_policy
from .montecarlo import MonteCarloEstimate, Strategy, estimate_pi, estimate_win
from .pi_process import NegBinomialLaw, ProcessState, simulate_path

__all__ = [
    "MonteCarloEstimate",
    "NegBinomialLaw",
    "ProcessState",
    "SolverConfig",
    "Strategy",
    "Tolerance",
    "estimate_pi",
    "estimate_win",
    "extract_boundary",
    "f_j",
    "gap_n1",
    "pi_record_is_best",
    "simulate_path",
    "solve_optimal",
    "solve_policy",
    "threshold_rule_value",
]

__version__ = "0.1.0"
