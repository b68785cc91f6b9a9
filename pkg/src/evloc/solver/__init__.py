from ..plan import BuildPlan
from .bnc import SolveLimits, SolveResult, branch_and_cut, solve_baseline
from .lp import DenseSimplex, HighsBackend, LinprogBackend, LpBackend, make_backend
from .sgi import Cut, QEvaluator, q_gradient, q_value, separate_sgi

__all__ = [
    "BuildPlan", "Cut", "DenseSimplex", "HighsBackend", "LinprogBackend", "LpBackend", "QEvaluator", "SolveLimits",
    "SolveResult", "branch_and_cut", "make_backend", "q_gradient", "q_value", "separate_sgi",
    "solve_baseline",
]
