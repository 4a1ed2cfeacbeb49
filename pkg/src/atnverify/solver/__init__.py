"""Branch-and-bound MIQCP solver on McCormick LP relaxations."""

from .bnb import Branch, SolveOptions, SolveOutcome, SolverConfigError, branch, relative_gap, solve
from .lp import LinearProgram, LPResult, solve_lp
from .relaxation import Relaxation, mccormick

__all__ = [
    "Branch",
    "LPResult",
    "LinearProgram",
    "Relaxation",
    "SolveOptions",
    "SolveOutcome",
    "SolverConfigError",
    "branch",
    "mccormick",
    "relative_gap",
    "solve",
    "solve_lp",
]
