"""Sparse NLP representation and complementarity-aware solvers."""
from .problem import NLPSpec, ProblemBuilder, Symbolic, ValidationReport, spec_from_symbolic, validate
from .solver import SolveReport, SolverOptions, check_kkt, solve, stationarity_residual

__all__ = ["NLPSpec", "ProblemBuilder", "Symbolic", "ValidationReport", "spec_from_symbolic",
           "validate", "SolveReport", "SolverOptions", "check_kkt", "solve",
           "stationarity_residual"]
