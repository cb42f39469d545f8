"""Constraint IR, bundled solver and SMT-LIB2 bridge."""

from .ir import (
    FALSE,
    TRUE,
    And,
    ConstraintProblem,
    Const,
    EncodingError,
    Eq,
    ExactlyOneOf,
    Expr,
    Implies,
    LinearAtom,
    Not,
    Or,
    PartialModelError,
    Sort,
    Var,
    brute_force,
    evaluate,
    find_violation,
    lin,
    verify_model,
)
from .smtlib import emit_smtlib, find_external_solver, parse_sexprs, run_external
from .solver import SolveResult, Status, check_sat

__all__ = [
    "FALSE", "TRUE", "And", "ConstraintProblem", "Const", "EncodingError", "Eq", "ExactlyOneOf", "Expr",
    "Implies", "LinearAtom", "Not", "Or", "PartialModelError", "Sort", "Var", "brute_force", "evaluate",
    "find_violation", "lin", "verify_model", "emit_smtlib", "find_external_solver", "parse_sexprs",
    "run_external", "SolveResult", "Status", "check_sat",
]
