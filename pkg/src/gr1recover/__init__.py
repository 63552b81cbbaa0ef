"""Closed-loop execution of reactive robot strategies: synthesize, monitor,
relax violated assumptions, and repair the task with new skills."""

from .formulas import (
    And,
    Atom,
    BooleanFormula,
    FALSE,
    Iff,
    Implies,
    NextAtom,
    Not,
    Or,
    PropositionId,
    TRUE,
    to_text,
)
from .specs import (
    GR1Spec,
    LivenessClause,
    PropositionTable,
    SafetyClause,
    Skill,
    SpecError,
    generate_skill_clauses,
    make_spec,
)
from .specfile import parse_formula, parse_spec, print_spec
from .semantics import (
    Assignment,
    LassoTrace,
    Triplet,
    check_trace,
    evaluate,
    violates,
)

__all__ = [
    "And", "Atom", "BooleanFormula", "FALSE", "Iff", "Implies", "NextAtom",
    "Not", "Or", "PropositionId", "TRUE", "to_text",
    "GR1Spec", "LivenessClause", "PropositionTable", "SafetyClause", "Skill",
    "SpecError", "generate_skill_clauses", "make_spec",
    "parse_formula", "parse_spec", "print_spec",
    "Assignment", "LassoTrace", "Triplet", "check_trace", "evaluate", "violates",
]
