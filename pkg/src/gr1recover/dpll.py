"""Minimal CNF satisfiability solver, kept as an independent oracle.

The production monitor evaluates clause bodies directly (the triplet is a
total assignment).  This module takes the long way round on purpose: encode
the body to CNF, conjoin one unit clause per forced literal, and decide
satisfiability -- unsatisfiable means the triplet violates the clause.
Agreement between the two routes is part of the acceptance suite.
"""

from __future__ import annotations

from .formulas import And, Atom, BooleanFormula, FalseConst, Iff, Implies, NextAtom, Not, Or, TrueConst
from .specs import PropositionTable, SafetyClause
from .semantics import Triplet

Clause = list[int]


def tseitin(formula: BooleanFormula, n_props: int) -> tuple[list[Clause], int]:
    """Structural CNF encoding.

    Variable numbering: current-step proposition i is variable i + 1, the
    next-step copy of proposition i is variable n_props + i + 1, and fresh
    definition variables follow.  Returns (clauses, root literal).
    """
    clauses: list[Clause] = []
    fresh = [2 * n_props]

    def new_var() -> int:
        fresh[0] += 1
        return fresh[0]

    def enc(node: BooleanFormula) -> int:
        if isinstance(node, TrueConst):
            g = new_var()
            clauses.append([g])
            return g
        if isinstance(node, FalseConst):
            g = new_var()
            clauses.append([-g])
            return g
        if isinstance(node, Atom):
            return node.prop.index + 1
        if isinstance(node, NextAtom):
            return n_props + node.prop.index + 1
        if isinstance(node, Not):
            a = enc(node.child)
            g = new_var()
            clauses.append([-g, -a])
            clauses.append([g, a])
            return g
        if isinstance(node, And):
            a, b = enc(node.left), enc(node.right)
            g = new_var()
            clauses.append([-g, a])
            clauses.append([-g, b])
            clauses.append([g, -a, -b])
            return g
        if isinstance(node, Or):
            a, b = enc(node.left), enc(node.right)
            g = new_var()
            clauses.append([-g, a, b])
            clauses.append([g, -a])
            clauses.append([g, -b])
            return g
        if isinstance(node, Implies):
            a, b = enc(node.left), enc(node.right)
            g = new_var()
            clauses.append([-g, -a, b])
            clauses.append([g, a])
            clauses.append([g, -b])
            return g
        if isinstance(node, Iff):
            a, b = enc(node.left), enc(node.right)
            g = new_var()
            clauses.append([-g, -a, b])
            clauses.append([-g, a, -b])
            clauses.append([g, a, b])
            clauses.append([g, -a, -b])
            return g
        raise TypeError(f"not a formula node: {node!r}")

    root = enc(formula)
    return clauses, root


def _simplify(cnf: list[Clause], lit: int) -> list[Clause]:
    out = []
    for clause in cnf:
        if lit in clause:
            continue
        if -lit in clause:
            out.append([x for x in clause if x != -lit])
        else:
            out.append(clause)
    return out


def dpll(cnf: list[Clause]) -> bool:
    """Satisfiability by unit propagation, pure literal elimination, and
    first-variable splitting."""
    while True:
        if not cnf:
            return True
        if any(len(c) == 0 for c in cnf):
            return False
        unit = next((c[0] for c in cnf if len(c) == 1), None)
        if unit is not None:
            cnf = _simplify(cnf, unit)
            continue
        literals = {lit for clause in cnf for lit in clause}
        pure = next((lit for lit in literals if -lit not in literals), None)
        if pure is not None:
            cnf = _simplify(cnf, pure)
            continue
        var = abs(cnf[0][0])
        return dpll(_simplify(cnf, var)) or dpll(_simplify(cnf, -var))


def violates_by_sat(clause: SafetyClause, t: Triplet, props: PropositionTable) -> bool:
    """Decide violation the heavyweight way: body CNF plus one unit per
    forced literal; unsatisfiable means violated."""
    cnf, root = tseitin(clause.body, props.n_props)
    cnf = [list(c) for c in cnf]
    cnf.append([root])
    now = t.x_in | t.y_out
    for i in range(props.n_props):
        var = i + 1
        cnf.append([var] if now >> i & 1 else [-var])
    for i in range(props.n_inputs):
        var = props.n_props + i + 1
        cnf.append([var] if t.x_in_next >> i & 1 else [-var])
    return not dpll(cnf)
