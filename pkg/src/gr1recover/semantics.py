"""Pointwise formula evaluation, triplet violation checking, trace checking.

An observation triplet (X_in, Y_out, X_in') fully assigns every literal a
safety clause can mention, so violation checking reduces to evaluating the
clause body under that assignment.  All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

from .formulas import And, Atom, BooleanFormula, FalseConst, Iff, Implies, NextAtom, Not, Or, TrueConst
from .specs import GR1Spec, PropositionTable, SafetyClause


class DomainError(Exception):
    """A formula read an atom outside the assignment's domain."""


@dataclass(frozen=True)
class Assignment:
    """Truth values for one step and the next, as bit vectors with explicit
    domain masks; reads outside a domain raise DomainError."""

    now: int
    nxt: int
    now_domain: int
    next_domain: int


@dataclass(frozen=True)
class Triplet:
    """Previous inputs, executed outputs, current inputs."""

    x_in: int
    y_out: int
    x_in_next: int


@dataclass(frozen=True)
class LassoTrace:
    """Finite prefix plus a repeating loop of (input state, output state)."""

    prefix: tuple[tuple[int, int], ...]
    loop: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.loop:
            raise ValueError("lasso loop must be non-empty")


@dataclass(frozen=True)
class TraceCheckReport:
    env_ok: bool
    sys_ok: bool
    goals_met: tuple[bool, ...]


def assignment_of(props: PropositionTable, t: Triplet) -> Assignment:
    all_mask = (1 << props.n_props) - 1
    return Assignment(
        now=t.x_in | t.y_out,
        nxt=t.x_in_next,
        now_domain=all_mask,
        next_domain=props.input_mask,
    )


def step_assignment(props: PropositionTable, now: tuple[int, int], nxt: tuple[int, int]) -> Assignment:
    all_mask = (1 << props.n_props) - 1
    return Assignment(
        now=now[0] | now[1],
        nxt=nxt[0] | nxt[1],
        now_domain=all_mask,
        next_domain=all_mask,
    )


def state_assignment(props: PropositionTable, x: int, y: int) -> Assignment:
    all_mask = (1 << props.n_props) - 1
    return Assignment(now=x | y, nxt=0, now_domain=all_mask, next_domain=0)


def evaluate(f: BooleanFormula, a: Assignment) -> bool:
    """Standard Boolean semantics; next(p) reads the next-step assignment."""
    if isinstance(f, TrueConst):
        return True
    if isinstance(f, FalseConst):
        return False
    if isinstance(f, Atom):
        bit = 1 << f.prop.index
        if not a.now_domain & bit:
            raise DomainError(f"atom {f.prop.name!r} outside assignment domain")
        return bool(a.now & bit)
    if isinstance(f, NextAtom):
        bit = 1 << f.prop.index
        if not a.next_domain & bit:
            raise DomainError(f"next({f.prop.name}) outside assignment domain")
        return bool(a.nxt & bit)
    if isinstance(f, Not):
        return not evaluate(f.child, a)
    if isinstance(f, And):
        return evaluate(f.left, a) and evaluate(f.right, a)
    if isinstance(f, Or):
        return evaluate(f.left, a) or evaluate(f.right, a)
    if isinstance(f, Implies):
        return (not evaluate(f.left, a)) or evaluate(f.right, a)
    if isinstance(f, Iff):
        return evaluate(f.left, a) == evaluate(f.right, a)
    raise TypeError(f"not a formula node: {f!r}")


def violates(clause: SafetyClause, t: Triplet, props: PropositionTable) -> bool:
    """True iff the triplet falsifies the clause body.

    The triplet assigns every current atom and every next input, so this is
    equivalent to conjoining the body with all forced literals and asking for
    satisfiability -- see `dpll.violates_by_sat` for that oracle.
    """
    return not evaluate(clause.body, assignment_of(props, t))


def check_trace(spec: GR1Spec, trace: LassoTrace) -> TraceCheckReport:
    """Check a lasso against safety (every consecutive pair, including the
    loop closure) and liveness (each body somewhere in the loop)."""
    props = spec.props
    seq = list(trace.prefix) + list(trace.loop)
    pairs = list(zip(seq, seq[1:]))
    pairs.append((seq[-1], trace.loop[0]))

    def safety_ok(clauses) -> bool:
        for now, nxt in pairs:
            a = step_assignment(props, now, nxt)
            for c in clauses:
                if not evaluate(c.body, a):
                    return False
        return True

    def live_in_loop(body: BooleanFormula) -> bool:
        return any(
            evaluate(body, state_assignment(props, x, y)) for x, y in trace.loop
        )

    env_ok = safety_ok(list(spec.env_safety_skill) + list(spec.env_safety_hard)) and all(
        live_in_loop(c.body) for c in spec.env_liveness
    )
    goals = tuple(live_in_loop(c.body) for c in spec.sys_liveness)
    sys_ok = safety_ok(spec.sys_safety) and all(goals)
    return TraceCheckReport(env_ok=env_ok, sys_ok=sys_ok, goals_met=goals)
