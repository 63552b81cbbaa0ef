"""Runtime monitor over the environment safety assumptions.

The monitor indexes every environment safety clause (skill and hard origins
both: postcondition violations from flaky skills need watching just as much
as moved obstacles) and reports which are falsified by an observed triplet.
"""

from __future__ import annotations

from dataclasses import dataclass

from .formulas import next_atoms, now_atoms
from .specs import GR1Spec, PropositionTable, SafetyClause, SpecError
from .semantics import Triplet, violates


@dataclass(frozen=True)
class ViolationReport:
    violated: frozenset[int]
    triplet: Triplet
    active_goal_index: int


class Monitor:
    """Indexed environment safety clauses: env_safety_skill first, then
    env_safety_hard, in spec order."""

    def __init__(self, props: PropositionTable, clauses: list[SafetyClause]):
        self.props = props
        self.clauses = clauses
        index: dict[int, list[int]] = {}
        for ci, clause in enumerate(clauses):
            for p in now_atoms(clause.body) | next_atoms(clause.body):
                index.setdefault(p, []).append(ci)
        self.atom_dependency_index = index

    def clause_text(self, index: int) -> str:
        return self.clauses[index].text()


def compile_monitor(spec: GR1Spec) -> Monitor:
    return Monitor(spec.props, list(spec.env_safety_skill) + list(spec.env_safety_hard))


def check_assumptions(m: Monitor, t: Triplet, active_goal: int = 0) -> ViolationReport:
    """Evaluate every clause under the triplet's total assignment."""
    m.props.check_mutex(t.x_in, require_cover=True)
    m.props.check_mutex(t.x_in_next, require_cover=True)
    violated = frozenset(
        ci for ci, clause in enumerate(m.clauses) if violates(clause, t, m.props)
    )
    return ViolationReport(violated=violated, triplet=t, active_goal_index=active_goal)


def parse_triplet_line(line: str, props: PropositionTable) -> Triplet:
    """Parse `{p, ...} | {y, ...} | {p, ...}` into a triplet."""
    parts = line.split("|")
    if len(parts) != 3:
        raise SpecError(f"triplet line needs three '|'-separated states: {line.strip()!r}")

    def state(text: str, *, outputs: bool) -> int:
        text = text.strip()
        if not (text.startswith("{") and text.endswith("}")):
            raise SpecError(f"state must be brace-enclosed: {text!r}")
        inner = text[1:-1].strip()
        mask = 0
        if inner:
            for name in inner.split(","):
                p = props.lookup(name.strip())
                if outputs != (p.index >= props.n_inputs):
                    kind = "output" if outputs else "input"
                    raise SpecError(f"{p.name!r} is not an {kind} proposition")
                mask |= 1 << p.index
        return mask

    return Triplet(
        x_in=state(parts[0], outputs=False),
        y_out=state(parts[1], outputs=True),
        x_in_next=state(parts[2], outputs=False),
    )
