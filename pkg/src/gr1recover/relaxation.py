"""Rewriting violated assumptions to admit an observed transition.

A violated hard assumption gains a disjunct describing the observed triplet
over every input, every output, and every next input, all with explicit sign.
A violated skill assumption gains the same shape restricted to controllable
inputs (skill abstractions never mention uncontrollable ones).  The initial
input condition is reset to the current input state so execution can resume
in place, and the system liveness goals are rotated so the goal being pursued
at violation time comes first.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .formulas import (
    And,
    Atom,
    BooleanFormula,
    Implies,
    NextAtom,
    Not,
    Or,
    conjoin,
    disjoin,
    disjuncts,
)
from .monitor import ViolationReport
from .specs import (
    GR1Spec,
    PropositionTable,
    SafetyClause,
    Skill,
    SpecError,
    encode_chain_state,
    generate_skill_fairness,
    make_spec,
)
from .semantics import Triplet


@dataclass(frozen=True)
class RelaxationRecord:
    """One clause rewrite: which clause, its origin, and the disjunct added."""

    clause_index: int
    origin: str
    added_disjunct: BooleanFormula
    triplet: Triplet


def _signed(props: PropositionTable, mask: int, indices: list[int], *, nxt: bool) -> list[BooleanFormula]:
    atom = NextAtom if nxt else Atom
    out: list[BooleanFormula] = []
    for i in indices:
        lit: BooleanFormula = atom(props.all_props()[i])
        if not mask >> i & 1:
            lit = Not(lit)
        out.append(lit)
    return out


def hard_disjunct(props: PropositionTable, t: Triplet) -> BooleanFormula:
    """Sign-complete description of the triplet over all inputs, all outputs,
    and all next inputs, in proposition-table order."""
    inputs = list(range(props.n_inputs))
    outputs = [p.index for p in props.outputs]
    lits = (
        _signed(props, t.x_in, inputs, nxt=False)
        + _signed(props, t.y_out, outputs, nxt=False)
        + _signed(props, t.x_in_next, inputs, nxt=True)
    )
    return conjoin(lits)


def skill_disjunct(props: PropositionTable, t: Triplet) -> BooleanFormula:
    """Like `hard_disjunct` but restricted to controllable inputs."""
    ctrl = sorted(props.controllable)
    outputs = [p.index for p in props.outputs]
    lits = (
        _signed(props, t.x_in, ctrl, nxt=False)
        + _signed(props, t.y_out, outputs, nxt=False)
        + _signed(props, t.x_in_next, ctrl, nxt=True)
    )
    return conjoin(lits)


def exact_state_formula(props: PropositionTable, mask: int, indices: list[int]) -> BooleanFormula:
    return conjoin(_signed(props, mask, indices, nxt=False))


def _weaken(clause: SafetyClause, disjunct: BooleanFormula) -> SafetyClause:
    # Repeated identical violations must not stack duplicate disjuncts.
    if disjunct in disjuncts(clause.body):
        return clause
    return replace(clause, body=Or(clause.body, disjunct))


def relax(spec: GR1Spec, report: ViolationReport) -> tuple[GR1Spec, list[RelaxationRecord]]:
    """Weaken every violated clause to admit the reported triplet, reset the
    initial conditions to the observed current state, and rotate the system
    liveness goals to resume at the goal active when the violation occurred.

    Monitor clause indices cover env_safety_skill first, then env_safety_hard.
    """
    if not report.violated:
        raise SpecError("relax called with an empty violation set")
    props = spec.props
    t = report.triplet
    n_skill = len(spec.env_safety_skill)
    n_total = n_skill + len(spec.env_safety_hard)
    for idx in report.violated:
        if not 0 <= idx < n_total:
            raise SpecError(f"violated clause index {idx} out of range")

    records: list[RelaxationRecord] = []
    skill_clauses = list(spec.env_safety_skill)
    hard_clauses = list(spec.env_safety_hard)
    for idx in sorted(report.violated):
        if idx < n_skill:
            d = skill_disjunct(props, t)
            skill_clauses[idx] = _weaken(skill_clauses[idx], d)
            records.append(RelaxationRecord(idx, "skill", d, t))
        else:
            d = hard_disjunct(props, t)
            hard_clauses[idx - n_skill] = _weaken(hard_clauses[idx - n_skill], d)
            records.append(RelaxationRecord(idx, "hard", d, t))

    env_init = exact_state_formula(props, t.x_in_next, list(range(props.n_inputs)))
    # The violated skill was terminated, so execution resumes with every
    # output off; the initial output condition mirrors that.
    sys_init = exact_state_formula(props, 0, [p.index for p in props.outputs])

    j = report.active_goal_index
    goals = list(spec.sys_liveness)
    if not 0 <= j < max(len(goals), 1):
        raise SpecError(f"active goal index {j} out of range")
    reordered = tuple(goals[j:] + goals[:j])

    relaxed = GR1Spec(
        props=props,
        skills=spec.skills,
        env_init=env_init,
        sys_init=sys_init,
        env_safety_skill=tuple(skill_clauses),
        env_safety_hard=tuple(hard_clauses),
        sys_safety=spec.sys_safety,
        env_liveness=spec.env_liveness,
        sys_liveness=reordered,
    )
    return relaxed, records


def relax_skill_clause_nondeterminism(
    spec: GR1Spec, skill: Skill, chain_index: int, observed_post: int
) -> GR1Spec:
    """Fold an observed alternate outcome into the skill abstraction.

    The progress clause guarding chain state `chain_index` gains the observed
    state as one more next-step option, the skill records the branch for
    downstream repair, and the completion fairness goal accepts the branch as
    a terminal outcome.  Observing the declared postcondition is a no-op.
    """
    props = spec.props
    current = spec.skill_by_name(skill.name.name)
    if not 0 <= chain_index < len(current.chain) - 1:
        raise SpecError(f"chain index {chain_index} out of range for {skill.name.name!r}")
    props.check_mutex(observed_post, require_cover=False)
    if observed_post & ~props.controllable_mask:
        raise SpecError("observed postcondition mentions non-controllable inputs")
    if observed_post == current.chain[chain_index + 1]:
        return spec
    if (chain_index, observed_post) in current.branches:
        return spec

    new_skill = replace(
        current, branches=current.branches + ((chain_index, observed_post),)
    )

    guard = And(
        encode_chain_state(current, current.chain[chain_index], props, nxt=False),
        Atom(current.name),
    )
    option = encode_chain_state(new_skill, observed_post, props, nxt=True)

    def widen(clause: SafetyClause) -> SafetyClause:
        spine = disjuncts(clause.body)
        head = spine[0]
        if not (isinstance(head, Implies) and head.left == guard):
            return clause
        new_head = Implies(head.left, Or(head.right, option))
        return replace(clause, body=disjoin([new_head] + spine[1:]))

    matched = False
    skill_clauses = []
    for c in spec.env_safety_skill:
        if c.source_skill == current.name.name and not matched:
            widened = widen(c)
            if widened is not c:
                matched = True
                skill_clauses.append(widened)
                continue
        skill_clauses.append(c)
    if not matched:
        raise SpecError(
            f"no progress clause found for {skill.name.name!r} at chain state {chain_index}"
        )

    env_live = [
        generate_skill_fairness(new_skill, props)
        if c.auto and c.source_skill == current.name.name
        else c
        for c in spec.env_liveness
    ]
    skills = tuple(new_skill if s.name.name == current.name.name else s for s in spec.skills)
    return replace(
        spec,
        skills=skills,
        env_safety_skill=tuple(skill_clauses),
        env_liveness=tuple(env_live),
    )
