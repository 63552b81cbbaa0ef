"""Proposition tables, clauses, skills, and the nine-part task specification.

States (input states, output states, controllable states) are plain ints used
as bit vectors: bit i set means the proposition with table index i is true.
Input propositions occupy the low bits, outputs the bits above them, so a full
assignment for one step is just `x_bits | y_bits`.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace

from .formulas import (
    And,
    Atom,
    BooleanFormula,
    Iff,
    Implies,
    NextAtom,
    Not,
    Or,
    PropositionId,
    TRUE,
    conjoin,
    disjoin,
    next_atoms,
    now_atoms,
    to_text,
)

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

# Reserved clause tags used by the printer for clauses the loader regenerates.
IDLE_TAG = "@idle"
OUTPUT_MUTEX_TAG = "@output_mutex"


class SpecError(Exception):
    """Validation or format failure, with an optional source position."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}" + (f", col {col}" if col is not None else "") + f": {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PropositionTable:
    """Input and output propositions plus the exactly-one mutex structure.

    `controllable` holds indices of controllable inputs; every mutex group is
    a frozenset of input indices with exactly-one-true semantics.
    """

    inputs: tuple[PropositionId, ...]
    outputs: tuple[PropositionId, ...]
    controllable: frozenset[int]
    mutex_groups: tuple[frozenset[int], ...]

    def __post_init__(self):
        names = [p.name for p in self.inputs] + [p.name for p in self.outputs]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})[0]
            raise SpecError(f"duplicate proposition name {dup!r}")
        for p in self.inputs + self.outputs:
            if not NAME_RE.match(p.name):
                raise SpecError(f"bad proposition name {p.name!r}")
        for i, p in enumerate(self.all_props()):
            if p.index != i:
                raise SpecError(f"proposition {p.name!r} has index {p.index}, expected {i}")
        seen: set[int] = set()
        for group in self.mutex_groups:
            tags = set()
            for idx in group:
                if idx >= self.n_inputs:
                    raise SpecError("mutex groups may contain only input propositions")
                if idx in seen:
                    raise SpecError(
                        f"proposition {self.name_of(idx)!r} appears in two mutex groups"
                    )
                seen.add(idx)
                tags.add(idx in self.controllable)
            if len(tags) > 1:
                raise SpecError("mutex group mixes controllable and uncontrollable inputs")

    def all_props(self) -> tuple[PropositionId, ...]:
        return self.inputs + self.outputs

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    @property
    def n_props(self) -> int:
        return len(self.inputs) + len(self.outputs)

    @property
    def input_mask(self) -> int:
        return (1 << self.n_inputs) - 1

    @property
    def output_mask(self) -> int:
        return ((1 << self.n_props) - 1) & ~self.input_mask

    @property
    def controllable_mask(self) -> int:
        m = 0
        for i in self.controllable:
            m |= 1 << i
        return m

    def name_of(self, index: int) -> str:
        return self.all_props()[index].name

    def lookup(self, name: str) -> PropositionId:
        for p in self.all_props():
            if p.name == name:
                return p
        raise SpecError(f"undeclared proposition {name!r}")

    def is_input(self, index: int) -> bool:
        return index < self.n_inputs

    def group_of(self, index: int) -> frozenset[int] | None:
        for g in self.mutex_groups:
            if index in g:
                return g
        return None

    def group_mask(self, group: frozenset[int]) -> int:
        m = 0
        for i in group:
            m |= 1 << i
        return m

    def bits(self, mask: int) -> list[int]:
        return [i for i in range(self.n_props) if mask >> i & 1]

    def state_names(self, mask: int) -> list[str]:
        return [self.name_of(i) for i in self.bits(mask)]

    def state_text(self, mask: int) -> str:
        return "{" + ", ".join(self.state_names(mask)) + "}"

    def mask_of(self, names: list[str] | set[str]) -> int:
        m = 0
        for n in sorted(names):
            m |= 1 << self.lookup(n).index
        return m

    def check_mutex(self, mask: int, *, require_cover: bool) -> None:
        """Raise unless `mask` picks at most (or, when covering, exactly) one
        member of each mutex group it touches; `require_cover` demands every
        group be represented."""
        for g in self.mutex_groups:
            count = sum(1 for i in g if mask >> i & 1)
            if count > 1:
                raise SpecError(
                    f"state {self.state_text(mask)} sets {count} members of a mutex group"
                )
            if require_cover and count == 0:
                names = sorted(self.name_of(i) for i in g)
                raise SpecError(
                    f"state {self.state_text(mask)} covers no member of mutex group {names}"
                )

    def enumerate_input_states(self) -> list[int]:
        """All mutex-consistent input states, ascending as bit vectors."""
        grouped = set().union(*self.mutex_groups) if self.mutex_groups else set()
        free = [i for i in range(self.n_inputs) if i not in grouped]
        choices: list[list[int]] = [[1 << i for i in sorted(g)] for g in self.mutex_groups]
        choices += [[0, 1 << i] for i in free]
        states = []
        for combo in itertools.product(*choices) if choices else [()]:
            m = 0
            for part in combo:
                m |= part
            states.append(m)
        return sorted(states)

    def enumerate_output_states(self) -> list[int]:
        """Output states with at most one skill active, ascending."""
        states = [0] + [1 << p.index for p in self.outputs]
        return sorted(states)


@dataclass(frozen=True)
class SafetyClause:
    """One always-clause. `origin` is skill, hard, or system; `auto` marks
    clauses the loader can regenerate from the rest of the spec."""

    body: BooleanFormula
    origin: str
    source_skill: str | None = None
    auto: bool = False

    def text(self) -> str:
        return to_text(self.body)


@dataclass(frozen=True)
class LivenessClause:
    """Body of one always-eventually goal; never contains next()."""

    body: BooleanFormula
    source_skill: str | None = None
    auto: bool = False

    def text(self) -> str:
        return to_text(self.body)


@dataclass(frozen=True)
class Skill:
    """A named output with its ordered chain of controllable waypoint states.

    `branches` records observed alternate outcomes: (chain index k, state)
    means executing from chain[k] has been seen to land in `state` instead of
    chain[k + 1].
    """

    name: PropositionId
    chain: tuple[int, ...]
    branches: tuple[tuple[int, int], ...] = ()

    def transitions(self) -> list[tuple[int, int]]:
        """Consecutive chain pairs followed by any recorded branch pairs."""
        pairs = list(zip(self.chain, self.chain[1:]))
        pairs += [(self.chain[k], state) for k, state in self.branches]
        return pairs


@dataclass(frozen=True)
class GR1Spec:
    props: PropositionTable
    skills: tuple[Skill, ...]
    env_init: BooleanFormula
    sys_init: BooleanFormula
    env_safety_skill: tuple[SafetyClause, ...]
    env_safety_hard: tuple[SafetyClause, ...]
    sys_safety: tuple[SafetyClause, ...]
    env_liveness: tuple[LivenessClause, ...]
    sys_liveness: tuple[LivenessClause, ...]

    def skill_by_name(self, name: str) -> Skill:
        for s in self.skills:
            if s.name.name == name:
                return s
        raise SpecError(f"no skill named {name!r}")


def chain_relevant_free_bits(skill: Skill, props: PropositionTable) -> list[int]:
    """Ungrouped controllable inputs mentioned anywhere in the skill's chain.

    For these, chain-state encodings are sign-complete: absence in a chain
    state means the proposition is false there.
    """
    mentioned = 0
    for state in skill.chain:
        mentioned |= state
    for _, state in skill.branches:
        mentioned |= state
    out = []
    for i in sorted(props.controllable):
        if props.group_of(i) is None and mentioned >> i & 1:
            out.append(i)
    return out


def encode_chain_state(skill: Skill, state: int, props: PropositionTable, *, nxt: bool) -> BooleanFormula:
    """Formula satisfied exactly when the controllable inputs match `state`.

    Grouped propositions contribute positive literals only (exactly-one
    semantics makes the negations redundant); chain-relevant ungrouped
    controllables get an explicit sign.
    """
    atom = NextAtom if nxt else Atom
    lits: list[BooleanFormula] = []
    for i in props.bits(state):
        lits.append(atom(props.inputs[i]))
    for i in chain_relevant_free_bits(skill, props):
        if not state >> i & 1:
            lits.append(Not(atom(props.inputs[i])))
    return conjoin(lits)


def covered_group_mask(skill: Skill, props: PropositionTable) -> int:
    """Controllable inputs governed by the skill: members of every mutex group
    the chain touches, plus chain-relevant ungrouped controllables."""
    mentioned = 0
    for state in skill.chain:
        mentioned |= state
    for _, state in skill.branches:
        mentioned |= state
    covered = 0
    for g in props.mutex_groups:
        if props.group_mask(g) & mentioned:
            covered |= props.group_mask(g)
    for i in chain_relevant_free_bits(skill, props):
        covered |= 1 << i
    return covered


def validate_skill(skill: Skill, props: PropositionTable) -> None:
    if skill.name.index < props.n_inputs:
        raise SpecError(f"skill {skill.name.name!r} must name an output proposition")
    if len(skill.chain) < 2:
        raise SpecError(f"skill {skill.name.name!r} needs a chain of at least two states")
    if len(set(skill.chain)) != len(skill.chain):
        raise SpecError(f"skill {skill.name.name!r} repeats a chain state")
    for state in skill.chain + tuple(s for _, s in skill.branches):
        if state & ~props.controllable_mask:
            bad = [n for n in props.state_names(state & ~props.controllable_mask)]
            raise SpecError(
                f"skill {skill.name.name!r} chain state mentions non-controllable {bad}"
            )
        props.check_mutex(state, require_cover=False)
    for a, b in zip(skill.chain, skill.chain[1:]):
        if a == b:
            raise SpecError(f"skill {skill.name.name!r} has identical consecutive states")
    for k, _ in skill.branches:
        if not 0 <= k < len(skill.chain) - 1:
            raise SpecError(f"skill {skill.name.name!r} branch index {k} out of range")


def generate_skill_clauses(skill: Skill, props: PropositionTable) -> list[SafetyClause]:
    """Stay-or-advance progress clauses for each non-final chain state, then
    one frame clause fixing the controllable inputs the skill does not touch.

    Deterministic and order-stable: progress clauses follow chain order,
    recorded branch outcomes extend the matching progress clause's disjunction.
    """
    validate_skill(skill, props)
    y = Atom(skill.name)
    clauses: list[SafetyClause] = []
    for k in range(len(skill.chain) - 1):
        here = skill.chain[k]
        succ = skill.chain[k + 1]
        options = [
            encode_chain_state(skill, here, props, nxt=True),
            encode_chain_state(skill, succ, props, nxt=True),
        ]
        for bk, state in skill.branches:
            if bk == k:
                options.append(encode_chain_state(skill, state, props, nxt=True))
        body = Implies(
            And(encode_chain_state(skill, here, props, nxt=False), y),
            disjoin(options),
        )
        clauses.append(
            SafetyClause(body, origin="skill", source_skill=skill.name.name, auto=True)
        )
    covered = covered_group_mask(skill, props)
    frame_lits: list[BooleanFormula] = []
    for i in sorted(props.controllable):
        if not covered >> i & 1:
            frame_lits.append(Iff(Atom(props.inputs[i]), NextAtom(props.inputs[i])))
    frame = Implies(y, conjoin(frame_lits))
    clauses.append(SafetyClause(frame, origin="skill", source_skill=skill.name.name, auto=True))
    return clauses


def generate_skill_fairness(skill: Skill, props: PropositionTable) -> LivenessClause:
    """Completion fairness: while the skill stays active the environment must
    eventually reach its final postcondition (or a recorded branch outcome)."""
    outcomes: list[BooleanFormula] = [
        encode_chain_state(skill, skill.chain[-1], props, nxt=False)
    ]
    for _, state in skill.branches:
        outcomes.append(encode_chain_state(skill, state, props, nxt=False))
    body = disjoin([Not(Atom(skill.name))] + outcomes)
    return LivenessClause(body, source_skill=skill.name.name, auto=True)


def generate_idle_frame(props: PropositionTable) -> SafetyClause | None:
    """No active skill keeps every controllable input unchanged."""
    if not props.controllable:
        return None
    guard = conjoin([Not(Atom(p)) for p in props.outputs])
    lits: list[BooleanFormula] = [
        Iff(Atom(props.inputs[i]), NextAtom(props.inputs[i]))
        for i in sorted(props.controllable)
    ]
    body = conjoin(lits) if isinstance(guard, type(TRUE)) else Implies(guard, conjoin(lits))
    return SafetyClause(body, origin="hard", source_skill=None, auto=True)


def generate_output_mutex(props: PropositionTable) -> SafetyClause | None:
    """At most one skill active, now and at the next step."""
    if len(props.outputs) < 2:
        return None
    parts: list[BooleanFormula] = []
    for a, b in itertools.combinations(props.outputs, 2):
        parts.append(Not(And(Atom(a), Atom(b))))
        parts.append(Not(And(NextAtom(a), NextAtom(b))))
    return SafetyClause(conjoin(parts), origin="system", source_skill=None, auto=True)


def _check_formula_domain(
    f: BooleanFormula,
    props: PropositionTable,
    *,
    where: str,
    now_ok: str,
    next_ok: str,
) -> None:
    """`now_ok` / `next_ok` name the legal atom domains: 'inputs', 'outputs',
    'all', or 'none'."""

    def allowed(idx: int, domain: str) -> bool:
        if domain == "all":
            return True
        if domain == "inputs":
            return props.is_input(idx)
        if domain == "outputs":
            return not props.is_input(idx)
        return False

    for idx in now_atoms(f):
        if not allowed(idx, now_ok):
            raise SpecError(f"{where}: atom {props.name_of(idx)!r} not allowed here")
    for idx in next_atoms(f):
        if not allowed(idx, next_ok):
            raise SpecError(
                f"{where}: next({props.name_of(idx)}) not allowed here"
            )


def validate_spec(spec: GR1Spec) -> None:
    """Check every structural invariant; raises SpecError on the first break."""
    props = spec.props
    seen_skill_names = set()
    for skill in spec.skills:
        validate_skill(skill, props)
        if skill.name.name in seen_skill_names:
            raise SpecError(f"duplicate skill {skill.name.name!r}")
        seen_skill_names.add(skill.name.name)
    _check_formula_domain(spec.env_init, props, where="[ENV_INIT]", now_ok="inputs", next_ok="none")
    _check_formula_domain(spec.sys_init, props, where="[SYS_INIT]", now_ok="outputs", next_ok="none")
    for c in spec.env_safety_skill:
        if c.origin != "skill":
            raise SpecError("clause in env_safety_skill must have origin 'skill'")
        _check_formula_domain(c.body, props, where="[ENV_SAFETY_SKILL]", now_ok="all", next_ok="inputs")
        positive_outputs = {
            n.prop.index
            for n in _positive_output_atoms(c.body, props)
        }
        if len(positive_outputs) != 1:
            raise SpecError(
                "skill clause must mention exactly one output atom positively: "
                + c.text()
            )
        for idx in now_atoms(c.body) | next_atoms(c.body):
            if props.is_input(idx) and idx not in props.controllable:
                raise SpecError(
                    f"skill clause mentions uncontrollable input {props.name_of(idx)!r}"
                )
    for c in spec.env_safety_hard:
        if c.origin != "hard":
            raise SpecError("clause in env_safety_hard must have origin 'hard'")
        _check_formula_domain(c.body, props, where="[ENV_SAFETY_HARD]", now_ok="all", next_ok="inputs")
    for c in spec.sys_safety:
        if c.origin != "system":
            raise SpecError("clause in sys_safety must have origin 'system'")
        _check_formula_domain(c.body, props, where="[SYS_SAFETY]", now_ok="all", next_ok="all")
    for c in spec.env_liveness:
        _check_formula_domain(c.body, props, where="[ENV_LIVENESS]", now_ok="all", next_ok="none")
    for c in spec.sys_liveness:
        _check_formula_domain(c.body, props, where="[SYS_LIVENESS]", now_ok="all", next_ok="none")
    generated = {c.source_skill for c in spec.env_safety_skill}
    for skill in spec.skills:
        if skill.name.name not in generated:
            raise SpecError(f"skill {skill.name.name!r} has no clause block")


def _positive_output_atoms(f: BooleanFormula, props: PropositionTable):
    """Output atoms appearing as positive literals, i.e. not directly negated.

    A skill clause names its own skill positively (in the guard or in a
    relaxation disjunct); other skills may only appear as negated literals.
    """

    def rec(node):
        if isinstance(node, Atom):
            if not props.is_input(node.prop.index):
                yield node
        elif isinstance(node, Not):
            if not isinstance(node.child, Atom):
                yield from rec(node.child)
        elif isinstance(node, (And, Or, Implies, Iff)):
            yield from rec(node.left)
            yield from rec(node.right)

    yield from rec(f)


def make_spec(
    props: PropositionTable,
    skills: tuple[Skill, ...],
    env_init: BooleanFormula,
    sys_init: BooleanFormula,
    env_safety_skill: tuple[SafetyClause, ...],
    env_safety_hard: tuple[SafetyClause, ...],
    sys_safety: tuple[SafetyClause, ...],
    env_liveness: tuple[LivenessClause, ...],
    sys_liveness: tuple[LivenessClause, ...],
) -> GR1Spec:
    """Assemble a spec, generating any missing derived clauses.

    Skills without a clause block get stay-or-advance and frame clauses; a
    missing idle frame, output mutex, or per-skill completion fairness clause
    is appended.  Clauses already present (matched by tag) are kept verbatim,
    which is what preserves relaxations across a print/parse round trip.
    """
    have_clauses = {c.source_skill for c in env_safety_skill}
    skill_clauses = list(env_safety_skill)
    for skill in skills:
        if skill.name.name not in have_clauses:
            skill_clauses.extend(generate_skill_clauses(skill, props))
    hard = list(env_safety_hard)
    if not any(c.auto and c.source_skill is None for c in hard):
        idle = generate_idle_frame(props)
        if idle is not None:
            hard.append(idle)
    system = list(sys_safety)
    if not any(c.auto for c in system):
        mutex = generate_output_mutex(props)
        if mutex is not None:
            system.append(mutex)
    env_live = list(env_liveness)
    have_fair = {c.source_skill for c in env_live}
    for skill in skills:
        if skill.name.name not in have_fair:
            env_live.append(generate_skill_fairness(skill, props))
    spec = GR1Spec(
        props=props,
        skills=skills,
        env_init=env_init,
        sys_init=sys_init,
        env_safety_skill=tuple(skill_clauses),
        env_safety_hard=tuple(hard),
        sys_safety=tuple(system),
        env_liveness=tuple(env_live),
        sys_liveness=tuple(sys_liveness),
    )
    validate_spec(spec)
    return spec


def remove_skills(spec: GR1Spec, names: set[str]) -> GR1Spec:
    """Drop skills and everything generated from them, rebuilding the table.

    Inverse of adding skills: proposition indices are recompacted, so the
    result is structurally equal to a spec that never had them.
    """
    keep = [s for s in spec.skills if s.name.name not in names]
    old_outputs = [p for p in spec.props.outputs if p.name not in names]
    new_outputs = tuple(
        PropositionId(spec.props.n_inputs + i, p.name) for i, p in enumerate(old_outputs)
    )
    remap: dict[int, PropositionId] = {p.index: p for p in spec.props.inputs}
    for old, new in zip(old_outputs, new_outputs):
        remap[old.index] = new
    props = PropositionTable(
        inputs=spec.props.inputs,
        outputs=new_outputs,
        controllable=spec.props.controllable,
        mutex_groups=spec.props.mutex_groups,
    )

    def rebuild(f: BooleanFormula) -> BooleanFormula:
        if isinstance(f, (Atom, NextAtom)):
            if f.prop.index not in remap:
                raise SpecError(
                    f"clause still mentions removed skill {f.prop.name!r}"
                )
            return type(f)(remap[f.prop.index])
        if isinstance(f, Not):
            return Not(rebuild(f.child))
        if isinstance(f, (And, Or, Implies, Iff)):
            return type(f)(rebuild(f.left), rebuild(f.right))
        return f

    def keep_clause(c: SafetyClause | LivenessClause) -> bool:
        if c.source_skill in names:
            return False
        touched = now_atoms(c.body) | next_atoms(c.body)
        dropped = {spec.props.lookup(n).index for n in names}
        return not touched & dropped

    skills = tuple(replace(s, name=remap[s.name.index]) for s in keep)
    return make_spec(
        props=props,
        skills=skills,
        env_init=rebuild(spec.env_init),
        sys_init=rebuild(spec.sys_init),
        env_safety_skill=tuple(
            replace(c, body=rebuild(c.body)) for c in spec.env_safety_skill if keep_clause(c)
        ),
        # Auto hard/system clauses mention outputs, so regenerate them.
        env_safety_hard=tuple(
            replace(c, body=rebuild(c.body)) for c in spec.env_safety_hard
            if keep_clause(c) and not c.auto
        ),
        sys_safety=tuple(
            replace(c, body=rebuild(c.body)) for c in spec.sys_safety
            if keep_clause(c) and not c.auto
        ),
        env_liveness=tuple(
            replace(c, body=rebuild(c.body)) for c in spec.env_liveness if keep_clause(c)
        ),
        sys_liveness=tuple(
            replace(c, body=rebuild(c.body)) for c in spec.sys_liveness
        ),
    )
