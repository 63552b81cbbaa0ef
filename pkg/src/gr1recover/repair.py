"""Search for new skills that restore realizability, plus skill reduction.

Candidates come from two alternating moves over the existing skill
transitions: rewire a transition's precondition to a state the robot is stuck
in (when the task is already satisfiable from its postcondition), or rewire a
postcondition into the winning region (when neither endpoint is winnable).
When the winning set is empty the guided filters are vacuous, so each move
falls back to the same construction without them; accumulated candidates are
re-solved after every addition and pruned to a minimal subset at the end.

A candidate chain failing the region-adjacency screen is recorded as a repair
constraint and never sampled again.  Sampling is confined to states within
two adjacency hops of the anchor transition, which keeps suggestions close to
physically implementable and the pool small.
"""

from __future__ import annotations

import itertools
import random
import re
from dataclasses import dataclass, replace

from .formulas import (
    And,
    Atom,
    BooleanFormula,
    NextAtom,
    Not,
    conjoin,
    disjoin,
    disjuncts,
    next_atoms,
    now_atoms,
)
from .specs import (
    GR1Spec,
    PropositionId,
    PropositionTable,
    SafetyClause,
    Skill,
    SpecError,
    generate_idle_frame,
    make_spec,
)
from .semantics import Triplet, evaluate, state_assignment
from .relaxation import hard_disjunct, skill_disjunct
from . import synthesis
from .synthesis import GameStructure, WinningSet

_PENDING_CAP = 16


class RepairError(Exception):
    pass


class CandidateError(Exception):
    """The procedure found no candidate; the caller alternates."""


@dataclass(frozen=True)
class SkillSuggestion:
    name: str
    chain: tuple[int, ...]
    provenance: str


@dataclass(frozen=True)
class RepairConfig:
    rng_seed: int = 0
    max_iterations: int = 500
    alternation: str = "modify-preconditions"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.alternation not in ("modify-preconditions", "modify-postconditions"):
            raise ValueError(f"unknown procedure {self.alternation!r}")


class AdjacencyModel:
    """Which single-group transitions a low-level controller can realize.

    Edges connect propositions of one mutex group; symmetric unless declared
    directed.  Ungrouped controllable inputs are unconstrained.  An
    unrestricted model allows every transition and treats every group as one
    hop wide.
    """

    def __init__(self, edges: set[tuple[int, int]], *, unrestricted: bool = False):
        self.edges = edges
        self.unrestricted = unrestricted

    @classmethod
    def parse(cls, text: str, props: PropositionTable) -> "AdjacencyModel":
        """Lines `label: a -- b` (symmetric) or `label: a -> b` (directed)."""
        edges: set[tuple[int, int]] = set()
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.match(r"(\w+)\s*:\s*(\w+)\s*(--|->)\s*(\w+)$", line)
            if not m:
                raise SpecError(f"bad adjacency line {line!r}", ln)
            a = props.lookup(m.group(2)).index
            b = props.lookup(m.group(4)).index
            ga, gb = props.group_of(a), props.group_of(b)
            if ga is None or ga != gb:
                raise SpecError(
                    f"adjacency endpoints must share a mutex group: {line!r}", ln
                )
            edges.add((a, b))
            if m.group(3) == "--":
                edges.add((b, a))
        return cls(edges)

    @classmethod
    def unrestricted_model(cls) -> "AdjacencyModel":
        return cls(set(), unrestricted=True)

    def neighbors(self, bit: int) -> set[int]:
        return {b for a, b in self.edges if a == bit}

    def within_hops(self, bit: int, hops: int, group: frozenset[int]) -> set[int]:
        if self.unrestricted:
            return set(group)
        frontier = {bit}
        seen = {bit}
        for _ in range(hops):
            frontier = {b for a in frontier for b in self.neighbors(a)} - seen
            seen |= frontier
        return seen

    def transition_allowed(self, a: int, b: int, props: PropositionTable) -> bool:
        """Every mutex group whose value changes between the two states must
        change along a declared edge."""
        if self.unrestricted:
            return True
        for g in props.mutex_groups:
            gmask = props.group_mask(g)
            va, vb = a & gmask, b & gmask
            if va and vb and va != vb:
                ia, ib = va.bit_length() - 1, vb.bit_length() - 1
                if (ia, ib) not in self.edges:
                    return False
        return True


def _fresh_name_counter(spec: GR1Spec) -> int:
    highest = -1
    for p in spec.props.outputs:
        m = re.match(r"repair_(\d+)$", p.name)
        if m:
            highest = max(highest, int(m.group(1)))
    return highest + 1


def add_skills(spec: GR1Spec, skills: list[SkillSuggestion]) -> GR1Spec:
    """Extend the output set with new skills and regenerate derived clauses.

    New skills get stay-or-advance and frame clauses plus a completion
    fairness goal; the idle frame and output mutex clauses are rebuilt for the
    larger output set (any relaxation disjuncts they carry are re-emitted with
    the new outputs forced off, matching what was actually observed); the
    initial output condition additionally turns the new skills off.
    """
    if not skills:
        return spec
    props = spec.props
    names = [s.name for s in skills]
    if len(set(names)) != len(names):
        raise SpecError("duplicate names in added skills")
    existing = {p.name for p in props.inputs + props.outputs}
    for n in names:
        if n in existing:
            raise SpecError(f"skill name {n!r} collides with an existing proposition")

    new_outputs = tuple(
        PropositionId(props.n_props + i, s.name) for i, s in enumerate(skills)
    )
    props2 = PropositionTable(
        inputs=props.inputs,
        outputs=props.outputs + new_outputs,
        controllable=props.controllable,
        mutex_groups=props.mutex_groups,
    )
    new_skill_objs = tuple(
        Skill(pid, s.chain) for pid, s in zip(new_outputs, skills)
    )

    def reissue_disjunct(d: BooleanFormula, origin: str) -> BooleanFormula:
        masks = _relaxation_disjunct_masks(d, props, origin)
        if masks is None:
            return d
        x_now, y_now, x_next = masks
        t = Triplet(x_in=x_now, y_out=y_now, x_in_next=x_next)
        return hard_disjunct(props2, t) if origin == "hard" else skill_disjunct(props2, t)

    def rebuilt_body(clause: SafetyClause, fresh_head: BooleanFormula) -> BooleanFormula:
        spine = disjuncts(clause.body)
        return disjoin([fresh_head] + [reissue_disjunct(d, clause.origin) for d in spine[1:]])

    hard2 = []
    for c in spec.env_safety_hard:
        if c.auto:
            idle = generate_idle_frame(props2)
            assert idle is not None
            hard2.append(replace(c, body=rebuilt_body(c, idle.body)))
        else:
            spine = disjuncts(c.body)
            body = disjoin([spine[0]] + [reissue_disjunct(d, "hard") for d in spine[1:]])
            hard2.append(replace(c, body=body))

    skill_clauses2 = []
    for c in spec.env_safety_skill:
        spine = disjuncts(c.body)
        body = disjoin([spine[0]] + [reissue_disjunct(d, "skill") for d in spine[1:]])
        skill_clauses2.append(replace(c, body=body))

    sys2 = tuple(c for c in spec.sys_safety if not c.auto)
    sys_init2 = conjoin([spec.sys_init] + [Not(Atom(p)) for p in new_outputs])
    return make_spec(
        props=props2,
        skills=spec.skills + new_skill_objs,
        env_init=spec.env_init,
        sys_init=sys_init2,
        env_safety_skill=tuple(skill_clauses2),
        env_safety_hard=tuple(hard2),
        sys_safety=sys2,
        env_liveness=spec.env_liveness,
        sys_liveness=spec.sys_liveness,
    )


def _relaxation_disjunct_masks(
    d: BooleanFormula, props: PropositionTable, origin: str
) -> tuple[int, int, int] | None:
    """Recognize a relaxation disjunct and recover its literal masks.

    Hard disjuncts sign every input, every output, and every next input;
    skill disjuncts restrict inputs to controllable ones.  Anything else
    returns None and is left untouched.
    """
    want_inputs = (
        set(range(props.n_inputs)) if origin == "hard" else set(sorted(props.controllable))
    )
    want_outputs = {p.index for p in props.outputs}
    now_in: dict[int, bool] = {}
    now_out: dict[int, bool] = {}
    nxt_in: dict[int, bool] = {}
    stack = [d]
    while stack:
        node = stack.pop()
        if isinstance(node, And):
            stack.append(node.left)
            stack.append(node.right)
            continue
        sign = True
        if isinstance(node, Not):
            sign = False
            node = node.child
        if isinstance(node, Atom):
            if props.is_input(node.prop.index):
                now_in[node.prop.index] = sign
            else:
                now_out[node.prop.index] = sign
        elif isinstance(node, NextAtom):
            nxt_in[node.prop.index] = sign
        else:
            return None
    if set(now_in) != want_inputs or set(nxt_in) != want_inputs or set(now_out) != want_outputs:
        return None

    def mask(d_: dict[int, bool]) -> int:
        m = 0
        for i, v in d_.items():
            if v:
                m |= 1 << i
        return m

    return mask(now_in), mask(now_out), mask(nxt_in)


class _SearchContext:
    """Per-iteration view: current spec, full-product game, winning set."""

    def __init__(self, spec: GR1Spec, adj: AdjacencyModel, state_cap: int):
        self.spec = spec
        self.adj = adj
        self.game = synthesis.build_game(spec, state_cap=state_cap, reachable_only=False)
        self.realizable, self.winning = synthesis.solve_gr1(self.game)
        anchors = [int(i) for i in self.game.env_init_vec.nonzero()[0]]
        self.anchor_x = self.game.xs[anchors[0]] if anchors else self.game.xs[0]
        self.idle_iy = self.game.y_index[0]

    def overlay(self, c_state: int) -> int:
        """Current input state with the groups `c_state` covers replaced."""
        props = self.spec.props
        x = self.anchor_x
        for g in props.mutex_groups:
            gmask = props.group_mask(g)
            if c_state & gmask:
                x = (x & ~gmask) | (c_state & gmask)
        for i in sorted(props.controllable):
            if props.group_of(i) is None and c_state >> i & 1:
                x |= 1 << i
        return x

    def winnable(self, c_state: int) -> bool:
        """Can the system win from here, with everything it does not control
        at its currently observed value and no skill running?"""
        x = self.overlay(c_state)
        ix = self.game.x_index.get(x)
        if ix is None:
            return False
        return bool(self.winning.mask[ix, self.idle_iy])

    def at_current_position(self, c_state: int) -> bool:
        return self.overlay(c_state) == self.anchor_x

    def transitions(self) -> list[tuple[Skill, int, int, int]]:
        out = []
        for skill in self.spec.skills:
            for k, (a, b) in enumerate(zip(skill.chain, skill.chain[1:])):
                out.append((skill, k, a, b))
            for k, b in skill.branches:
                out.append((skill, k, skill.chain[k], b))
        return out


def _sample_states(
    ctx: _SearchContext, a: int, b: int
) -> list[int]:
    """Mutex-consistent controllable states over the groups the anchor
    transition covers, each group value within two adjacency hops."""
    props = ctx.spec.props
    per_group: list[list[int]] = []
    for g in props.mutex_groups:
        gmask = props.group_mask(g)
        if not (a | b) & gmask:
            continue
        options: set[int] = set()
        for state in (a, b):
            v = state & gmask
            if v:
                bit = v.bit_length() - 1
                options.add(bit)
                options |= ctx.adj.within_hops(bit, 2, g)
        per_group.append(sorted(1 << bit for bit in options))
    free_bits = [
        i
        for i in sorted(props.controllable)
        if props.group_of(i) is None and (a | b) >> i & 1
    ]
    per_group += [[0, 1 << i] for i in free_bits]
    if not per_group:
        return []
    states = []
    for combo in itertools.product(*per_group):
        m = 0
        for part in combo:
            m |= part
        states.append(m)
    return sorted(set(states))


def _chain_valid(chain: tuple[int, ...]) -> bool:
    return len(chain) >= 2 and len(set(chain)) == len(chain)


def _is_useless_duplicate(chain: tuple[int, ...], ctx: _SearchContext,
                          suggestions: list[SkillSuggestion]) -> bool:
    """A chain copying an existing skill adds nothing unless that skill is
    singled out by name in some system guarantee (a copy escapes the guard)."""
    for s in suggestions:
        if s.chain == chain:
            return True
    props = ctx.spec.props
    referenced: set[int] = set()
    for c in ctx.spec.sys_safety:
        referenced |= {
            i for i in now_atoms(c.body) | next_atoms(c.body) if not props.is_input(i)
        }
    for skill in ctx.spec.skills:
        if skill.chain == chain and skill.name.index not in referenced:
            return True
    return False


def _candidate(
    ctx: _SearchContext,
    rng: random.Random,
    *,
    procedure: str,
    guided: bool,
    excluded: set[tuple[int, ...]],
    suggestions: list[SkillSuggestion],
) -> tuple[tuple[int, ...], tuple[Skill, int, int, int]]:
    """One two-stage draw: pick an eligible transition, then a replacement
    state; returns the new chain.  Raises CandidateError when the procedure
    has nothing left to offer."""
    transitions = ctx.transitions()
    if guided:
        if procedure == "modify-preconditions":
            transitions = [t for t in transitions if ctx.winnable(t[3])]
        else:
            transitions = [
                t for t in transitions
                if not ctx.winnable(t[2]) and not ctx.winnable(t[3])
            ]
    transitions = sorted(transitions, key=lambda t: (t[0].name.name, t[1], t[2], t[3]))
    while transitions:
        trans = transitions[rng.randrange(len(transitions))]
        skill, k, a, b = trans
        chains: list[tuple[int, ...]] = []
        for c in _sample_states(ctx, a, b):
            if procedure == "modify-preconditions":
                if c == a or c == b:
                    continue
                if guided and ctx.winnable(c):
                    continue
                if k == 0 or ctx.at_current_position(c):
                    chain = (c, b)
                else:
                    chain = skill.chain[:k] + (c, b)
            else:
                if c == b or c == a:
                    continue
                if guided and not ctx.winnable(c):
                    continue
                chain = skill.chain[: k + 1] + (c,)
            if not _chain_valid(chain):
                continue
            if chain in excluded:
                continue
            if _is_useless_duplicate(chain, ctx, suggestions):
                continue
            if not all(
                ctx.adj.transition_allowed(u, v, ctx.spec.props)
                for u, v in zip(chain, chain[1:])
            ):
                excluded.add(chain)  # repair constraint: physically unimplementable
                continue
            chains.append(chain)
        if chains:
            chains = sorted(set(chains))
            return chains[rng.randrange(len(chains))], trans
        transitions.remove(trans)
    raise CandidateError(f"{procedure}: no eligible transition")


def modify_preconditions(
    spec: GR1Spec,
    winning: WinningSet,
    rng: random.Random,
    *,
    ctx: _SearchContext | None = None,
    adj: AdjacencyModel | None = None,
    excluded: set[tuple[int, ...]] | None = None,
    suggestions: list[SkillSuggestion] | None = None,
    guided: bool = True,
    name: str = "repair_0",
) -> SkillSuggestion:
    """Rewire a transition whose postcondition is winnable so it starts from a
    sampled non-winnable state.  When the old precondition was an intermediate
    chain state the new chain keeps the prefix that reaches it and drops the
    branch to the old precondition; a state matching the robot's current
    position needs no prefix at all."""
    if ctx is None:
        ctx = _SearchContext(spec, adj or AdjacencyModel.unrestricted_model(),
                             synthesis.DEFAULT_STATE_CAP)
        ctx.winning = winning
    chain, _ = _candidate(
        ctx, rng, procedure="modify-preconditions", guided=guided,
        excluded=excluded if excluded is not None else set(),
        suggestions=suggestions if suggestions is not None else [],
    )
    return SkillSuggestion(name=name, chain=chain, provenance="modify-preconditions")


def modify_postconditions(
    spec: GR1Spec,
    winning: WinningSet,
    rng: random.Random,
    *,
    ctx: _SearchContext | None = None,
    adj: AdjacencyModel | None = None,
    excluded: set[tuple[int, ...]] | None = None,
    suggestions: list[SkillSuggestion] | None = None,
    guided: bool = True,
    name: str = "repair_0",
) -> SkillSuggestion:
    """Rewire a transition with no winnable endpoint so it lands in a sampled
    winnable state."""
    if ctx is None:
        ctx = _SearchContext(spec, adj or AdjacencyModel.unrestricted_model(),
                             synthesis.DEFAULT_STATE_CAP)
        ctx.winning = winning
    chain, _ = _candidate(
        ctx, rng, procedure="modify-postconditions", guided=guided,
        excluded=excluded if excluded is not None else set(),
        suggestions=suggestions if suggestions is not None else [],
    )
    return SkillSuggestion(name=name, chain=chain, provenance="modify-postconditions")


def _doomed_at_init(spec: GR1Spec, game: GameStructure) -> bool:
    """True when some allowed initial input state already falsifies an
    input-only system guarantee: no added skill can leave such a state."""
    props = spec.props
    input_only = [
        c for c in spec.sys_safety
        if not next_atoms(c.body) and all(props.is_input(i) for i in now_atoms(c.body))
    ]
    if not input_only:
        return False
    for ix in game.env_init_vec.nonzero()[0]:
        a = state_assignment(props, game.xs[int(ix)], 0)
        if any(not evaluate(c.body, a) for c in input_only):
            return True
    return False


def repair(
    spec: GR1Spec,
    cfg: RepairConfig,
    adj: AdjacencyModel,
    *,
    state_cap: int = synthesis.DEFAULT_STATE_CAP,
) -> set[SkillSuggestion]:
    """Find skills whose addition makes the spec realizable, or the empty set
    after the iteration budget.  Deterministic for a fixed (spec, cfg, adj)."""
    rng = random.Random(cfg.rng_seed)
    ctx = _SearchContext(spec, adj, state_cap)
    if ctx.realizable:
        raise RepairError("repair called on a realizable specification")
    if _doomed_at_init(spec, ctx.game):
        return set()

    name_counter = _fresh_name_counter(spec)
    procedure = cfg.alternation
    other = {
        "modify-preconditions": "modify-postconditions",
        "modify-postconditions": "modify-preconditions",
    }
    suggestions: list[SkillSuggestion] = []
    excluded: set[tuple[int, ...]] = set()
    empty_rounds = 0

    for _ in range(cfg.max_iterations):
        try:
            chain, _ = _candidate(
                ctx, rng, procedure=procedure, guided=True,
                excluded=excluded, suggestions=suggestions,
            )
        except CandidateError:
            try:
                chain, _ = _candidate(
                    ctx, rng, procedure=procedure, guided=False,
                    excluded=excluded, suggestions=suggestions,
                )
            except CandidateError:
                empty_rounds += 1
                if empty_rounds >= 2:
                    break
                procedure = other[procedure]
                continue
        empty_rounds = 0
        suggestions.append(
            SkillSuggestion(
                name=f"repair_{name_counter}", chain=chain, provenance=procedure
            )
        )
        name_counter += 1
        if len(suggestions) > _PENDING_CAP:
            suggestions.clear()
            procedure = other[procedure]
            continue
        augmented = add_skills(spec, suggestions)
        ctx = _SearchContext(augmented, adj, state_cap)
        if ctx.realizable:
            kept = reduce_skills(spec, suggestions, state_cap=state_cap)
            return set(kept)
        procedure = other[procedure]
    return set()


def reduce_skills(
    spec: GR1Spec,
    suggested: list[SkillSuggestion],
    *,
    state_cap: int = synthesis.DEFAULT_STATE_CAP,
) -> list[SkillSuggestion]:
    """Shrink a sufficient suggestion set to a minimal (not necessarily
    minimum) subset: drop each skill in insertion order iff the spec stays
    realizable without it.  Exactly one synthesis call per suggestion;
    requires that the full set makes the spec realizable."""
    kept = list(suggested)
    for s in list(suggested):
        trial = [k for k in kept if k is not s]
        game = synthesis.build_game(add_skills(spec, trial), state_cap=state_cap)
        realizable, _ = synthesis.solve_gr1(game)
        if realizable:
            kept = trial
    return kept
