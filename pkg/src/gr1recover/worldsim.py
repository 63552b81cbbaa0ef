"""Grounded rectangle-world simulation and the execution-and-recovery loop.

The world holds continuous object poses inside named axis-aligned regions,
boolean user inputs, and held-in-gripper flags.  Abstraction happens through
the inverse grounding function (pose containment plus flag copying); skills
execute one waypoint per tick by teleporting their objects to region centers.
Scenario events fire between waypoints: a tick with a due event skips the
waypoint, which is how an input change preempts skill motion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .formulas import to_text
from .monitor import Monitor, ViolationReport, check_assumptions, compile_monitor
from .relaxation import RelaxationRecord, exact_state_formula, relax
from .repair import AdjacencyModel, RepairConfig, SkillSuggestion, add_skills, repair
from .semantics import Triplet
from .specs import GR1Spec, PropositionTable, Skill, SpecError, covered_group_mask
from .synthesis import (
    DEFAULT_STATE_CAP,
    Strategy,
    UnrealizableError,
    build_game,
    extract_strategy,
    solve_gr1,
)


class WorldError(Exception):
    pass


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, half-open: contains x0 <= x < x1, y0 <= y < y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.x1 <= other.x0 or other.x1 <= self.x0
            or self.y1 <= other.y0 or other.y1 <= self.y0
        )


@dataclass
class WorldState:
    """Continuous poses, user-input truth values, and held flags."""

    poses: dict[str, tuple[float, float]]
    user: dict[str, bool]
    held: dict[str, bool]

    def copy(self) -> "WorldState":
        return WorldState(dict(self.poses), dict(self.user), dict(self.held))


@dataclass(frozen=True)
class _ObjectBinding:
    name: str
    group_label: str
    region_props: dict[str, int]      # region label -> input prop index
    region_rects: dict[str, Rect]
    ee_prop: int | None


class Workspace:
    """Region geometry bound to the proposition table.

    Proposition naming: object `o` in region `r` is the input `o_r`; a
    proposition `o_ee` (when declared) is the held-in-gripper pseudo region.
    Every input proposition must be grounded by an object or a user input.
    """

    def __init__(self, props: PropositionTable,
                 regions: dict[tuple[str, str], Rect],
                 objects: list[tuple[str, str]],
                 user_props: list[str]):
        self.props = props
        self.bindings: dict[str, _ObjectBinding] = {}
        grounded: set[int] = set()
        for name, group_label in objects:
            region_props: dict[str, int] = {}
            region_rects: dict[str, Rect] = {}
            for (glabel, rlabel), rect in regions.items():
                if glabel != group_label:
                    continue
                pname = f"{name}_{rlabel}"
                try:
                    pid = props.lookup(pname)
                except SpecError:
                    raise WorldError(
                        f"region {rlabel!r} of group {group_label!r} grounds "
                        f"undeclared proposition {pname!r}"
                    ) from None
                region_props[rlabel] = pid.index
                region_rects[rlabel] = rect
            if not region_props:
                raise WorldError(f"object {name!r} has no regions in group {group_label!r}")
            ee_prop: int | None = None
            try:
                ee_prop = props.lookup(f"{name}_ee").index
            except SpecError:
                pass
            rects = list(region_rects.items())
            for i in range(len(rects)):
                for j in range(i + 1, len(rects)):
                    if rects[i][1].overlaps(rects[j][1]):
                        raise WorldError(
                            f"regions {rects[i][0]!r} and {rects[j][0]!r} of group "
                            f"{group_label!r} overlap"
                        )
            indices = set(region_props.values()) | ({ee_prop} if ee_prop is not None else set())
            groups = {props.group_of(i) for i in indices}
            if len(groups) != 1 or None in groups:
                raise WorldError(
                    f"location propositions of object {name!r} must form one mutex group"
                )
            self.bindings[name] = _ObjectBinding(
                name, group_label, region_props, region_rects, ee_prop
            )
            grounded |= indices
        self.user_props = {}
        for pname in user_props:
            pid = props.lookup(pname)
            if pid.index >= props.n_inputs:
                raise WorldError(f"user input {pname!r} is not an input proposition")
            self.user_props[pname] = pid.index
            grounded.add(pid.index)
        missing = [
            props.name_of(i) for i in range(props.n_inputs) if i not in grounded
        ]
        if missing:
            raise WorldError(f"input propositions not grounded by the workspace: {missing}")

    def region_center(self, obj: str, label: str) -> tuple[float, float]:
        binding = self.bindings[obj]
        if label not in binding.region_rects:
            raise WorldError(f"object {obj!r} has no region {label!r}")
        return binding.region_rects[label].center()


def parse_workspace(text: str, props: PropositionTable) -> tuple[Workspace, WorldState]:
    """Line format:

        region <label> : group <group> : rect <x0> <y0> <x1> <y1>
        object <name> : group <group> : at <x> <y>
        object <name> : group <group> : held
        user <prop> = true|false
    """
    regions: dict[tuple[str, str], Rect] = {}
    objects: list[tuple[str, str]] = []
    poses: dict[str, tuple[float, float]] = {}
    held: dict[str, bool] = {}
    user_props: list[str] = []
    user_values: dict[str, bool] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(":")]
        try:
            if parts[0].startswith("region "):
                label = parts[0].split()[1]
                group = parts[1].split()[1]
                nums = parts[2].split()
                if nums[0] != "rect" or len(nums) != 5:
                    raise WorldError("expected `rect x0 y0 x1 y1`")
                x0, y0, x1, y1 = (float(v) for v in nums[1:])
                if (group, label) in regions:
                    raise WorldError(f"duplicate region {label!r} in group {group!r}")
                regions[(group, label)] = Rect(x0, y0, x1, y1)
            elif parts[0].startswith("object "):
                name = parts[0].split()[1]
                group = parts[1].split()[1]
                objects.append((name, group))
                tail = parts[2].split()
                if tail[0] == "at" and len(tail) == 3:
                    poses[name] = (float(tail[1]), float(tail[2]))
                    held[name] = False
                elif tail[0] == "held" and len(tail) == 1:
                    poses[name] = (0.0, 0.0)
                    held[name] = True
                else:
                    raise WorldError("object needs `at x y` or `held`")
            elif line.startswith("user "):
                rest = line[len("user "):]
                pname, _, value = rest.partition("=")
                pname, value = pname.strip(), value.strip()
                if value not in ("true", "false"):
                    raise WorldError("user line needs `user name = true|false`")
                user_props.append(pname)
                user_values[pname] = value == "true"
            else:
                raise WorldError(f"unrecognized workspace line {line!r}")
        except (IndexError, ValueError) as exc:
            raise WorldError(f"line {ln}: malformed workspace line {line!r}") from exc
        except WorldError as exc:
            raise WorldError(f"line {ln}: {exc}") from None
    ws = Workspace(props, regions, objects, user_props)
    world = WorldState(poses=poses, user=user_values, held=held)
    return ws, world


def inverse_grounding(ws: Workspace, world: WorldState) -> int:
    """Map a world state to its abstract input state: region propositions by
    pose containment, held flags to the gripper pseudo region, user inputs
    copied through."""
    mask = 0
    for name, binding in ws.bindings.items():
        if world.held.get(name):
            if binding.ee_prop is None:
                raise WorldError(f"object {name!r} is held but has no gripper proposition")
            mask |= 1 << binding.ee_prop
            continue
        x, y = world.poses[name]
        hits = [
            label for label, rect in binding.region_rects.items() if rect.contains(x, y)
        ]
        if len(hits) != 1:
            raise WorldError(
                f"object {name!r} at ({x}, {y}) is inside {len(hits)} regions of its group"
            )
        mask |= 1 << binding.region_props[hits[0]]
    for pname, idx in ws.user_props.items():
        if world.user.get(pname):
            mask |= 1 << idx
    ws.props.check_mutex(mask, require_cover=True)
    return mask


def _state_matches(skill: Skill, state: int, x_in: int, props: PropositionTable) -> bool:
    grouped_all = 0
    for g in props.mutex_groups:
        grouped_all |= props.group_mask(g)
    covered = 0
    for g in props.mutex_groups:
        gmask = props.group_mask(g)
        if state & gmask:
            covered |= gmask
    # Chain-relevant ungrouped controllables are sign-complete in every state.
    covered |= covered_group_mask(skill, props) & ~grouped_all
    return (x_in & covered) == state


def skill_progress(skill: Skill, x_in: int, props: PropositionTable) -> int | None:
    """Index of the chain state matching the current inputs, or None."""
    for k, state in enumerate(skill.chain):
        if _state_matches(skill, state, x_in, props):
            return k
    return None


def apply_skill_tick(ws: Workspace, skill: Skill, progress: int, world: WorldState) -> tuple[WorldState, bool]:
    """Advance one waypoint: move the skill's objects to the next chain
    state's region centers (or into/out of the gripper)."""
    props = ws.props
    if not 0 <= progress < len(skill.chain) - 1:
        raise WorldError(f"skill {skill.name.name!r} progress {progress} out of range")
    target = skill.chain[progress + 1]
    new = world.copy()
    for name, binding in ws.bindings.items():
        indices = set(binding.region_props.values())
        if binding.ee_prop is not None:
            indices.add(binding.ee_prop)
        hit = [i for i in indices if target >> i & 1]
        if not hit:
            continue
        idx = hit[0]
        if idx == binding.ee_prop:
            new.held[name] = True
        else:
            label = next(l for l, i in binding.region_props.items() if i == idx)
            new.held[name] = False
            new.poses[name] = ws.region_center(name, label)
    finished = progress + 1 == len(skill.chain) - 1
    return new, finished


@dataclass(frozen=True)
class ScenarioEvent:
    trigger_step: int | None
    trigger_state: int | None
    kind: str                      # "move" | "set"
    target: str                    # object or user prop name
    value: str | bool              # region label or truth value

    def due(self, step: int, x_in: int) -> bool:
        if self.trigger_step is not None:
            return step == self.trigger_step
        return (x_in & self.trigger_state) == self.trigger_state


@dataclass(frozen=True)
class Scenario:
    events: tuple[ScenarioEvent, ...]
    max_steps: int


def parse_scenario(text: str, props: PropositionTable) -> Scenario:
    """Lines:

        max_steps <n>
        at step <n>: move <object> -> <region>
        at step <n>: set <prop> = true|false
        when {p, q}: move <object> -> <region>

    Events are one-shot: each fires at most once per run.
    """
    events: list[ScenarioEvent] = []
    max_steps = 100
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("max_steps"):
            max_steps = int(line.split()[1])
            continue
        head, _, effect = line.partition(":")
        head, effect = head.strip(), effect.strip()
        step = None
        state = None
        if head.startswith("at step"):
            step = int(head.split()[2])
        elif head.startswith("when"):
            inner = head[len("when"):].strip()
            if not (inner.startswith("{") and inner.endswith("}")):
                raise SpecError(f"when-trigger needs a braced state: {head!r}", ln)
            state = 0
            body = inner[1:-1].strip()
            if body:
                for nm in body.split(","):
                    state |= 1 << props.lookup(nm.strip()).index
        else:
            raise SpecError(f"unrecognized scenario line {line!r}", ln)
        if effect.startswith("move"):
            rest = effect[len("move"):].strip()
            obj, _, region = rest.partition("->")
            events.append(ScenarioEvent(step, state, "move", obj.strip(), region.strip()))
        elif effect.startswith("set"):
            rest = effect[len("set"):].strip()
            pname, _, value = rest.partition("=")
            value = value.strip()
            if value not in ("true", "false"):
                raise SpecError(f"set-effect needs true or false: {effect!r}", ln)
            events.append(ScenarioEvent(step, state, "set", pname.strip(), value == "true"))
        else:
            raise SpecError(f"unrecognized scenario effect {effect!r}", ln)
    return Scenario(tuple(events), max_steps)


def _apply_event(ws: Workspace, world: WorldState, event: ScenarioEvent) -> WorldState:
    new = world.copy()
    if event.kind == "move":
        if event.target not in ws.bindings:
            raise WorldError(f"scenario moves undeclared object {event.target!r}")
        new.held[event.target] = False
        new.poses[event.target] = ws.region_center(event.target, str(event.value))
    else:
        if event.target not in ws.user_props:
            raise WorldError(f"scenario sets undeclared user input {event.target!r}")
        new.user[event.target] = bool(event.value)
    return new


@dataclass
class RecoveryOutcome:
    step: int
    report: ViolationReport
    violated_texts: tuple[str, ...]
    active_goal_text: str
    relaxations: tuple[RelaxationRecord, ...]
    suggestions: tuple[SkillSuggestion, ...]
    relax_realizable: bool
    outcome: str                     # "relaxed" | "repaired" | "unrecoverable"
    resumed_goal_text: str | None
    resumed_input: int | None


@dataclass
class ExecutionReport:
    trace: list[tuple[int, int]]
    violations: list[RecoveryOutcome]
    terminal: str                    # "running" | "unrecoverable"
    final_spec: GR1Spec


class _Controller:
    """Spec, strategy, and monitor currently in force."""

    def __init__(self, spec: GR1Spec, state_cap: int):
        self.spec = spec
        game = build_game(spec, state_cap=state_cap)
        realizable, winning = solve_gr1(game)
        self.realizable = realizable
        self.strategy: Strategy | None = (
            extract_strategy(game, winning) if realizable else None
        )
        self.monitor: Monitor = compile_monitor(spec)


def _reanchor_spec(spec: GR1Spec, x_in: int) -> GR1Spec:
    props = spec.props
    return replace(
        spec,
        env_init=exact_state_formula(props, x_in, list(range(props.n_inputs))),
        sys_init=exact_state_formula(props, 0, [p.index for p in props.outputs]),
    )


def run_execution_loop(
    spec: GR1Spec,
    workspace: Workspace,
    initial: WorldState,
    scenario: Scenario,
    cfg: RepairConfig,
    *,
    adj: AdjacencyModel | None = None,
    state_cap: int = DEFAULT_STATE_CAP,
) -> ExecutionReport:
    """Execute the strategy tick by tick, watching every observed triplet.

    Per tick: read inputs, advance the strategy, either fire due scenario
    events or advance the active skill one waypoint, read inputs again, check
    the assumptions.  On violations: relax; if the relaxed task is
    unrealizable, repair; with no suggestions the run is unrecoverable,
    otherwise the new skills are added and execution resumes from the current
    input state, pursuing the goal that was active when the violation hit.
    """
    adj = adj or AdjacencyModel.unrestricted_model()
    controller = _Controller(spec, state_cap)
    if not controller.realizable:
        raise UnrealizableError("initial specification is unrealizable")
    world = initial.copy()
    trace: list[tuple[int, int]] = []
    violations: list[RecoveryOutcome] = []
    terminal = "running"
    sigma = None
    fired: set[int] = set()

    def recover(step: int, report: ViolationReport, x_now: int) -> bool:
        """Returns True when execution can continue."""
        nonlocal controller, sigma
        cur = controller.spec
        if report.violated:
            relaxed, records = relax(cur, report)
            active_goal_text = cur.sys_liveness[report.active_goal_index].text()
        else:
            relaxed, records = _reanchor_spec(cur, x_now), []
            active_goal_text = cur.sys_liveness[0].text() if cur.sys_liveness else "true"
        violated_texts = tuple(
            controller.monitor.clause_text(i) for i in sorted(report.violated)
        )
        trial = _Controller(relaxed, state_cap)
        suggestions: tuple[SkillSuggestion, ...] = ()
        if trial.realizable:
            outcome = "relaxed"
        else:
            found = repair(relaxed, cfg, adj, state_cap=state_cap)
            suggestions = tuple(sorted(found, key=lambda s: s.name))
            if not suggestions:
                violations.append(RecoveryOutcome(
                    step, report, violated_texts, active_goal_text, tuple(records),
                    suggestions, False, "unrecoverable", None, None,
                ))
                return False
            relaxed = add_skills(relaxed, list(suggestions))
            trial = _Controller(relaxed, state_cap)
            if not trial.realizable:
                raise AssertionError("repair returned an insufficient skill set")
            outcome = "repaired"
        controller = trial
        sigma = None
        violations.append(RecoveryOutcome(
            step, report, violated_texts, active_goal_text, tuple(records),
            suggestions, outcome == "relaxed", outcome,
            relaxed.sys_liveness[0].text() if relaxed.sys_liveness else "true",
            report.triplet.x_in_next if report.violated else x_now,
        ))
        return True

    step = 0
    while step < scenario.max_steps:
        x_in = inverse_grounding(workspace, world)
        if sigma is None:
            sigma = controller.strategy.initial_for(x_in)
            if sigma is None:
                # World no longer satisfies the initial input condition (an
                # event fired during recovery); re-pin and resynthesize.
                fake = ViolationReport(frozenset(), Triplet(x_in, 0, x_in), 0)
                if not recover(step, fake, x_in):
                    terminal = "unrecoverable"
                    break
                continue
        else:
            nxt = controller.strategy.step(sigma, x_in)
            if nxt is None:
                raise AssertionError("strategy has no transition for an allowed input")
            sigma = nxt
        y_out = sigma.output

        due = [
            i for i, e in enumerate(scenario.events)
            if i not in fired and e.due(step, x_in)
        ]
        if due:
            for i in due:
                world = _apply_event(workspace, world, scenario.events[i])
                fired.add(i)
        elif y_out:
            name = controller.spec.props.state_names(y_out)[0]
            skill = controller.spec.skill_by_name(name)
            progress = skill_progress(skill, x_in, controller.spec.props)
            if progress is not None and progress < len(skill.chain) - 1:
                world, _ = apply_skill_tick(workspace, skill, progress, world)

        x_next = inverse_grounding(workspace, world)
        trace.append((x_in, y_out))
        report = check_assumptions(
            controller.monitor,
            Triplet(x_in, y_out, x_next),
            controller.strategy.goal_of(sigma),
        )
        if report.violated:
            if not recover(step, report, x_next):
                terminal = "unrecoverable"
                break
        step += 1

    return ExecutionReport(
        trace=trace,
        violations=violations,
        terminal=terminal,
        final_spec=controller.spec,
    )


def format_trace(report: ExecutionReport, props: PropositionTable) -> str:
    lines = [
        f"{props.state_text(x)} | {props.state_text(y)}" for x, y in report.trace
    ]
    return "\n".join(lines) + "\n"


def format_events(report: ExecutionReport, props: PropositionTable) -> str:
    """Human-readable event log: one block per recovery."""
    out: list[str] = []
    for v in report.violations:
        out.append(f"step {v.step}: violation")
        for text in v.violated_texts:
            out.append(f"  violated: {text}")
        t = v.report.triplet
        out.append(
            "  triplet: "
            f"{props.state_text(t.x_in)} | {props.state_text(t.y_out)} | "
            f"{props.state_text(t.x_in_next)}"
        )
        out.append(f"  goal: {v.active_goal_text}")
        for r in v.relaxations:
            out.append(f"  relaxed: clause {r.clause_index} ({r.origin}) += {to_text(r.added_disjunct)}")
        out.append(f"  realizable after relaxation: {'yes' if v.relax_realizable else 'no'}")
        for s in v.suggestions:
            chain = " -> ".join(props.state_text(c) for c in s.chain)
            out.append(f"  suggested: {s.name} : {chain}")
        out.append(f"  outcome: {v.outcome}")
        if v.resumed_goal_text is not None:
            out.append(f"  resumed goal: {v.resumed_goal_text}")
    out.append(f"terminal: {report.terminal}")
    return "\n".join(out) + "\n"


def format_events_json(report: ExecutionReport, props: PropositionTable) -> str:
    """One JSON record per recovery: step, violated clauses, relaxations,
    suggestions, and post-relaxation realizability."""
    lines = []
    for v in report.violations:
        record = {
            "step": v.step,
            "violated_clauses": list(v.violated_texts),
            "relaxations": [
                {
                    "clause_index": r.clause_index,
                    "origin": r.origin,
                    "added_disjunct": to_text(r.added_disjunct),
                }
                for r in v.relaxations
            ],
            "suggestions": [
                {
                    "name": s.name,
                    "chain": [props.state_names(c) for c in s.chain],
                    "provenance": s.provenance,
                }
                for s in v.suggestions
            ],
            "realizable": v.relax_realizable,
            "outcome": v.outcome,
            "goal": v.active_goal_text,
            "resumed_goal": v.resumed_goal_text,
        }
        lines.append(json.dumps(record, sort_keys=True))
    lines.append(json.dumps({"terminal": report.terminal}, sort_keys=True))
    return "\n".join(lines) + "\n"
