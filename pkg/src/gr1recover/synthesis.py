"""Two-player game construction, three-nested-fixpoint solving, and strategy
extraction.

The game is explicit-state over the mutex-consistent product: input states are
bit vectors enumerated from the proposition table, output states allow at most
one active skill.  Transition relations are dense boolean tensors evaluated
with numpy (ENV indexed [x, y, x'], SYS indexed [x, y, x', y']), which keeps
desk-scale instances fast and iteration order exactly reproducible.

The environment moves first each step; a state where the environment has no
legal move is vacuously winning for the system, and an environment move the
system cannot answer is losing.  Initial-state quantification: the environment
picks any input satisfying the initial input condition, then the system picks
an output satisfying its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formulas import (
    And,
    Atom,
    BooleanFormula,
    FalseConst,
    Iff,
    Implies,
    NextAtom,
    Not,
    Or,
    TrueConst,
)
from .specs import GR1Spec, PropositionTable, SpecError

DEFAULT_STATE_CAP = 5_000_000
# The dense SYS tensor has (states)^2 cells; refuse anything that would not
# fit comfortably in memory even when the state count itself is under the cap.
_TENSOR_CELL_CAP = 1 << 28


class GameTooLarge(Exception):
    """The instance is beyond explicit-state desk scale."""


class UnrealizableError(Exception):
    """Strategy extraction was asked for on an unrealizable game."""


@dataclass(frozen=True)
class GameState:
    input: int
    output: int


def _grid(
    f: BooleanFormula,
    props: PropositionTable,
    xs: list[int],
    ys: list[int],
    ndim: int,
    axis_now_in: int,
    axis_now_out: int,
    axis_next_in: int,
    axis_next_out: int,
) -> np.ndarray:
    """Evaluate a formula over every combination of the given axes at once.

    Each atom becomes a boolean vector along its axis; connectives map to
    numpy element-wise ops, broadcasting across the rest.
    """
    nx, ny = len(xs), len(ys)

    def vec(values: list[bool], axis: int) -> np.ndarray:
        shape = [1] * ndim
        shape[axis] = len(values)
        return np.asarray(values, dtype=bool).reshape(shape)

    def rec(node: BooleanFormula) -> np.ndarray:
        if isinstance(node, TrueConst):
            return np.ones((1,) * ndim, dtype=bool)
        if isinstance(node, FalseConst):
            return np.zeros((1,) * ndim, dtype=bool)
        if isinstance(node, Atom):
            i = node.prop.index
            if props.is_input(i):
                return vec([bool(x >> i & 1) for x in xs], axis_now_in)
            return vec([bool(y >> i & 1) for y in ys], axis_now_out)
        if isinstance(node, NextAtom):
            i = node.prop.index
            if props.is_input(i):
                if axis_next_in < 0:
                    raise SpecError(f"next({node.prop.name}) not allowed in this context")
                return vec([bool(x >> i & 1) for x in xs], axis_next_in)
            if axis_next_out < 0:
                raise SpecError(f"next({node.prop.name}) not allowed in this context")
            return vec([bool(y >> i & 1) for y in ys], axis_next_out)
        if isinstance(node, Not):
            return ~rec(node.child)
        if isinstance(node, And):
            return rec(node.left) & rec(node.right)
        if isinstance(node, Or):
            return rec(node.left) | rec(node.right)
        if isinstance(node, Implies):
            return ~rec(node.left) | rec(node.right)
        if isinstance(node, Iff):
            return rec(node.left) == rec(node.right)
        raise TypeError(f"not a formula node: {node!r}")

    return rec(f)


class GameStructure:
    """Enumerated game with dense transition relations.

    `states` lists the game states the structure exposes: forward-reachable
    ones by default, or the whole mutex-consistent product when built with
    `reachable_only=False` (repair ranks currently-unreachable states too).
    """

    def __init__(self, spec: GR1Spec, *, state_cap: int = DEFAULT_STATE_CAP,
                 reachable_only: bool = True):
        props = spec.props
        self.spec = spec
        self.props = props
        self.xs = props.enumerate_input_states()
        self.ys = props.enumerate_output_states()
        nx, ny = len(self.xs), len(self.ys)
        if nx * ny > state_cap:
            raise GameTooLarge(
                f"{nx * ny} game states exceed the configured cap of {state_cap}"
            )
        if nx * ny * nx * ny > _TENSOR_CELL_CAP:
            raise GameTooLarge(
                f"transition relation with {nx * ny} states is beyond desk scale"
            )
        self.x_index = {x: i for i, x in enumerate(self.xs)}
        self.y_index = {y: i for i, y in enumerate(self.ys)}

        def grid4(f):
            return np.broadcast_to(
                _grid(f, props, self.xs, self.ys, 4, 0, 1, 2, 3), (nx, ny, nx, ny)
            )

        def grid3(f):
            return np.broadcast_to(
                _grid(f, props, self.xs, self.ys, 3, 0, 1, 2, -1), (nx, ny, nx)
            )

        def grid2(f):
            return np.broadcast_to(
                _grid(f, props, self.xs, self.ys, 2, 0, 1, -1, -1), (nx, ny)
            )

        env = np.ones((nx, ny, nx), dtype=bool)
        for clause in list(spec.env_safety_skill) + list(spec.env_safety_hard):
            env = env & grid3(clause.body)
        self.env = env

        sys_rel = np.ones((nx, ny, nx, ny), dtype=bool)
        for clause in spec.sys_safety:
            sys_rel = sys_rel & grid4(clause.body)
        self.sys = sys_rel

        self.env_init_vec = np.broadcast_to(
            _grid(spec.env_init, props, self.xs, self.ys, 1, 0, -1, -1, -1), (nx,)
        ).copy()
        self.sys_init_vec = np.broadcast_to(
            _grid(spec.sys_init, props, self.xs, self.ys, 1, -1, 0, -1, -1), (ny,)
        ).copy()

        self.env_goal_masks = [grid2(c.body).copy() for c in spec.env_liveness]
        self.sys_goal_masks = [grid2(c.body).copy() for c in spec.sys_liveness]
        if not self.env_goal_masks:
            self.env_goal_masks = [np.ones((nx, ny), dtype=bool)]
        if not self.sys_goal_masks:
            self.sys_goal_masks = [np.ones((nx, ny), dtype=bool)]

        self.reachable = self._reachable_mask()
        self.reachable_only = reachable_only
        mask = self.reachable if reachable_only else np.ones((nx, ny), dtype=bool)
        self.state_mask = mask
        self.states = [
            GameState(self.xs[ix], self.ys[iy])
            for ix in range(nx)
            for iy in range(ny)
            if mask[ix, iy]
        ]

    def _reachable_mask(self) -> np.ndarray:
        nx, ny = len(self.xs), len(self.ys)
        reach = self.env_init_vec[:, None] & self.sys_init_vec[None, :]
        while True:
            succ = np.any(
                reach[:, :, None, None] & self.env[:, :, :, None] & self.sys,
                axis=(0, 1),
            )
            new = reach | succ
            if (new == reach).all():
                return reach
            reach = new

    # Set-valued views used by tests and the execution loop; the solver works
    # on the arrays directly.
    def env_moves(self, state: GameState) -> list[int]:
        ix, iy = self.x_index[state.input], self.y_index[state.output]
        return [self.xs[jx] for jx in np.flatnonzero(self.env[ix, iy])]

    def sys_moves(self, state: GameState, next_input: int) -> list[int]:
        ix, iy = self.x_index[state.input], self.y_index[state.output]
        jx = self.x_index[next_input]
        return [self.ys[jy] for jy in np.flatnonzero(self.sys[ix, iy, jx])]

    def liveness_states(self, masks_index: int, *, side: str) -> frozenset[GameState]:
        masks = self.sys_goal_masks if side == "sys" else self.env_goal_masks
        m = masks[masks_index] & self.state_mask
        return frozenset(
            GameState(self.xs[ix], self.ys[iy]) for ix, iy in zip(*np.nonzero(m))
        )

    def cpre(self, target: np.ndarray) -> np.ndarray:
        """States from which, for every environment move, some system reply
        lands in `target`; environment deadlock counts as inside."""
        ok = np.any(self.sys & target[None, None, :, :], axis=3)
        return np.all(~self.env | ok, axis=2)


class WinningSet:
    """System-winning game states plus the progress measures extraction needs."""

    def __init__(self, game: GameStructure, mask: np.ndarray,
                 ranks: list[np.ndarray], block_idx: list[np.ndarray],
                 xsets: list[dict[tuple[int, int], np.ndarray]]):
        self._game = game
        self.mask = mask
        self.ranks = ranks
        self.block_idx = block_idx
        self.xsets = xsets
        self.states = frozenset(
            GameState(game.xs[ix], game.ys[iy])
            for ix, iy in zip(*np.nonzero(mask & game.state_mask))
        )

    def __contains__(self, state: GameState) -> bool:
        ix = self._game.x_index[state.input]
        iy = self._game.y_index[state.output]
        return bool(self.mask[ix, iy])


def build_game(spec: GR1Spec, *, state_cap: int = DEFAULT_STATE_CAP,
               reachable_only: bool = True) -> GameStructure:
    return GameStructure(spec, state_cap=state_cap, reachable_only=reachable_only)


def _nu_x(game: GameStructure, base: np.ndarray, not_env_goal: np.ndarray) -> np.ndarray:
    x = np.ones_like(base)
    while True:
        new = base | (not_env_goal & game.cpre(x))
        if (new == x).all():
            return x
        x = new


def solve_gr1(game: GameStructure) -> tuple[bool, WinningSet]:
    """Outer greatest fixpoint over system goals, middle least fixpoint for
    goal progress, inner greatest fixpoint waiting out each environment goal."""
    nx, ny = len(game.xs), len(game.ys)
    sys_goals = game.sys_goal_masks
    env_goals = game.env_goal_masks
    z = np.ones((nx, ny), dtype=bool)
    while True:
        z_before = z.copy()
        for j in range(len(sys_goals)):
            goal = sys_goals[j] & game.cpre(z)
            y = np.zeros((nx, ny), dtype=bool)
            while True:
                base = goal | game.cpre(y)
                new_y = np.zeros((nx, ny), dtype=bool)
                for e in env_goals:
                    new_y |= _nu_x(game, base, ~e)
                if (new_y == y).all():
                    break
                y = new_y
            z = y
        if (z == z_before).all():
            break

    ranks: list[np.ndarray] = []
    block_idx: list[np.ndarray] = []
    xsets: list[dict[tuple[int, int], np.ndarray]] = []
    infinity = nx * ny + 2
    for j in range(len(sys_goals)):
        rank = np.full((nx, ny), infinity, dtype=np.int64)
        bidx = np.zeros((nx, ny), dtype=np.int64)
        sets: dict[tuple[int, int], np.ndarray] = {}
        goal = sys_goals[j] & game.cpre(z)
        y = np.zeros((nx, ny), dtype=bool)
        r = 0
        while True:
            r += 1
            base = goal | game.cpre(y)
            new_y = y.copy()
            for i, e in enumerate(env_goals):
                x = _nu_x(game, base, ~e)
                newly = x & (rank == infinity)
                rank[newly] = r
                bidx[newly] = i
                sets[(r, i)] = x
                new_y |= x
            if (new_y == y).all():
                break
            y = new_y
        if not (y == z).all():
            raise AssertionError("progress-measure pass diverged from the winning set")
        ranks.append(rank)
        block_idx.append(bidx)
        xsets.append(sets)

    winning = WinningSet(game, z, ranks, block_idx, xsets)
    initial_ok = True
    for ix in np.flatnonzero(game.env_init_vec):
        if not np.any(game.sys_init_vec & z[ix]):
            initial_ok = False
            break
    return initial_ok, winning


@dataclass(frozen=True)
class StrategyState:
    id: int
    input: int
    output: int
    goal: int


class Strategy:
    """Deterministic finite state machine: states carry their input and output
    labels plus the liveness goal currently pursued; the transition map is
    partial, defined exactly for environment moves the assumptions allow."""

    def __init__(self, states: list[StrategyState],
                 initial: dict[int, int],
                 delta: dict[tuple[int, int], int],
                 n_goals: int):
        self.states = states
        self.initial = initial
        self.delta = delta
        self.n_goals = n_goals

    def initial_for(self, x_in: int) -> StrategyState | None:
        sid = self.initial.get(x_in)
        return self.states[sid] if sid is not None else None

    def step(self, state: StrategyState, x_in: int) -> StrategyState | None:
        sid = self.delta.get((state.id, x_in))
        return self.states[sid] if sid is not None else None

    def goal_of(self, state: StrategyState) -> int:
        return state.goal


def extract_strategy(game: GameStructure, winning: WinningSet) -> Strategy:
    """Build the strategy machine from the recorded progress measures.

    At a state pursuing goal j: if the goal holds here, switch to the next
    goal and move to minimize its rank; otherwise move to a lower rank, or
    stay inside the recorded inner fixpoint that blocks one environment goal.
    Ties break toward the lowest output index, making extraction deterministic.
    """
    realizable, w = True, winning
    nx, ny = len(game.xs), len(game.ys)
    sys_goals = game.sys_goal_masks
    n_goals = len(sys_goals)

    init_pairs: list[tuple[int, int]] = []
    for ix in np.flatnonzero(game.env_init_vec):
        choices = np.flatnonzero(game.sys_init_vec & w.mask[ix])
        if choices.size == 0:
            raise UnrealizableError(
                "no winning initial output for some allowed initial input"
            )
        ranks0 = w.ranks[0][ix, choices]
        iy = int(choices[np.lexsort((choices, ranks0))[0]])
        init_pairs.append((int(ix), iy))

    key_to_id: dict[tuple[int, int, int], int] = {}
    states: list[StrategyState] = []
    delta: dict[tuple[int, int], int] = {}
    order: list[tuple[int, int, int]] = []

    def intern(ix: int, iy: int, j: int) -> int:
        key = (ix, iy, j)
        if key not in key_to_id:
            key_to_id[key] = len(states)
            states.append(StrategyState(len(states), game.xs[ix], game.ys[iy], j))
            order.append(key)
        return key_to_id[key]

    initial = {}
    for ix, iy in init_pairs:
        initial[game.xs[ix]] = intern(ix, iy, 0)

    cursor = 0
    while cursor < len(states):
        ix, iy, j = order[cursor]
        sid = key_to_id[(ix, iy, j)]
        cursor += 1
        advance = bool(sys_goals[j][ix, iy])
        j_next = (j + 1) % n_goals if advance else j
        for jx in np.flatnonzero(game.env[ix, iy]):
            allowed = game.sys[ix, iy, jx] & w.mask[jx]
            choices = np.flatnonzero(allowed)
            if choices.size == 0:
                raise AssertionError("winning set not closed under environment moves")
            if advance:
                pool = choices
                pool_rank = w.ranks[j_next][jx, pool]
            else:
                r = int(w.ranks[j][ix, iy])
                i_blk = int(w.block_idx[j][ix, iy])
                rank_here = w.ranks[j][jx, choices]
                better = choices[rank_here < r]
                if better.size:
                    pool = better
                else:
                    xset = w.xsets[j][(r, i_blk)]
                    pool = choices[xset[jx, choices]]
                    if pool.size == 0:
                        raise AssertionError("no move stays in the blocking fixpoint")
                pool_rank = w.ranks[j][jx, pool]
            jy = int(pool[np.lexsort((pool, pool_rank))[0]])
            delta[(sid, game.xs[int(jx)])] = intern(int(jx), jy, j_next)

    return Strategy(states, initial, delta, n_goals)


def print_strategy(strategy: Strategy, props: PropositionTable) -> str:
    """Line-oriented machine dump: one `state` line per state, then `edge`
    lines in state order."""
    lines = []
    for s in strategy.states:
        lines.append(
            f"state {s.id} in={props.state_text(s.input)} "
            f"out={props.state_text(s.output)} goal={s.goal}"
        )
    for (sid, x), tid in sorted(strategy.delta.items()):
        lines.append(f"edge {sid} on={props.state_text(x)} -> {tid}")
    return "\n".join(lines) + "\n"
