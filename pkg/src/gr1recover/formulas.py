"""Boolean formula ASTs over current atoms and next-step atoms.

Formulas are the carrier for every clause in a specification: initial
conditions, safety clause bodies, and liveness goals.  `next(p)` is the only
temporal construct that appears inside a formula; "always" and "always
eventually" are implied by the section a clause lives in.

Operator precedence, tightest first:  !  &  |  ->  <->
`->` associates to the right, `&`, `|` and `<->` to the left.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterator, Union


@dataclass(frozen=True)
class PropositionId:
    """Handle for one atomic proposition: a table index plus its name."""

    index: int
    name: str


@dataclass(frozen=True)
class TrueConst:
    pass


@dataclass(frozen=True)
class FalseConst:
    pass


@dataclass(frozen=True)
class Atom:
    prop: PropositionId


@dataclass(frozen=True)
class NextAtom:
    prop: PropositionId


@dataclass(frozen=True)
class Not:
    child: "BooleanFormula"


@dataclass(frozen=True)
class And:
    left: "BooleanFormula"
    right: "BooleanFormula"


@dataclass(frozen=True)
class Or:
    left: "BooleanFormula"
    right: "BooleanFormula"


@dataclass(frozen=True)
class Implies:
    left: "BooleanFormula"
    right: "BooleanFormula"


@dataclass(frozen=True)
class Iff:
    left: "BooleanFormula"
    right: "BooleanFormula"


BooleanFormula = Union[TrueConst, FalseConst, Atom, NextAtom, Not, And, Or, Implies, Iff]

TRUE = TrueConst()
FALSE = FalseConst()


def conjoin(parts: list[BooleanFormula]) -> BooleanFormula:
    """Left-fold a conjunction; empty list is `true`."""
    if not parts:
        return TRUE
    return reduce(And, parts)


def disjoin(parts: list[BooleanFormula]) -> BooleanFormula:
    """Left-fold a disjunction; empty list is `false`."""
    if not parts:
        return FALSE
    return reduce(Or, parts)


def walk(f: BooleanFormula) -> Iterator[BooleanFormula]:
    """Yield every node of the AST, preorder."""
    stack = [f]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Not):
            stack.append(node.child)
        elif isinstance(node, (And, Or, Implies, Iff)):
            stack.append(node.right)
            stack.append(node.left)


def now_atoms(f: BooleanFormula) -> set[int]:
    """Indices of propositions read at the current step."""
    return {n.prop.index for n in walk(f) if isinstance(n, Atom)}


def next_atoms(f: BooleanFormula) -> set[int]:
    """Indices of propositions read at the next step."""
    return {n.prop.index for n in walk(f) if isinstance(n, NextAtom)}


def ast_size(f: BooleanFormula) -> int:
    return sum(1 for _ in walk(f))


def disjuncts(f: BooleanFormula) -> list[BooleanFormula]:
    """Flatten the left spine of `Or` nodes (used for relaxation stacking)."""
    out: list[BooleanFormula] = []
    node = f
    while isinstance(node, Or):
        out.append(node.right)
        node = node.left
    out.append(node)
    out.reverse()
    return out


_LEVEL_IFF = 1
_LEVEL_IMPLIES = 2
_LEVEL_OR = 3
_LEVEL_AND = 4
_LEVEL_NOT = 5
_LEVEL_ATOM = 6


def _level(f: BooleanFormula) -> int:
    if isinstance(f, Iff):
        return _LEVEL_IFF
    if isinstance(f, Implies):
        return _LEVEL_IMPLIES
    if isinstance(f, Or):
        return _LEVEL_OR
    if isinstance(f, And):
        return _LEVEL_AND
    if isinstance(f, Not):
        return _LEVEL_NOT
    return _LEVEL_ATOM


def to_text(f: BooleanFormula) -> str:
    """Render a formula as canonical text; `parse_formula` inverts it exactly."""
    return _render(f)


def _wrap(child: BooleanFormula, parent_level: int, tight: bool) -> str:
    """Render a child, parenthesizing when precedence or associativity demands.

    `tight` marks the side against the operator's associativity, where an
    equal-precedence child still needs parentheses to survive a reparse.
    """
    text = _render(child)
    lvl = _level(child)
    if lvl < parent_level or (lvl == parent_level and tight):
        return f"({text})"
    return text


def _render(f: BooleanFormula) -> str:
    if isinstance(f, TrueConst):
        return "true"
    if isinstance(f, FalseConst):
        return "false"
    if isinstance(f, Atom):
        return f.prop.name
    if isinstance(f, NextAtom):
        return f"next({f.prop.name})"
    if isinstance(f, Not):
        child = _render(f.child)
        if _level(f.child) < _LEVEL_NOT:
            return f"!({child})"
        return f"!{child}"
    if isinstance(f, And):
        return f"{_wrap(f.left, _LEVEL_AND, False)} & {_wrap(f.right, _LEVEL_AND, True)}"
    if isinstance(f, Or):
        return f"{_wrap(f.left, _LEVEL_OR, False)} | {_wrap(f.right, _LEVEL_OR, True)}"
    if isinstance(f, Implies):
        return f"{_wrap(f.left, _LEVEL_IMPLIES, True)} -> {_wrap(f.right, _LEVEL_IMPLIES, False)}"
    if isinstance(f, Iff):
        return f"{_wrap(f.left, _LEVEL_IFF, False)} <-> {_wrap(f.right, _LEVEL_IFF, True)}"
    raise TypeError(f"not a formula node: {f!r}")
