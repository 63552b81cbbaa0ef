"""Text format for task specifications: parser and canonical printer.

A spec file is line oriented, UTF-8, with `#` comments.  Sections:

    [INPUT]             name : c|u            (one per line)
    [MUTEX]             name, name, ...       (one exactly-one group per line)
    [OUTPUT]            name                  (skill propositions)
    [SKILL name]        chain: {p,...} -> {p,...} -> ...
                        branch k: {p,...}     (observed alternate outcomes)
    [ENV_INIT] [SYS_INIT]                     one formula per line, conjoined
    [ENV_SAFETY_HARD] [ENV_SAFETY_SKILL] [SYS_SAFETY]
    [ENV_LIVENESS] [SYS_LIVENESS]             one goal per line

Clause lines may carry a tag: `name :: formula`.  In [ENV_SAFETY_SKILL] the
tag is the owning skill; `@idle` in [ENV_SAFETY_HARD], `@output_mutex` in
[SYS_SAFETY], and skill tags in [ENV_LIVENESS] mark machine-maintained clauses
the loader would otherwise generate.  Fresh hand-written files normally leave
the generated material out entirely.

[INPUT] and [SYS_LIVENESS] must be present and non-empty; every other section
may be omitted (empty init sections mean `true`).
"""

from __future__ import annotations

from dataclasses import dataclass

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
    conjoin,
    to_text,
)
from .specs import (
    GR1Spec,
    IDLE_TAG,
    LivenessClause,
    NAME_RE,
    OUTPUT_MUTEX_TAG,
    PropositionTable,
    SafetyClause,
    Skill,
    SpecError,
    make_spec,
)

SECTION_ORDER = [
    "INPUT",
    "MUTEX",
    "OUTPUT",
    "ENV_INIT",
    "SYS_INIT",
    "ENV_SAFETY_HARD",
    "ENV_SAFETY_SKILL",
    "SYS_SAFETY",
    "ENV_LIVENESS",
    "SYS_LIVENESS",
]


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_SYMBOLS = ["<->", "->", "::", "(", ")", "{", "}", ",", ":", "!", "&", "|", "="]
_KEYWORDS = {"true", "false", "next"}


def tokenize(text: str, line_no: int) -> list[Token]:
    """Tokenize one logical line; positions are 1-based columns."""
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in " \t":
            i += 1
            continue
        if ch == "#":
            break
        matched = False
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                tokens.append(Token("sym", sym, line_no, i + 1))
                i += len(sym)
                matched = True
                break
        if matched:
            continue
        if ch.isalpha() or ch == "_" or ch == "@":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "kw" if word in _KEYWORDS else "name"
            tokens.append(Token(kind, word, line_no, i + 1))
            i = j
            continue
        if ch.isdigit():
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(Token("int", text[i:j], line_no, i + 1))
            i = j
            continue
        raise SpecError(f"unexpected character {ch!r}", line_no, i + 1)
    return tokens


class _TokenStream:
    def __init__(self, tokens: list[Token], line_no: int):
        self.tokens = tokens
        self.pos = 0
        self.line_no = line_no

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise SpecError("unexpected end of line", self.line_no)
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.take()
        if tok.text != text:
            raise SpecError(f"expected {text!r}, found {tok.text!r}", tok.line, tok.col)
        return tok

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)


def _parse_formula_tokens(ts: _TokenStream, props: PropositionTable) -> BooleanFormula:
    formula = _parse_iff(ts, props)
    if not ts.at_end():
        tok = ts.peek()
        raise SpecError(f"trailing input {tok.text!r}", tok.line, tok.col)
    return formula


def _parse_iff(ts, props):
    left = _parse_implies(ts, props)
    while (tok := ts.peek()) is not None and tok.text == "<->":
        ts.take()
        left = Iff(left, _parse_implies(ts, props))
    return left


def _parse_implies(ts, props):
    left = _parse_or(ts, props)
    if (tok := ts.peek()) is not None and tok.text == "->":
        ts.take()
        return Implies(left, _parse_implies(ts, props))
    return left


def _parse_or(ts, props):
    left = _parse_and(ts, props)
    while (tok := ts.peek()) is not None and tok.text == "|":
        ts.take()
        left = Or(left, _parse_and(ts, props))
    return left


def _parse_and(ts, props):
    left = _parse_unary(ts, props)
    while (tok := ts.peek()) is not None and tok.text == "&":
        ts.take()
        left = And(left, _parse_unary(ts, props))
    return left


def _parse_unary(ts, props):
    tok = ts.peek()
    if tok is None:
        raise SpecError("formula ended unexpectedly", ts.line_no)
    if tok.text == "!":
        ts.take()
        return Not(_parse_unary(ts, props))
    return _parse_atom(ts, props)


def _parse_atom(ts, props):
    tok = ts.take()
    if tok.text == "(":
        inner = _parse_iff(ts, props)
        ts.expect(")")
        return inner
    if tok.kind == "kw":
        if tok.text == "true":
            return TRUE
        if tok.text == "false":
            return FALSE
        if tok.text == "next":
            ts.expect("(")
            name_tok = ts.take()
            if name_tok.kind not in ("name", "kw"):
                raise SpecError("next() needs a proposition name", name_tok.line, name_tok.col)
            ts.expect(")")
            return NextAtom(_resolve(props, name_tok))
    if tok.kind == "name":
        return Atom(_resolve(props, tok))
    raise SpecError(f"expected a formula, found {tok.text!r}", tok.line, tok.col)


def _resolve(props: PropositionTable, tok: Token) -> PropositionId:
    try:
        return props.lookup(tok.text)
    except SpecError:
        raise SpecError(f"undeclared proposition {tok.text!r}", tok.line, tok.col) from None


def parse_formula(text: str, props: PropositionTable, line_no: int = 1) -> BooleanFormula:
    ts = _TokenStream(tokenize(text, line_no), line_no)
    if ts.at_end():
        raise SpecError("empty formula", line_no)
    return _parse_formula_tokens(ts, props)


def _parse_state(ts: _TokenStream, props: PropositionTable) -> int:
    """Parse `{name, name, ...}` into a bit mask."""
    ts.expect("{")
    mask = 0
    while True:
        tok = ts.take()
        if tok.text == "}":
            break
        if tok.kind != "name":
            raise SpecError(f"expected proposition name, found {tok.text!r}", tok.line, tok.col)
        mask |= 1 << _resolve(props, tok).index
        nxt = ts.take()
        if nxt.text == "}":
            break
        if nxt.text != ",":
            raise SpecError(f"expected ',' or '}}', found {nxt.text!r}", nxt.line, nxt.col)
    return mask


_HEADER_SIMPLE = {f"[{name}]": name for name in SECTION_ORDER}


def _split_sections(text: str) -> list[tuple[str, str | None, int, list[tuple[int, str]]]]:
    """Return (section, argument, header line number, body lines)."""
    sections: list[tuple[str, str | None, int, list[tuple[int, str]]]] = []
    current: list[tuple[int, str]] | None = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line in _HEADER_SIMPLE:
                current = []
                sections.append((_HEADER_SIMPLE[line], None, ln, current))
                continue
            if line.startswith("[SKILL ") and line.endswith("]"):
                arg = line[len("[SKILL "):-1].strip()
                if not NAME_RE.match(arg):
                    raise SpecError(f"bad skill name {arg!r}", ln)
                current = []
                sections.append(("SKILL", arg, ln, current))
                continue
            raise SpecError(f"unknown section header {line!r}", ln)
        if current is None:
            raise SpecError("content before any section header", ln)
        current.append((ln, raw.split("#", 1)[0].rstrip()))
    return sections


def parse_spec(text: str) -> GR1Spec:
    """Parse and validate a spec file, generating derived clauses.

    Skills found without a tagged clause block get their stay-or-advance and
    frame clauses generated here; same for the idle frame, the output mutex
    clause, and per-skill completion fairness goals.
    """
    sections = _split_sections(text)
    seen_at: dict[str, int] = {}
    for name, arg, ln, _ in sections:
        key = name if name != "SKILL" else f"SKILL {arg}"
        if key in seen_at:
            raise SpecError(f"duplicate section [{key}]", ln)
        seen_at[key] = ln

    def body_of(name: str) -> list[tuple[int, str]]:
        for sec, _, _, lines in sections:
            if sec == name:
                return lines
        return []

    # Proposition table.
    inputs: list[PropositionId] = []
    controllable: set[int] = set()
    input_lines = body_of("INPUT")
    if "INPUT" not in seen_at or not input_lines:
        raise SpecError("[INPUT] section is required and must not be empty")
    for ln, line in input_lines:
        ts = _TokenStream(tokenize(line, ln), ln)
        name_tok = ts.take()
        if name_tok.kind != "name" or not NAME_RE.match(name_tok.text):
            raise SpecError(f"bad input declaration {line.strip()!r}", ln)
        ts.expect(":")
        kind_tok = ts.take()
        if kind_tok.text not in ("c", "u") or not ts.at_end():
            raise SpecError("input must be declared `name : c` or `name : u`", ln)
        idx = len(inputs)
        inputs.append(PropositionId(idx, name_tok.text))
        if kind_tok.text == "c":
            controllable.add(idx)

    outputs: list[PropositionId] = []
    for ln, line in body_of("OUTPUT"):
        word = line.strip()
        if not NAME_RE.match(word):
            raise SpecError(f"bad output name {word!r}", ln)
        outputs.append(PropositionId(len(inputs) + len(outputs), word))

    name_to_idx = {p.name: p.index for p in inputs + outputs}

    groups: list[frozenset[int]] = []
    for ln, line in body_of("MUTEX"):
        members = []
        for part in line.split(","):
            word = part.strip()
            if not word:
                raise SpecError("empty name in mutex group", ln)
            if word not in name_to_idx:
                raise SpecError(f"undeclared proposition {word!r}", ln)
            members.append(name_to_idx[word])
        if len(members) < 1:
            raise SpecError("empty mutex group", ln)
        groups.append(frozenset(members))

    try:
        props = PropositionTable(
            inputs=tuple(inputs),
            outputs=tuple(outputs),
            controllable=frozenset(controllable),
            mutex_groups=tuple(groups),
        )
    except SpecError as exc:
        raise SpecError(str(exc), seen_at.get("INPUT")) from None

    # Skills.
    skills: list[Skill] = []
    for sec, arg, ln, lines in sections:
        if sec != "SKILL":
            continue
        if arg not in name_to_idx or name_to_idx[arg] < len(inputs):
            raise SpecError(f"skill {arg!r} is not a declared output", ln)
        chain: tuple[int, ...] | None = None
        branches: list[tuple[int, int]] = []
        for bln, line in lines:
            ts = _TokenStream(tokenize(line, bln), bln)
            head = ts.take()
            if head.text == "chain":
                ts.expect(":")
                states = [_parse_state(ts, props)]
                while not ts.at_end():
                    ts.expect("->")
                    states.append(_parse_state(ts, props))
                chain = tuple(states)
            elif head.text == "branch":
                k_tok = ts.take()
                if k_tok.kind != "int":
                    raise SpecError("branch needs a chain index", bln)
                ts.expect(":")
                branches.append((int(k_tok.text), _parse_state(ts, props)))
                if not ts.at_end():
                    raise SpecError("trailing input after branch state", bln)
            else:
                raise SpecError(f"unexpected skill line {line.strip()!r}", bln)
        if chain is None:
            raise SpecError(f"skill {arg!r} has no chain", ln)
        skills.append(Skill(props.lookup(arg), chain, tuple(branches)))

    def parse_clause_lines(section: str):
        out = []
        for ln, line in body_of(section):
            ts = _TokenStream(tokenize(line, ln), ln)
            tag = None
            first = ts.peek()
            if (
                first is not None
                and first.kind == "name"
                and ts.pos + 1 < len(ts.tokens)
                and ts.tokens[ts.pos + 1].text == "::"
            ):
                tag = ts.take().text
                ts.take()
            body = _parse_formula_tokens(ts, props)
            out.append((ln, tag, body))
        return out

    def conjoined_init(section: str) -> BooleanFormula:
        parts = [body for _, _, body in parse_clause_lines(section)]
        return conjoin(parts)

    env_init = conjoined_init("ENV_INIT")
    sys_init = conjoined_init("SYS_INIT")

    skill_names = {s.name.name for s in skills}
    env_safety_skill: list[SafetyClause] = []
    for ln, tag, body in parse_clause_lines("ENV_SAFETY_SKILL"):
        if tag is not None:
            if tag not in skill_names:
                raise SpecError(f"skill clause tagged with unknown skill {tag!r}", ln)
            env_safety_skill.append(
                SafetyClause(body, origin="skill", source_skill=tag, auto=True)
            )
        else:
            owners = sorted(
                {p.name for p in outputs if p.index in _positive_atom_indices(body)}
            )
            owner = owners[0] if len(owners) == 1 and owners[0] in skill_names else None
            env_safety_skill.append(
                SafetyClause(body, origin="skill", source_skill=owner, auto=False)
            )

    env_safety_hard: list[SafetyClause] = []
    for ln, tag, body in parse_clause_lines("ENV_SAFETY_HARD"):
        if tag is not None and tag != IDLE_TAG:
            raise SpecError(f"unknown tag {tag!r} in [ENV_SAFETY_HARD]", ln)
        env_safety_hard.append(
            SafetyClause(body, origin="hard", source_skill=None, auto=tag == IDLE_TAG)
        )

    sys_safety: list[SafetyClause] = []
    for ln, tag, body in parse_clause_lines("SYS_SAFETY"):
        if tag is not None and tag != OUTPUT_MUTEX_TAG:
            raise SpecError(f"unknown tag {tag!r} in [SYS_SAFETY]", ln)
        sys_safety.append(
            SafetyClause(body, origin="system", source_skill=None, auto=tag == OUTPUT_MUTEX_TAG)
        )

    env_liveness: list[LivenessClause] = []
    for ln, tag, body in parse_clause_lines("ENV_LIVENESS"):
        if tag is not None and tag not in skill_names:
            raise SpecError(f"unknown tag {tag!r} in [ENV_LIVENESS]", ln)
        env_liveness.append(LivenessClause(body, source_skill=tag, auto=tag is not None))

    sys_lines = parse_clause_lines("SYS_LIVENESS")
    if "SYS_LIVENESS" not in seen_at or not sys_lines:
        raise SpecError("[SYS_LIVENESS] section is required and must not be empty")
    sys_liveness = [LivenessClause(body) for _, _, body in sys_lines]

    return make_spec(
        props=props,
        skills=tuple(skills),
        env_init=env_init,
        sys_init=sys_init,
        env_safety_skill=tuple(env_safety_skill),
        env_safety_hard=tuple(env_safety_hard),
        sys_safety=tuple(sys_safety),
        env_liveness=tuple(env_liveness),
        sys_liveness=tuple(sys_liveness),
    )


def _positive_atom_indices(f: BooleanFormula) -> set[int]:
    if isinstance(f, Atom):
        return {f.prop.index}
    if isinstance(f, Not):
        if isinstance(f.child, Atom):
            return set()
        return _positive_atom_indices(f.child)
    if isinstance(f, (And, Or, Implies, Iff)):
        return _positive_atom_indices(f.left) | _positive_atom_indices(f.right)
    return set()


def _init_lines(f: BooleanFormula) -> list[str]:
    if isinstance(f, type(TRUE)):
        return []
    parts = []
    node = f
    while isinstance(node, And):
        parts.append(node.right)
        node = node.left
    parts.append(node)
    parts.reverse()
    return [to_text(p) for p in parts]


def print_spec(spec: GR1Spec) -> str:
    """Canonical text; `parse_spec(print_spec(s))` is structurally equal to s."""
    props = spec.props
    out: list[str] = []

    out.append("[INPUT]")
    for p in props.inputs:
        kind = "c" if p.index in props.controllable else "u"
        out.append(f"{p.name} : {kind}")

    out.append("")
    out.append("[MUTEX]")
    for g in props.mutex_groups:
        out.append(", ".join(props.name_of(i) for i in sorted(g)))

    out.append("")
    out.append("[OUTPUT]")
    for p in props.outputs:
        out.append(p.name)

    for skill in spec.skills:
        out.append("")
        out.append(f"[SKILL {skill.name.name}]")
        out.append("chain: " + " -> ".join(props.state_text(s) for s in skill.chain))
        for k, state in skill.branches:
            out.append(f"branch {k}: {props.state_text(state)}")

    out.append("")
    out.append("[ENV_INIT]")
    out.extend(_init_lines(spec.env_init))

    out.append("")
    out.append("[SYS_INIT]")
    out.extend(_init_lines(spec.sys_init))

    out.append("")
    out.append("[ENV_SAFETY_HARD]")
    for c in spec.env_safety_hard:
        prefix = f"{IDLE_TAG} :: " if c.auto else ""
        out.append(prefix + c.text())

    out.append("")
    out.append("[ENV_SAFETY_SKILL]")
    for c in spec.env_safety_skill:
        prefix = f"{c.source_skill} :: " if c.auto and c.source_skill else ""
        out.append(prefix + c.text())

    out.append("")
    out.append("[SYS_SAFETY]")
    for c in spec.sys_safety:
        prefix = f"{OUTPUT_MUTEX_TAG} :: " if c.auto else ""
        out.append(prefix + c.text())

    out.append("")
    out.append("[ENV_LIVENESS]")
    for c in spec.env_liveness:
        prefix = f"{c.source_skill} :: " if c.auto and c.source_skill else ""
        out.append(prefix + c.text())

    out.append("")
    out.append("[SYS_LIVENESS]")
    for c in spec.sys_liveness:
        out.append(c.text())

    return "\n".join(out) + "\n"
