"""EBNF-like grammar surface syntax.

::

    # comment
    start: value
    value: object | array | STRING | "true"
    pair: STRING WS ":" WS value
    items: value ("," WS value)*
    maybe: "x"? | %empty
    STRING: /"[^"]*"/
    WS: /[ \\t\\n\\r]*/

* ``name: body`` defines a rule; a body continues until the next ``name:``.
* ``"..."`` is a literal terminal (JSON string escapes), ``/.../`` a regex
  terminal (``\\/`` for a slash).
* ``( )`` groups; ``?``, ``*``, ``+`` are postfix repetition.
* ``%empty`` is the explicit epsilon production.
* An ALL-CAPS name whose body is a single literal or regex names a terminal.
* The start rule is ``start`` when defined, else the first rule.

EBNF operators are desugared into auxiliary right-recursive rules, so the
resulting :class:`Grammar` is plain BNF.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property

from ..errors import (
    GrammarSyntaxError,
    LeftRecursionUnsupported,
    RegexSyntaxError,
    UndefinedRule,
    UnsupportedFeature,
)
from ..regex import Fsm, compile_regex, escape_literal, literal_fsm


@dataclass(frozen=True)
class Ref:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Term:
    name: str

    def __str__(self) -> str:
        return self.name


Symbol = Ref | Term
Production = tuple[Symbol, ...]


@dataclass(frozen=True)
class Terminal:
    name: str
    pattern: str
    literal: bytes | None = None

    @cached_property
    def fsm(self) -> Fsm:
        if self.literal is not None:
            return literal_fsm(self.literal)
        return compile_regex(self.pattern)

    @property
    def nullable(self) -> bool:
        return self.fsm.start in self.fsm.accepting

    def source(self) -> str:
        if self.literal is not None:
            return json.dumps(self.literal.decode("utf-8"), ensure_ascii=False)
        return "/" + self.pattern.replace("/", "\\/") + "/"


@dataclass
class Grammar:
    rules: dict[str, list[Production]]
    terminals: dict[str, Terminal]
    start: str
    named_terminals: set[str] = field(default_factory=set)

    def to_text(self) -> str:
        """Render back to surface syntax (BNF form, no EBNF operators)."""
        lines = []
        for name, alts in self.rules.items():
            rendered = [" ".join(self._sym(s) for s in alt) if alt else "%empty" for alt in alts]
            lines.append(f"{name}: " + " | ".join(rendered))
        for name in sorted(self.named_terminals):
            lines.append(f"{name}: {self.terminals[name].source()}")
        return "\n".join(lines) + "\n"

    def _sym(self, sym: Symbol) -> str:
        if isinstance(sym, Term) and sym.name not in self.named_terminals:
            return self.terminals[sym.name].source()
        return sym.name

    def references(self) -> dict[str, int]:
        counts = {name: 0 for name in self.rules}
        for alts in self.rules.values():
            for alt in alts:
                for s in alt:
                    if isinstance(s, Ref):
                        counts[s.name] += 1
        return counts

    def nullable_rules(self) -> set[str]:
        nullable: set[str] = set()
        changed = True
        while changed:
            changed = False
            for name, alts in self.rules.items():
                if name in nullable:
                    continue
                for alt in alts:
                    if all(self._sym_nullable(s, nullable) for s in alt):
                        nullable.add(name)
                        changed = True
                        break
        return nullable

    def _sym_nullable(self, sym: Symbol, nullable: set[str]) -> bool:
        if isinstance(sym, Ref):
            return sym.name in nullable
        return self.terminals[sym.name].nullable

    def validate(self) -> None:
        """Check references, productivity and left recursion."""
        if self.start not in self.rules:
            raise UndefinedRule(self.start, "<start>")
        for name, alts in self.rules.items():
            for alt in alts:
                for s in alt:
                    if isinstance(s, Ref) and s.name not in self.rules:
                        raise UndefinedRule(s.name, name)
        self._check_productive()
        self._check_left_recursion()

    def _check_productive(self) -> None:
        productive: set[str] = set()
        changed = True
        while changed:
            changed = False
            for name, alts in self.rules.items():
                if name in productive:
                    continue
                for alt in alts:
                    if all(
                        (s.name in productive)
                        if isinstance(s, Ref)
                        else not self.terminals[s.name].fsm.is_empty()
                        for s in alt
                    ):
                        productive.add(name)
                        changed = True
                        break
        dead = [n for n in self.rules if n not in productive]
        if dead:
            raise GrammarSyntaxError(f"rules derive no finite string: {', '.join(dead)}")

    def _check_left_recursion(self) -> None:
        nullable = self.nullable_rules()
        edges: dict[str, list[str]] = {n: [] for n in self.rules}
        for name, alts in self.rules.items():
            for alt in alts:
                for s in alt:
                    if isinstance(s, Ref):
                        edges[name].append(s.name)
                    if not self._sym_nullable(s, nullable):
                        break
        # DFS for a cycle in the "can start with" graph
        color: dict[str, int] = {}
        path: list[str] = []

        def visit(n: str) -> None:
            color[n] = 1
            path.append(n)
            for m in edges[n]:
                if color.get(m) == 1:
                    raise LeftRecursionUnsupported(path[path.index(m):] + [m])
                if m not in color:
                    visit(m)
            path.pop()
            color[n] = 2

        for n in self.rules:
            if n not in color:
                visit(n)

    def recursive_rules(self) -> set[str]:
        """Rules lying on a cycle of the reference graph."""
        graph = {
            n: {s.name for alt in alts for s in alt if isinstance(s, Ref)}
            for n, alts in self.rules.items()
        }
        out = set()
        for n in graph:
            seen: set[str] = set()
            stack = list(graph[n])
            while stack:
                m = stack.pop()
                if m == n:
                    out.add(n)
                    break
                if m not in seen:
                    seen.add(m)
                    stack.extend(graph[m])
        return out


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<empty>%empty)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<regex>/(?:[^/\\\n]|\\.)+/)
  | (?P<op>[:|()?*+])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    line = 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise GrammarSyntaxError(f"unexpected character {text[pos]!r}", line)
        kind = m.lastgroup
        value = m.group()
        if kind != "ws":
            out.append((kind if kind != "op" else value, value, line))
        line += value.count("\n")
        pos = m.end()
    return out


# Parsed EBNF items before desugaring
@dataclass
class _Seq:
    items: list


@dataclass
class _Group:
    alts: list[_Seq]
    op: str | None = None


class _GrammarParser:
    def __init__(self, text: str) -> None:
        self.toks = _tokenize(text)
        self.i = 0
        self.terminals: dict[str, Terminal] = {}
        self.rules: dict[str, list[Production]] = {}
        self.named: set[str] = set()
        self.aux_count: dict[str, int] = {}

    def peek(self, k: int = 0) -> tuple[str, str, int] | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at_rule_start(self) -> bool:
        a, b = self.peek(), self.peek(1)
        return a is not None and b is not None and a[0] == "name" and b[0] == ":"

    def parse(self) -> Grammar:
        order: list[tuple[str, list[_Seq], int]] = []
        while self.peek() is not None:
            if not self.at_rule_start():
                tok = self.peek()
                raise GrammarSyntaxError(f"expected 'name:' but found {tok[1]!r}", tok[2])
            _, name, line = self.toks[self.i]
            self.i += 2
            alts = self.alternatives(top=True)
            if any(n == name for n, _, _ in order):
                raise GrammarSyntaxError(f"rule {name!r} defined twice", line)
            order.append((name, alts, line))
        if not order:
            raise GrammarSyntaxError("grammar defines no rules")

        for name, alts, line in order:
            if name.isupper() and len(alts) == 1 and len(alts[0].items) == 1:
                item = alts[0].items[0]
                if isinstance(item, tuple) and item[0] in ("string", "regex"):
                    self.terminals[name] = self.make_terminal(item, line, name=name)
                    self.named.add(name)
        for name, alts, line in order:
            if name in self.named:
                continue
            self.rules[name] = [self.lower_seq(seq, name, line) for seq in alts]
        names = [n for n, _, _ in order if n not in self.named]
        if not names:
            raise GrammarSyntaxError("grammar defines no rules, only terminals")
        start = "start" if "start" in self.rules else names[0]
        g = Grammar(self.rules, self.terminals, start, self.named)
        g.validate()
        return g

    def alternatives(self, top: bool) -> list[_Seq]:
        alts = [self.sequence(top)]
        while self.peek() is not None and self.peek()[0] == "|":
            self.i += 1
            alts.append(self.sequence(top))
        return alts

    def sequence(self, top: bool) -> _Seq:
        items: list = []
        line = self.peek()[2] if self.peek() else None
        while True:
            tok = self.peek()
            if tok is None or tok[0] in ("|", ")") or (top and self.at_rule_start()):
                break
            items.append(self.postfix(self.primary()))
        if not items:
            raise GrammarSyntaxError("empty alternative (write %empty for epsilon)", line)
        return _Seq(items)

    def primary(self):
        kind, value, line = self.peek()
        self.i += 1
        if kind == "name":
            return ("name", value, line)
        if kind in ("string", "regex"):
            return (kind, value, line)
        if kind == "empty":
            return ("empty", value, line)
        if kind == "(":
            alts = self.alternatives(top=False)
            if self.peek() is None or self.peek()[0] != ")":
                raise GrammarSyntaxError("missing ')'", line)
            self.i += 1
            return _Group(alts)
        raise GrammarSyntaxError(f"unexpected {value!r}", line)

    def postfix(self, item):
        while self.peek() is not None and self.peek()[0] in ("?", "*", "+"):
            op = self.peek()[0]
            self.i += 1
            if isinstance(item, tuple) and item[0] == "empty":
                raise GrammarSyntaxError("cannot repeat %empty", item[2])
            item = _Group([_Seq([item])], op)
        return item

    def make_terminal(self, item: tuple, line: int, name: str | None = None) -> Terminal:
        kind, value, _ = item
        if kind == "string":
            try:
                text = json.loads(value)
            except json.JSONDecodeError as exc:
                raise GrammarSyntaxError(f"bad literal {value}: {exc}", line) from None
            data = text.encode("utf-8")
            if not data:
                raise GrammarSyntaxError('empty literal "" (write %empty for epsilon)', line)
            return Terminal(name or value, escape_literal(text), literal=data)
        pattern = value[1:-1].replace("\\/", "/")
        term = Terminal(name or value, pattern)
        try:
            term.fsm
        except (RegexSyntaxError, UnsupportedFeature) as exc:
            raise GrammarSyntaxError(f"bad regex terminal {value}: {exc}", line) from None
        return term

    def lower_seq(self, seq: _Seq, owner: str, line: int) -> Production:
        out: list[Symbol] = []
        for item in seq.items:
            if isinstance(item, _Group):
                out.append(Ref(self.lower_group(item, owner, line)))
                continue
            kind, value, item_line = item
            if kind == "empty":
                if len(seq.items) != 1:
                    raise GrammarSyntaxError("%empty must stand alone in its alternative", item_line)
                return ()
            if kind == "name":
                out.append(Term(value) if value in self.named else Ref(value))
                continue
            term = self.make_terminal(item, item_line)
            existing = self.terminals.get(term.name)
            if existing is None:
                self.terminals[term.name] = term
            out.append(Term(term.name))
        return tuple(out)

    def aux_name(self, owner: str) -> str:
        k = self.aux_count.get(owner, 0)
        self.aux_count[owner] = k + 1
        return f"{owner}__{k}"

    def lower_group(self, group: _Group, owner: str, line: int) -> str:
        name = self.aux_name(owner)
        body = [self.lower_seq(seq, name, line) for seq in group.alts]
        if group.op is None:
            self.rules[name] = body
        elif group.op == "?":
            self.rules[name] = body + [()]
        elif group.op == "*":
            self.rules[name] = [alt + (Ref(name),) for alt in body] + [()]
        else:  # "+": X+ == X X*
            star = self.aux_name(owner)
            self.rules[star] = [alt + (Ref(star),) for alt in body] + [()]
            self.rules[name] = [alt + (Ref(star),) for alt in body]
        return name


def parse_grammar(text: str) -> Grammar:
    """Parse and validate grammar source text.

    Raises:
        GrammarSyntaxError: malformed source or a rule that derives nothing.
        UndefinedRule: a referenced rule is missing.
        LeftRecursionUnsupported: a rule can derive itself as its leftmost
            symbol (directly, through another rule, or behind nullable symbols).
    """
    return _GrammarParser(text).parse()


def inline_rules(g: Grammar, max_refs: int = 4, max_alternatives: int = 64) -> Grammar:
    """Substitute small non-recursive rules into their call sites.

    A rule is inlined when it is not the start rule, lies on no reference
    cycle and is referenced at most ``max_refs`` times, unless doing so would
    give some rule more than ``max_alternatives`` productions. The language
    is unchanged.
    """
    rules = {n: list(alts) for n, alts in g.rules.items()}
    recursive = Grammar(rules, g.terminals, g.start).recursive_rules()
    skipped: set[str] = set()
    while True:
        counts = Grammar(rules, g.terminals, g.start).references()
        candidates = [
            n for n in rules
            if n != g.start and n not in recursive and n not in skipped
            and 0 < counts[n] <= max_refs
        ]
        if not candidates:
            break
        target = candidates[0]
        replacement = rules[target]
        new_rules: dict[str, list[Production]] = {}
        too_big = False
        for name, alts in rules.items():
            if name == target:
                continue
            expanded: list[Production] = []
            for alt in alts:
                variants: list[Production] = [()]
                for s in alt:
                    if isinstance(s, Ref) and s.name == target:
                        variants = [v + r for v in variants for r in replacement]
                    else:
                        variants = [v + (s,) for v in variants]
                expanded.extend(variants)
            if len(expanded) > max_alternatives:
                too_big = True
                break
            new_rules[name] = list(dict.fromkeys(expanded))
        if too_big:
            skipped.add(target)
            continue
        rules = new_rules
    # drop rules no longer reachable from start
    reachable = {g.start}
    stack = [g.start]
    while stack:
        n = stack.pop()
        for alt in rules[n]:
            for s in alt:
                if isinstance(s, Ref) and s.name not in reachable:
                    reachable.add(s.name)
                    stack.append(s.name)
    rules = {n: alts for n, alts in rules.items() if n in reachable}
    used_terms = {s.name for alts in rules.values() for alt in alts for s in alt if isinstance(s, Term)}
    return Grammar(
        rules=rules,
        terminals={n: t for n, t in g.terminals.items() if n in used_terms},
        start=g.start,
        named_terminals={n for n in g.named_terminals if n in used_terms},
    )
