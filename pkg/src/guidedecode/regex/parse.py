"""Regex parser for the supported subset.

Supported: literals, escapes (``\\d \\w \\s`` and negations, ASCII only;
``\\n \\t \\r \\f \\v \\xHH \\uHHHH``; escaped punctuation), classes with
ranges and negation, ``.``, the quantifiers ``* + ? {m} {m,} {m,n}``,
alternation and grouping (``(...)``, ``(?:...)``, ``(?P<name>...)``).
A leading ``^`` and trailing ``$`` are accepted and ignored, since matching
is always anchored at both ends.

Characters are Unicode code points; the automaton layer encodes them as
UTF-8 byte sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import RegexSyntaxError, UnsupportedFeature

MAX_CODEPOINT = 0x10FFFF
MAX_REPEAT = 1000

Ranges = tuple[tuple[int, int], ...]


def normalize(ranges: list[tuple[int, int]]) -> Ranges:
    out: list[tuple[int, int]] = []
    for lo, hi in sorted(ranges):
        if out and lo <= out[-1][1] + 1:
            if hi > out[-1][1]:
                out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return tuple(out)


def complement(ranges: Ranges) -> Ranges:
    out: list[tuple[int, int]] = []
    nxt = 0
    for lo, hi in ranges:
        if lo > nxt:
            out.append((nxt, lo - 1))
        nxt = hi + 1
    if nxt <= MAX_CODEPOINT:
        out.append((nxt, MAX_CODEPOINT))
    return tuple(out)


DIGIT: Ranges = ((0x30, 0x39),)
WORD: Ranges = normalize([(0x30, 0x39), (0x41, 0x5A), (0x5F, 0x5F), (0x61, 0x7A)])
SPACE: Ranges = normalize([(0x09, 0x0D), (0x20, 0x20)])
DOT: Ranges = complement(((0x0A, 0x0A),))

_CLASS_ESCAPES = {"d": DIGIT, "w": WORD, "s": SPACE}
_CHAR_ESCAPES = {"n": 0x0A, "t": 0x09, "r": 0x0D, "f": 0x0C, "v": 0x0B, "a": 0x07}


@dataclass(frozen=True)
class CharSet:
    ranges: Ranges


@dataclass(frozen=True)
class Concat:
    items: tuple["Node", ...]


@dataclass(frozen=True)
class Alt:
    options: tuple["Node", ...]


@dataclass(frozen=True)
class Repeat:
    item: "Node"
    min: int
    max: int | None


Node = CharSet | Concat | Alt | Repeat

EMPTY = Concat(())


def literal(text: str) -> Node:
    return Concat(tuple(CharSet(((ord(c), ord(c)),)) for c in text))


class _Parser:
    def __init__(self, pattern: str) -> None:
        self.p = pattern
        self.i = 0

    def error(self, msg: str, pos: int | None = None) -> RegexSyntaxError:
        return RegexSyntaxError(msg, self.p, self.i if pos is None else pos)

    def peek(self) -> str | None:
        return self.p[self.i] if self.i < len(self.p) else None

    def take(self) -> str:
        if self.i >= len(self.p):
            raise self.error("unexpected end of pattern")
        c = self.p[self.i]
        self.i += 1
        return c

    def parse(self) -> Node:
        if self.p.startswith("^"):
            self.i = 1
        node = self.alternation()
        if self.peek() == "$" and self.i == len(self.p) - 1:
            self.i += 1
        if self.i != len(self.p):
            c = self.p[self.i]
            if c == ")":
                raise self.error("unbalanced ')'")
            if c in "^$":
                raise UnsupportedFeature(f"anchor {c!r} is only supported at the pattern edges")
            raise self.error(f"unexpected {c!r}")
        return node

    def alternation(self) -> Node:
        options = [self.sequence()]
        while self.peek() == "|":
            self.i += 1
            options.append(self.sequence())
        return options[0] if len(options) == 1 else Alt(tuple(options))

    def sequence(self) -> Node:
        items: list[Node] = []
        while True:
            c = self.peek()
            if c is None or c in "|)":
                break
            if c == "$" and self.i == len(self.p) - 1:
                break
            items.append(self.quantified(self.atom()))
        return items[0] if len(items) == 1 else Concat(tuple(items))

    def quantified(self, node: Node) -> Node:
        while True:
            c = self.peek()
            start = self.i
            if c == "*":
                self.i += 1
                node = Repeat(node, 0, None)
            elif c == "+":
                self.i += 1
                node = Repeat(node, 1, None)
            elif c == "?":
                self.i += 1
                node = Repeat(node, 0, 1)
            elif c == "{":
                bounds = self.braces()
                if bounds is None:
                    return node
                node = Repeat(node, *bounds)
            else:
                return node
            nxt = self.peek()
            if nxt == "?":
                raise UnsupportedFeature("lazy quantifiers are not supported")
            if nxt == "+":
                raise UnsupportedFeature("possessive quantifiers are not supported")
            if nxt in ("*", "{") and (nxt != "{" or self._looks_like_braces()):
                raise self.error("multiple repeat", start)

    def _looks_like_braces(self) -> bool:
        save = self.i
        try:
            return self.braces() is not None
        finally:
            self.i = save

    def braces(self) -> tuple[int, int | None] | None:
        # A '{' that does not form a valid quantifier is a literal, as in Python's re.
        j = self.p.find("}", self.i)
        if j < 0:
            return None
        body = self.p[self.i + 1 : j]
        lo_s, comma, hi_s = body.partition(",")
        if not lo_s.isdigit() or (hi_s and not hi_s.isdigit()):
            return None
        lo = int(lo_s)
        hi: int | None = lo if not comma else (int(hi_s) if hi_s else None)
        if hi is not None and hi < lo:
            raise self.error("min repeat greater than max repeat")
        if lo > MAX_REPEAT or (hi is not None and hi > MAX_REPEAT):
            raise UnsupportedFeature(f"repeat count above {MAX_REPEAT}")
        self.i = j + 1
        return lo, hi

    def atom(self) -> Node:
        c = self.take()
        if c == "(":
            return self.group()
        if c == "[":
            return CharSet(self.char_class())
        if c == ".":
            return CharSet(DOT)
        if c == "\\":
            ranges = self.escape(in_class=False)
            return CharSet(ranges)
        if c in "*+?":
            raise self.error("nothing to repeat", self.i - 1)
        if c == "{" and self._brace_quantifier_at(self.i - 1):
            raise self.error("nothing to repeat", self.i - 1)
        if c in "^$":
            raise UnsupportedFeature(f"anchor {c!r} is only supported at the pattern edges")
        return CharSet(((ord(c), ord(c)),))

    def _brace_quantifier_at(self, pos: int) -> bool:
        save = self.i
        self.i = pos
        try:
            return self.braces() is not None
        finally:
            self.i = save

    def group(self) -> Node:
        if self.p.startswith("?", self.i):
            rest = self.p[self.i :]
            if rest.startswith("?:"):
                self.i += 2
            elif rest.startswith(("?=", "?!", "?<=", "?<!")):
                raise UnsupportedFeature("lookaround assertions are not supported")
            elif rest.startswith("?P="):
                raise UnsupportedFeature("backreferences are not supported")
            elif rest.startswith("?P<") or rest.startswith("?<"):
                j = self.p.find(">", self.i)
                if j < 0:
                    raise self.error("unterminated group name")
                self.i = j + 1
            else:
                raise UnsupportedFeature(f"group extension '(?{rest[1:2]}' is not supported")
        node = self.alternation()
        if self.peek() != ")":
            raise self.error("missing ')'")
        self.i += 1
        return node

    def escape(self, in_class: bool) -> Ranges:
        c = self.take()
        if c in _CLASS_ESCAPES:
            return _CLASS_ESCAPES[c]
        if c.lower() in _CLASS_ESCAPES:
            return complement(_CLASS_ESCAPES[c.lower()])
        cp = self.escape_char(c, in_class)
        return ((cp, cp),)

    def escape_char(self, c: str, in_class: bool) -> int:
        if c in _CHAR_ESCAPES:
            return _CHAR_ESCAPES[c]
        if c == "b" and in_class:
            return 0x08
        if c == "0":
            return 0
        if c == "x":
            return self.hex_digits(2)
        if c == "u":
            return self.hex_digits(4)
        if c == "U":
            return self.hex_digits(8)
        if c.isdigit():
            raise UnsupportedFeature("backreferences are not supported")
        if c in "bBAZ":
            raise UnsupportedFeature(f"assertion '\\{c}' is not supported")
        if c.isalnum():
            raise self.error(f"bad escape '\\{c}'", self.i - 2)
        return ord(c)

    def hex_digits(self, n: int) -> int:
        digits = self.p[self.i : self.i + n]
        if len(digits) != n or any(d not in "0123456789abcdefABCDEF" for d in digits):
            raise self.error("incomplete hex escape")
        self.i += n
        value = int(digits, 16)
        if value > MAX_CODEPOINT:
            raise self.error("code point out of range")
        return value

    def char_class(self) -> Ranges:
        negate = False
        if self.peek() == "^":
            negate = True
            self.i += 1
        ranges: list[tuple[int, int]] = []
        first = True
        while True:
            c = self.peek()
            if c is None:
                raise self.error("unterminated character class")
            if c == "]" and not first:
                self.i += 1
                break
            first = False
            item = self.class_item()
            if isinstance(item, tuple):
                ranges.extend(item)
                continue
            lo = item
            if self.peek() == "-" and self.p[self.i + 1 : self.i + 2] not in ("]", ""):
                self.i += 1
                hi_item = self.class_item()
                if isinstance(hi_item, tuple):
                    raise self.error("bad character range")
                if hi_item < lo:
                    raise self.error("bad character range")
                ranges.append((lo, hi_item))
            else:
                ranges.append((lo, lo))
        norm = normalize(ranges)
        return complement(norm) if negate else norm

    def class_item(self) -> int | Ranges:
        c = self.take()
        if c == "\\":
            e = self.take()
            if e in _CLASS_ESCAPES:
                return _CLASS_ESCAPES[e]
            if e.lower() in _CLASS_ESCAPES:
                return complement(_CLASS_ESCAPES[e.lower()])
            return self.escape_char(e, in_class=True)
        if c == "[" and self.peek() in (":", "=", "."):
            raise UnsupportedFeature("POSIX character classes are not supported")
        return ord(c)


def parse_regex(pattern: str) -> Node:
    """Parse ``pattern`` into an AST; raises RegexSyntaxError or UnsupportedFeature."""
    return _Parser(pattern).parse()


def escape_literal(text: str) -> str:
    """Escape ``text`` so that it parses as a literal."""
    return "".join("\\" + c if c in r".^$*+?{}[]\|()/" else c for c in text)
