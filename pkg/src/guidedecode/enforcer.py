"""Format-enforcer backend: byte-at-a-time JSON-schema parsing.

Nothing is precomputed per vocabulary. At each step the allowed-token mask
is found by folding :func:`char_advance` over the bytes of every token
(sharing work along the vocabulary trie), optionally memoized per state.

Parser state is an immutable tuple of frames, innermost last:

``("value", node)``        a value of schema ``node`` must start here
``("obj", node, i, ph)``   inside an object, at property ``i``, phase ``ph``
``("key", literal, k)``    matching the ``k``-th byte of a quoted key
``("arr", node, ph)``      inside an array
``("str", ph, a, b, c)``   inside a string (escape / UTF-8 bookkeeping)
``("num", ph)``            inside a number
``("lit", rest)``          inside ``true`` / ``false``
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .cfg.cache import LRUCache
from .errors import IllegalToken
from .schema import WS_CHARS, SchemaNode, normalize_schema
from .vocab import TokenMask, Vocabulary

# object phases
OPEN, COLON, AFTER_COLON, AFTER_VALUE, AFTER_COMMA = range(5)
# string phases
BODY, ESCAPE, HEX, UTF8 = range(4)

_NUM_COMPLETE = frozenset({"zero", "int", "frac", "exp_digits"})
_DIGITS = frozenset(b"0123456789")
_HEX = frozenset(b"0123456789abcdefABCDEF")
_WS = frozenset(WS_CHARS)


def _num_next(phase: str, b: int) -> str | None:
    digit = b in _DIGITS
    if phase == "sign":
        return "zero" if b == 0x30 else ("int" if digit else None)
    if phase in ("zero", "int"):
        if phase == "int" and digit:
            return "int"
        if b == 0x2E:
            return "dot"
        return "exp" if b in (0x65, 0x45) else None
    if phase in ("dot", "frac"):
        if digit:
            return "frac"
        return "exp" if phase == "frac" and b in (0x65, 0x45) else None
    if phase == "exp":
        if b in (0x2B, 0x2D):
            return "exp_sign"
        return "exp_digits" if digit else None
    if phase in ("exp_sign", "exp_digits"):
        return "exp_digits" if digit else None
    return None


def _utf8_lead(b: int) -> tuple | None:
    """Frame for the continuation bytes after lead byte ``b``; None if illegal."""
    if 0xC2 <= b <= 0xDF:
        return ("str", UTF8, 1, 0x80, 0xBF)
    if b == 0xE0:
        return ("str", UTF8, 2, 0xA0, 0xBF)
    if 0xE1 <= b <= 0xEC or 0xEE <= b <= 0xEF:
        return ("str", UTF8, 2, 0x80, 0xBF)
    if b == 0xED:
        return ("str", UTF8, 2, 0x80, 0x9F)
    if b == 0xF0:
        return ("str", UTF8, 3, 0x90, 0xBF)
    if 0xF1 <= b <= 0xF3:
        return ("str", UTF8, 3, 0x80, 0xBF)
    if b == 0xF4:
        return ("str", UTF8, 3, 0x80, 0x8F)
    return None


_BODY = ("str", BODY, 0, 0, 0)


class EnforcerConstraint:
    """Compiled JSON-schema format for the enforcer backend.

    Args:
        schema: JSON schema (subset) or an already normalized SchemaNode.
        vocab: vocabulary masks are computed over.
        memo_capacity: per-state mask memo entries; 0 disables it.
    """

    backend = "enforcer"

    def __init__(self, schema: Any, vocab: Vocabulary, memo_capacity: int | None = 1024) -> None:
        self.root = schema if isinstance(schema, SchemaNode) else normalize_schema(schema)
        self.vocab = vocab
        self.nodes: list[SchemaNode] = []
        self._key_literals: dict[tuple[int, int], bytes] = {}
        self._children: dict[int, tuple[int, ...]] = {}
        self._root_id = self._register(self.root)
        self.memo: LRUCache[TokenMask] = LRUCache(memo_capacity)
        self._terminal_mask = TokenMask.zeros(vocab.size)

    def _register(self, node: SchemaNode) -> int:
        nid = len(self.nodes)
        self.nodes.append(node)
        if node.kind == "object":
            child_ids = []
            for i, (_, sub) in enumerate(node.properties):
                self._key_literals[(nid, i)] = node.key_literal(i)
                child_ids.append(self._register(sub))
            self._children[nid] = tuple(child_ids)
        elif node.kind == "array":
            self._children[nid] = (self._register(node.items),)
        return nid

    def initial_state(self) -> "EnforcerState":
        return EnforcerState(self, (("value", self._root_id),))

    # -- byte transition -----------------------------------------------------

    def _start_value(self, nid: int, b: int) -> tuple | None:
        kind = self.nodes[nid].kind
        if kind == "string":
            return _BODY if b == 0x22 else None
        if kind == "number":
            if b == 0x2D:
                return ("num", "sign")
            if b == 0x30:
                return ("num", "zero")
            return ("num", "int") if b in _DIGITS else None
        if kind == "boolean":
            if b == 0x74:
                return ("lit", b"rue")
            return ("lit", b"alse") if b == 0x66 else None
        if kind == "object":
            return ("obj", nid, 0, OPEN) if b == 0x7B else None
        if kind == "array":
            return ("arr", nid, OPEN) if b == 0x5B else None
        return None

    def feed(self, frames: tuple, b: int) -> tuple | None:
        """Frames after byte ``b``, or None if no conforming document has this prefix."""
        while frames:
            top = frames[-1]
            rest = frames[:-1]
            tag = top[0]
            if tag == "str":
                ph = top[1]
                if ph == BODY:
                    if b == 0x22:
                        return rest
                    if b == 0x5C:
                        return rest + (("str", ESCAPE, 0, 0, 0),)
                    if 0x20 <= b <= 0x7F:
                        return frames
                    lead = _utf8_lead(b)
                    return None if lead is None else rest + (lead,)
                if ph == ESCAPE:
                    if b in (0x22, 0x5C, 0x6E, 0x74):
                        return rest + (_BODY,)
                    return rest + (("str", HEX, 4, 0, 0),) if b == 0x75 else None
                if ph == HEX:
                    if b not in _HEX:
                        return None
                    n = top[2] - 1
                    return rest + ((_BODY,) if n == 0 else (("str", HEX, n, 0, 0),))
                # UTF8 continuation
                if not top[3] <= b <= top[4]:
                    return None
                n = top[2] - 1
                return rest + ((_BODY,) if n == 0 else (("str", UTF8, n, 0x80, 0xBF),))
            if tag == "num":
                nxt = _num_next(top[1], b)
                if nxt is not None:
                    return rest + (("num", nxt),)
                if top[1] in _NUM_COMPLETE and rest:
                    frames = rest  # number ended; the byte belongs to the parent
                    continue
                return None
            if tag == "lit":
                tail = top[1]
                if b != tail[0]:
                    return None
                return rest if len(tail) == 1 else rest + (("lit", tail[1:]),)
            if tag == "key":
                literal, k = top[1], top[2]
                if b != literal[k]:
                    return None
                return rest if k + 1 == len(literal) else rest + (("key", literal, k + 1),)
            if tag == "value":
                child = self._start_value(top[1], b)
                return None if child is None else rest + (child,)
            if tag == "obj":
                return self._feed_obj(top, rest, b)
            if tag == "arr":
                return self._feed_arr(top, rest, b)
            raise AssertionError(f"unknown frame {top!r}")
        return None

    def _feed_obj(self, top: tuple, rest: tuple, b: int) -> tuple | None:
        _, nid, i, ph = top
        if b in _WS:
            return rest + (top,)
        nprops = len(self.nodes[nid].properties)
        if ph == OPEN or ph == AFTER_COMMA:
            if nprops == 0 and ph == OPEN:
                return rest if b == 0x7D else None
            if b != 0x22:
                return None
            return rest + (("obj", nid, i, COLON), ("key", self._key_literals[(nid, i)], 1))
        if ph == COLON:
            return rest + (("obj", nid, i, AFTER_COLON),) if b == 0x3A else None
        if ph == AFTER_COLON:
            child = self._start_value(self._children[nid][i], b)
            if child is None:
                return None
            return rest + (("obj", nid, i, AFTER_VALUE), child)
        # AFTER_VALUE
        if b == 0x2C and i + 1 < nprops:
            return rest + (("obj", nid, i + 1, AFTER_COMMA),)
        if b == 0x7D and i + 1 == nprops:
            return rest
        return None

    def _feed_arr(self, top: tuple, rest: tuple, b: int) -> tuple | None:
        _, nid, ph = top
        if b in _WS:
            return rest + (top,)
        if ph == AFTER_VALUE:
            if b == 0x2C:
                return rest + (("arr", nid, AFTER_COMMA),)
            return rest if b == 0x5D else None
        if ph == OPEN and b == 0x5D:
            return rest
        child = self._start_value(self._children[nid][0], b)
        if child is None:
            return None
        return rest + (("arr", nid, AFTER_VALUE), child)

    @staticmethod
    def frames_done(frames: tuple) -> bool:
        if not frames:
            return True
        return len(frames) == 1 and frames[0][0] == "num" and frames[0][1] in _NUM_COMPLETE

    # -- masks -----------------------------------------------------------------

    def mask(self, state: "EnforcerState") -> TokenMask:
        if state.terminated:
            return self._terminal_mask
        frames = state.frames
        if self.memo.capacity != 0:
            hit = self.memo.get(frames)
            if hit is not None:
                return hit
        vocab = self.vocab
        trie = vocab.trie
        bits = np.zeros(vocab.size, dtype=bool)
        stack = [(0, frames)]
        while stack:
            node, fr = stack.pop()
            for byte, child in trie.children[node].items():
                nxt = self.feed(fr, byte)
                if nxt is None:
                    continue
                ends = trie.ends[child]
                if ends:
                    bits[list(ends)] = True
                stack.append((child, nxt))
        bits[vocab.eos_id] = self.frames_done(frames)
        mask = TokenMask._wrap(bits)
        self.memo.put(frames, mask)
        return mask


class EnforcerState:
    """Immutable parser position; ``terminated`` after EOS was consumed."""

    __slots__ = ("constraint", "frames", "terminated")

    def __init__(self, constraint: EnforcerConstraint, frames: tuple,
                 terminated: bool = False) -> None:
        self.constraint = constraint
        self.frames = frames
        self.terminated = terminated

    @property
    def done(self) -> bool:
        """A complete document has been read; only EOS is allowed (besides number digits)."""
        return not self.terminated and EnforcerConstraint.frames_done(self.frames)

    @property
    def can_end(self) -> bool:
        return self.done

    @property
    def is_complete(self) -> bool:
        return self.terminated

    def allowed_mask(self) -> TokenMask:
        return self.constraint.mask(self)

    def advance_byte(self, byte: int) -> "EnforcerState | None":
        if self.terminated:
            return None
        nxt = self.constraint.feed(self.frames, byte)
        return None if nxt is None else EnforcerState(self.constraint, nxt)

    def advance(self, token_id: int) -> "EnforcerState":
        c = self.constraint
        if self.terminated:
            raise IllegalToken(token_id, "document already terminated")
        if not 0 <= token_id < c.vocab.size:
            raise IllegalToken(token_id, "out of range")
        if token_id == c.vocab.eos_id:
            if not self.done:
                raise IllegalToken(token_id, "document incomplete")
            return EnforcerState(c, (), terminated=True)
        data = c.vocab.tokens[token_id]
        if not data:
            raise IllegalToken(token_id, "empty token")
        frames = self.frames
        for b in data:
            frames = c.feed(frames, b)
            if frames is None:
                raise IllegalToken(token_id)
        return EnforcerState(c, frames)

    def branch(self) -> "EnforcerState":
        return EnforcerState(self.constraint, self.frames, self.terminated)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, EnforcerState)
            and other.constraint is self.constraint
            and other.frames == self.frames
            and other.terminated == self.terminated
        )

    def __hash__(self) -> int:
        return hash((self.frames, self.terminated))

    def __repr__(self) -> str:
        return f"EnforcerState({self.frames!r})"


REJECT = None


def char_advance(state: EnforcerState, byte: int) -> EnforcerState | None:
    """Next state after ``byte``, or ``REJECT`` (None)."""
    return state.advance_byte(byte)


def enforcer_mask(state: EnforcerState) -> TokenMask:
    return state.allowed_mask()
