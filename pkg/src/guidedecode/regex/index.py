"""State-to-token index over a byte DFA, and the FSM constraint backend.

The index is built once per (automaton, vocabulary) pair by walking the
vocabulary trie from every state. Afterwards the allowed-token mask for a
state is a single list lookup.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import IllegalToken, ParseError
from ..vocab import TokenMask, Vocabulary
from .automaton import DEAD, Fsm

INDEX_FORMAT = "guidedecode-fsm-index"
INDEX_VERSION = 1


def _survivors(fsm: Fsm, state: int, vocab: Vocabulary) -> np.ndarray:
    trie = vocab.trie
    table = fsm.table
    bits = np.zeros(vocab.size, dtype=bool)
    stack = [(0, state)]
    while stack:
        node, q = stack.pop()
        ends = trie.ends[node]
        if ends:
            bits[list(ends)] = True
        row = table[q]
        for byte, child in trie.children[node].items():
            nxt = row[byte]
            if nxt != DEAD:
                stack.append((child, nxt))
    return bits


@dataclass(frozen=True)
class FsmIndex:
    """``masks[q]`` is the allowed-token mask at state ``q`` (EOS included iff accepting)."""

    masks: tuple[TokenMask, ...]
    eos_states: frozenset[int]
    dead_tokens: tuple[int, ...]

    @property
    def mask_by_state(self) -> dict[int, TokenMask]:
        return dict(enumerate(self.masks))

    def mask(self, state: int) -> TokenMask:
        return self.masks[state]


def build_index(fsm: Fsm, vocab: Vocabulary) -> FsmIndex:
    """Precompute the allowed-token mask of every state.

    A token is allowed at ``q`` iff walking its bytes from ``q`` never dies;
    the walk may end in a non-accepting state. EOS is allowed iff ``q`` is
    accepting. Empty tokens are never allowed.
    """
    masks = []
    ever = np.zeros(vocab.size, dtype=bool)
    for q in range(fsm.num_states):
        bits = _survivors(fsm, q, vocab)
        ever |= bits
        bits[vocab.eos_id] = q in fsm.accepting
        masks.append(TokenMask._wrap(bits))
    ever[vocab.eos_id] = True
    return FsmIndex(
        masks=tuple(masks),
        eos_states=frozenset(fsm.accepting),
        dead_tokens=tuple(np.flatnonzero(~ever).tolist()),
    )


class FsmConstraint:
    """Regex constraint: a byte DFA plus its precomputed token index."""

    backend = "fsm"

    def __init__(self, fsm: Fsm, vocab: Vocabulary, index: FsmIndex | None = None,
                 pattern: str | None = None) -> None:
        self.fsm = fsm
        self.vocab = vocab
        self.index = index if index is not None else build_index(fsm, vocab)
        self.pattern = pattern
        self._done_mask = TokenMask.zeros(vocab.size)

    @classmethod
    def from_regex(cls, pattern: str, vocab: Vocabulary) -> "FsmConstraint":
        from .automaton import compile_regex

        return cls(compile_regex(pattern), vocab, pattern=pattern)

    def initial_state(self) -> "FsmState":
        return FsmState(self, self.fsm.start)


class FsmState:
    """Immutable decoding position in a :class:`FsmConstraint`.

    ``state == -1`` is the terminal state reached by consuming EOS.
    """

    __slots__ = ("constraint", "state")

    def __init__(self, constraint: FsmConstraint, state: int) -> None:
        self.constraint = constraint
        self.state = state

    @property
    def is_complete(self) -> bool:
        return self.state == DEAD

    @property
    def can_end(self) -> bool:
        return self.state in self.constraint.fsm.accepting

    def allowed_mask(self) -> TokenMask:
        if self.state == DEAD:
            return self.constraint._done_mask
        return self.constraint.index.masks[self.state]

    def advance(self, token_id: int) -> "FsmState":
        c = self.constraint
        if self.state == DEAD:
            raise IllegalToken(token_id, "constraint already complete")
        if not (0 <= token_id < c.vocab.size) or not c.index.masks[self.state].bits[token_id]:
            raise IllegalToken(token_id)
        if token_id == c.vocab.eos_id:
            return FsmState(c, DEAD)
        return FsmState(c, c.fsm.walk(c.vocab.tokens[token_id], self.state))

    def branch(self) -> "FsmState":
        return FsmState(self.constraint, self.state)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, FsmState)
            and other.constraint is self.constraint
            and other.state == self.state
        )

    def __hash__(self) -> int:
        return hash((id(self.constraint), self.state))

    def __repr__(self) -> str:
        return f"FsmState({self.state})"


def fsm_advance(state: FsmState, token_id: int) -> FsmState:
    return state.advance(token_id)


def save_index(constraint: FsmConstraint, path: str | Path) -> None:
    fsm = constraint.fsm
    doc = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "pattern": constraint.pattern,
        "vocab_size": constraint.vocab.size,
        "eos_id": constraint.vocab.eos_id,
        "start": fsm.start,
        "accepting": sorted(fsm.accepting),
        "transitions": [
            {str(b): t for b, t in enumerate(row) if t != DEAD} for row in fsm.table
        ],
        "masks": [base64.b64encode(m.packed()).decode("ascii") for m in constraint.index.masks],
        "dead_tokens": list(constraint.index.dead_tokens),
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_index(path: str | Path, vocab: Vocabulary) -> FsmConstraint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if doc.get("format") != INDEX_FORMAT or doc.get("version") != INDEX_VERSION:
        raise ParseError(f"{path}: not a version-{INDEX_VERSION} FSM index")
    if doc["vocab_size"] != vocab.size or doc["eos_id"] != vocab.eos_id:
        raise ParseError(f"{path}: index was built for a different vocabulary")
    table = []
    for row in doc["transitions"]:
        full = [DEAD] * 256
        for b, t in row.items():
            full[int(b)] = t
        table.append(tuple(full))
    fsm = Fsm(table=tuple(table), start=doc["start"], accepting=frozenset(doc["accepting"]))
    masks = tuple(
        TokenMask.from_packed(vocab.size, base64.b64decode(m)) for m in doc["masks"]
    )
    index = FsmIndex(masks=masks, eos_states=fsm.accepting,
                     dead_tokens=tuple(doc["dead_tokens"]))
    return FsmConstraint(fsm, vocab, index=index, pattern=doc.get("pattern"))
