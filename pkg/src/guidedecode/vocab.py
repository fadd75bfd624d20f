"""Tokenizer vocabulary and token masks.

A :class:`Vocabulary` is an ordered list of byte-strings (index = token id)
with a designated end-of-sequence id. Every backend masks over it at byte
granularity, so tokens need not be valid UTF-8.

The on-disk format is JSON::

    {"eos_id": 2, "tokens": ["a", "b", "</s>", {"b64": "4g=="}]}

Plain strings are UTF-8; ``{"b64": ...}`` entries carry arbitrary bytes.
"""

from __future__ import annotations

import base64
import json
import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import LengthMismatch, ParseError, ValidationError


class TokenMask:
    """Fixed-width, immutable bit vector over token ids."""

    __slots__ = ("_bits",)

    def __init__(self, bits: np.ndarray) -> None:
        arr = np.array(bits, dtype=bool, copy=True)
        if arr.ndim != 1:
            raise ValueError("TokenMask bits must be one-dimensional")
        arr.flags.writeable = False
        self._bits = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "TokenMask":
        # Takes ownership of a freshly built array without copying.
        mask = cls.__new__(cls)
        arr.flags.writeable = False
        mask._bits = arr
        return mask

    @classmethod
    def zeros(cls, size: int) -> "TokenMask":
        return cls._wrap(np.zeros(size, dtype=bool))

    @classmethod
    def ones(cls, size: int) -> "TokenMask":
        return cls._wrap(np.ones(size, dtype=bool))

    @classmethod
    def from_ids(cls, size: int, ids: Iterable[int]) -> "TokenMask":
        arr = np.zeros(size, dtype=bool)
        idx = list(ids)
        if idx:
            arr[idx] = True
        return cls._wrap(arr)

    @classmethod
    def from_string(cls, bits: str) -> "TokenMask":
        """Build from a ``"1101"`` literal; character i is token i."""
        return cls._wrap(np.array([c == "1" for c in bits], dtype=bool))

    @classmethod
    def from_packed(cls, size: int, data: bytes) -> "TokenMask":
        raw = np.frombuffer(data, dtype=np.uint8)
        return cls._wrap(np.unpackbits(raw, bitorder="little")[:size].astype(bool))

    @property
    def bits(self) -> np.ndarray:
        """Read-only boolean view."""
        return self._bits

    @property
    def size(self) -> int:
        return int(self._bits.shape[0])

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token_id: int) -> bool:
        return 0 <= token_id < self.size and bool(self._bits[token_id])

    def popcount(self) -> int:
        return int(np.count_nonzero(self._bits))

    def allowed_ids(self) -> list[int]:
        return np.flatnonzero(self._bits).tolist()

    def packed(self) -> bytes:
        return np.packbits(self._bits, bitorder="little").tobytes()

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self._bits)

    def _check(self, other: "TokenMask") -> None:
        if self.size != other.size:
            raise LengthMismatch(f"mask widths differ: {self.size} vs {other.size}")

    def __and__(self, other: "TokenMask") -> "TokenMask":
        self._check(other)
        return TokenMask._wrap(self._bits & other._bits)

    def __or__(self, other: "TokenMask") -> "TokenMask":
        self._check(other)
        return TokenMask._wrap(self._bits | other._bits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenMask):
            return NotImplemented
        return self.size == other.size and bool(np.array_equal(self._bits, other._bits))

    def __hash__(self) -> int:
        return hash((self.size, self.packed()))

    def __repr__(self) -> str:
        if self.size <= 64:
            return f"TokenMask({self.to_string()!r})"
        return f"TokenMask(size={self.size}, popcount={self.popcount()})"


def mask_and(a: TokenMask, b: TokenMask) -> TokenMask:
    """Bitwise intersection; raises LengthMismatch on differing widths."""
    return a & b


@dataclass(frozen=True)
class VocabTrie:
    """Prefix tree over the non-EOS, non-empty tokens.

    Tokens are sorted by their bytes, so the tokens below any node occupy
    the contiguous slice ``order[span[node][0]:span[node][1]]``.
    """

    children: list[dict[int, int]]
    ends: list[tuple[int, ...]]
    span: list[tuple[int, int]]
    order: np.ndarray

    def subtree_ids(self, node: int) -> np.ndarray:
        lo, hi = self.span[node]
        return self.order[lo:hi]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[bytes, ...]
    eos_id: int
    _index: dict[bytes, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        tokens = tuple(bytes(t) for t in self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if not tokens:
            raise ValidationError("vocabulary is empty")
        if not (0 <= self.eos_id < len(tokens)):
            raise ValidationError(
                f"eos_id {self.eos_id} out of range for {len(tokens)} tokens"
            )
        if not any(t for i, t in enumerate(tokens) if i != self.eos_id):
            raise ValidationError("vocabulary has no non-empty token")
        index: dict[bytes, int] = {}
        for i, t in enumerate(tokens):
            if i != self.eos_id:
                index.setdefault(t, i)
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token_id: int) -> bytes:
        return self.tokens[token_id]

    def token_id(self, token: bytes | str) -> int:
        """Id of the first non-EOS token with these bytes."""
        if isinstance(token, str):
            token = token.encode("utf-8")
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> bytes:
        return b"".join(self.tokens[i] for i in ids if i != self.eos_id)

    @cached_property
    def trie(self) -> VocabTrie:
        ids = [i for i, t in enumerate(self.tokens) if t and i != self.eos_id]
        ids.sort(key=lambda i: (self.tokens[i], i))
        children: list[dict[int, int]] = [{}]
        ends: list[list[int]] = [[]]
        span: list[list[int]] = [[0, 0]]
        for pos, tid in enumerate(ids):
            node = 0
            span[0][1] = pos + 1
            for byte in self.tokens[tid]:
                nxt = children[node].get(byte)
                if nxt is None:
                    nxt = len(children)
                    children[node][byte] = nxt
                    children.append({})
                    ends.append([])
                    span.append([pos, pos])
                node = nxt
                span[node][1] = pos + 1
            ends[node].append(tid)
        return VocabTrie(
            children=children,
            ends=[tuple(e) for e in ends],
            span=[(lo, hi) for lo, hi in span],
            order=np.array(ids, dtype=np.int64),
        )

    @cached_property
    def max_token_len(self) -> int:
        return max(len(t) for i, t in enumerate(self.tokens) if i != self.eos_id)

    def greedy_tokenize(self, data: bytes | str) -> list[int]:
        """Longest-match tokenization; not BPE, only for scripting mock sources.

        Raises ValueError when some byte cannot be covered by any token.
        """
        if isinstance(data, str):
            data = data.encode("utf-8")
        out: list[int] = []
        pos = 0
        limit = self.max_token_len
        while pos < len(data):
            for length in range(min(limit, len(data) - pos), 0, -1):
                tid = self._index.get(data[pos : pos + length])
                if tid is not None:
                    out.append(tid)
                    pos += length
                    break
            else:
                raise ValueError(f"byte {data[pos:pos + 1]!r} at {pos} has no token")
        return out


def _decode_entry(entry: object, i: int) -> bytes:
    if isinstance(entry, str):
        return entry.encode("utf-8")
    if isinstance(entry, dict) and set(entry) == {"b64"} and isinstance(entry["b64"], str):
        try:
            return base64.b64decode(entry["b64"], validate=True)
        except ValueError as exc:
            raise ParseError(f"token {i}: bad base64: {exc}") from None
    raise ParseError(f"token {i}: expected a string or {{'b64': ...}}, got {entry!r}")


def _encode_entry(token: bytes) -> object:
    try:
        text = token.decode("utf-8")
    except UnicodeDecodeError:
        return {"b64": base64.b64encode(token).decode("ascii")}
    return text


def vocabulary_from_json(obj: object) -> Vocabulary:
    if not isinstance(obj, dict):
        raise ParseError("vocabulary file must hold a JSON object")
    if "tokens" not in obj or "eos_id" not in obj:
        raise ParseError("vocabulary needs 'tokens' and 'eos_id'")
    tokens = obj["tokens"]
    eos_id = obj["eos_id"]
    if not isinstance(eos_id, int) or isinstance(eos_id, bool):
        raise ParseError("eos_id must be an integer")
    if isinstance(tokens, dict):
        # {"id": token} form; ids must be dense and unique
        try:
            pairs = sorted((int(k), v) for k, v in tokens.items())
        except ValueError:
            raise ParseError("token ids must be integers") from None
        ids = [k for k, _ in pairs]
        if ids != list(range(len(ids))):
            raise ValidationError("token ids are not dense 0..n-1")
        tokens = [v for _, v in pairs]
    if not isinstance(tokens, list):
        raise ParseError("'tokens' must be a list")
    return Vocabulary(tuple(_decode_entry(t, i) for i, t in enumerate(tokens)), eos_id)


def load_vocabulary(path: str | Path) -> Vocabulary:
    """Load a vocabulary file.

    A JSON object key appearing twice (e.g. a duplicated id in the ``{"id":
    token}`` form) is rejected as a ParseError.
    """

    def no_dupes(pairs: list[tuple[str, object]]) -> dict[str, object]:
        keys = [k for k, _ in pairs]
        if len(keys) != len(set(keys)):
            raise ParseError(f"duplicate keys in vocabulary file: {keys}")
        return dict(pairs)

    try:
        text = Path(path).read_text(encoding="utf-8")
        obj = json.loads(text, object_pairs_hook=no_dupes)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return vocabulary_from_json(obj)


def vocabulary_to_json(vocab: Vocabulary) -> dict:
    return {"eos_id": vocab.eos_id, "tokens": [_encode_entry(t) for t in vocab.tokens]}


def write_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(vocabulary_to_json(vocab), ensure_ascii=False, indent=0) + "\n",
        encoding="utf-8",
    )


EOS_TEXT = b"</s>"

_JSON_PIECES = [
    '{"', '"}', '":', '":"', '","', '",', '["', '"]', ',"', '", "', '": ', '": "',
    "true", "false", "null", "doc", "_id", "(doc_id)", "(/doc_id)", "<doc_id>",
    "</doc_id>", "response", "document_ids", "page", "_page_", "DOR", "344",
    ".0321", "2021", " the", " of", " and", "ok", "\\n", "\\u00", "00", "10",
]


def byte_level_vocabulary(extra: Iterable[str | bytes] = _JSON_PIECES) -> Vocabulary:
    """All 256 single bytes, a few multi-byte pieces, then EOS.

    Any byte string has a tokenization in this vocabulary, which makes it the
    default for scripted mock decoding.
    """
    tokens: list[bytes] = [bytes([b]) for b in range(256)]
    seen = set(tokens)
    for piece in extra:
        t = piece.encode("utf-8") if isinstance(piece, str) else bytes(piece)
        if t not in seen:
            seen.add(t)
            tokens.append(t)
    tokens.append(EOS_TEXT)
    return Vocabulary(tuple(tokens), len(tokens) - 1)


def synthetic_vocabulary(
    size: int,
    alphabet: bytes | str,
    seed: int = 0,
    max_len: int = 4,
    include_singles: bool = True,
    extra: Iterable[bytes | str] = (),
) -> Vocabulary:
    """Random vocabulary of ``size`` tokens (EOS included, last id).

    Tokens are drawn from ``alphabet``; with ``include_singles`` every
    alphabet byte is its own token so every string over it is tokenizable.
    """
    if isinstance(alphabet, str):
        alphabet = alphabet.encode("utf-8")
    rng = random.Random(seed)
    tokens: list[bytes] = []
    seen: set[bytes] = set()

    def add(tok: bytes) -> None:
        if tok and tok not in seen and tok != EOS_TEXT:
            seen.add(tok)
            tokens.append(tok)

    for e in extra:
        add(e.encode("utf-8") if isinstance(e, str) else bytes(e))
    if include_singles:
        for b in sorted(set(alphabet)):
            add(bytes([b]))
    if len(tokens) > size - 1:
        raise ValueError(f"size {size} too small for {len(tokens)} required tokens")
    attempts = 0
    while len(tokens) < size - 1:
        attempts += 1
        if attempts > 1000 * size:
            raise ValueError("alphabet too small to draw enough distinct tokens")
        n = rng.randint(2, max_len)
        add(bytes(rng.choice(alphabet) for _ in range(n)))
    order = list(range(len(tokens)))
    rng.shuffle(order)
    tokens = [tokens[i] for i in order] + [EOS_TEXT]
    return Vocabulary(tuple(tokens), len(tokens) - 1)
