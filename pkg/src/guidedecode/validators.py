"""Post-hoc checkers that do not share code paths with the backends.

* regexes are checked with Python's :mod:`re` on the decoded text;
* schemas with :mod:`json` plus :mod:`jsonschema`;
* grammars with :class:`GrammarRecognizer`, a deliberately plain simulator
  over the *un-inlined* grammar using tuple stacks and no classification,
  caching or vocabulary trie. It doubles as the brute-force mask oracle.
"""

from __future__ import annotations

import copy
import json
import re
from typing import Any, Callable

import jsonschema

from .cfg.grammar import Grammar, Ref
from .regex import DEAD
from .vocab import TokenMask, Vocabulary

Validator = Callable[[bytes], bool]


def regex_validator(pattern: str) -> Validator:
    compiled = re.compile(pattern, re.ASCII)

    def check(data: bytes) -> bool:
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError:
            return False
        return compiled.fullmatch(text) is not None

    return check


def _strict(schema: Any) -> Any:
    """Copy of ``schema`` with additionalProperties disabled on every object."""
    schema = copy.deepcopy(schema)

    def walk(node: Any) -> None:
        if isinstance(node, dict):
            if node.get("type") == "object":
                node.setdefault("additionalProperties", False)
            for value in node.get("properties", {}).values():
                walk(value)
            if "items" in node:
                walk(node["items"])

    walk(schema)
    return schema


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-standard JSON constant {name}")


def schema_validator(schema: dict) -> Validator:
    strict = _strict(schema)
    validator = jsonschema.Draft202012Validator(strict)

    def check(data: bytes) -> bool:
        try:
            doc = json.loads(data.decode("utf-8"), parse_constant=_reject_constant)
        except (UnicodeDecodeError, ValueError):
            return False
        return validator.is_valid(doc)

    return check


class GrammarRecognizer:
    """Byte-level recognizer for a :class:`Grammar`.

    A configuration is ``(rule, alt, dot, terminal_state, stack)`` where the
    stack is a plain tuple of return positions.
    """

    def __init__(self, grammar: Grammar) -> None:
        self.rules = grammar.rules
        self.fsms = {name: t.fsm for name, t in grammar.terminals.items()}
        self.start = grammar.start

    def _predict(self, rule: str, alt: int, dot: int, stack: tuple,
                 out: set, seen: set) -> bool:
        key = (rule, alt, dot, stack)
        if key in seen:
            return False
        seen.add(key)
        syms = self.rules[rule][alt]
        if dot == len(syms):
            if not stack:
                return True
            r2, a2, d2 = stack[-1]
            return self._predict(r2, a2, d2, stack[:-1], out, seen)
        sym = syms[dot]
        if isinstance(sym, Ref):
            accept = False
            ret = stack + ((rule, alt, dot + 1),)
            for k in range(len(self.rules[sym.name])):
                accept |= self._predict(sym.name, k, 0, ret, out, seen)
            return accept
        fsm = self.fsms[sym.name]
        out.add((rule, alt, dot, fsm.start, stack))
        if fsm.start in fsm.accepting:
            return self._predict(rule, alt, dot + 1, stack, out, seen)
        return False

    def initial(self) -> tuple[frozenset, bool]:
        out: set = set()
        seen: set = set()
        accept = False
        for k in range(len(self.rules[self.start])):
            accept |= self._predict(self.start, k, 0, (), out, seen)
        return frozenset(out), accept

    def step(self, configs: frozenset, byte: int) -> tuple[frozenset, bool]:
        out: set = set()
        seen: set = set()
        accept = False
        for rule, alt, dot, q, stack in configs:
            fsm = self.fsms[self.rules[rule][alt][dot].name]
            nq = fsm.table[q][byte]
            if nq == DEAD:
                continue
            out.add((rule, alt, dot, nq, stack))
            if nq in fsm.accepting:
                accept |= self._predict(rule, alt, dot + 1, stack, out, seen)
        return frozenset(out), accept

    def run(self, data: bytes, start: tuple[frozenset, bool] | None = None):
        configs, accept = start if start is not None else self.initial()
        for b in data:
            if not configs:
                return None
            configs, accept = self.step(configs, b)
        if not configs and not accept:
            return None
        return configs, accept

    def is_prefix(self, data: bytes) -> bool:
        return self.run(data) is not None

    def accepts(self, data: bytes) -> bool:
        res = self.run(data)
        return res is not None and res[1]

    def __call__(self, data: bytes) -> bool:
        return self.accepts(data)

    def mask_after(self, prefix: bytes, vocab: Vocabulary) -> TokenMask:
        """Brute-force mask: simulate every token's bytes after ``prefix``."""
        state = self.run(prefix)
        ids = []
        if state is not None:
            for tid, tok in enumerate(vocab.tokens):
                if tid == vocab.eos_id or not tok:
                    continue
                if self.run(tok, state) is not None:
                    ids.append(tid)
            if state[1]:
                ids.append(vocab.eos_id)
        return TokenMask.from_ids(vocab.size, ids)


def prefix_fold_mask(advance_byte: Callable[[Any, int], Any], state: Any, done: bool,
                     vocab: Vocabulary) -> TokenMask:
    """Brute-force mask by folding a byte-transition function over each token."""
    ids = []
    for tid, tok in enumerate(vocab.tokens):
        if tid == vocab.eos_id or not tok:
            continue
        cur = state
        for b in tok:
            cur = advance_byte(cur, b)
            if cur is None:
                break
        else:
            ids.append(tid)
    if done:
        ids.append(vocab.eos_id)
    return TokenMask.from_ids(vocab.size, ids)
