"""Byte-level automata: Thompson NFA, subset construction, pruning, minimization."""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass, field
from typing import Iterator

from ..errors import UnsupportedFeature
from .parse import Alt, CharSet, Concat, Node, Ranges, Repeat, parse_regex

DEAD = -1
MAX_NFA_STATES = 200_000


def utf8_sequences(lo: int, hi: int) -> list[list[tuple[int, int]]]:
    """Split the code point range [lo, hi] into UTF-8 byte-range sequences.

    Each returned sequence is a list of inclusive byte ranges; the union of
    the sequences' languages is exactly the UTF-8 encodings of the range,
    surrogates excluded.
    """
    out: list[list[tuple[int, int]]] = []
    todo = [(lo, hi)]
    while todo:
        s, e = todo.pop()
        if s > e:
            continue
        if s <= 0xDFFF and e >= 0xD800:
            todo.append((s, 0xD7FF))
            todo.append((0xE000, e))
            continue
        for boundary in (0x7F, 0x7FF, 0xFFFF):
            if s <= boundary < e:
                todo.append((s, boundary))
                todo.append((boundary + 1, e))
                break
        else:
            if e <= 0x7F:
                out.append([(s, e)])
                continue
            n = len(chr(s).encode("utf-8"))
            split = False
            for i in range(1, n):
                m = (1 << (6 * i)) - 1
                if s & ~m != e & ~m:
                    if s & m != 0:
                        todo.append((s, s | m))
                        todo.append(((s | m) + 1, e))
                        split = True
                        break
                    if e & m != m:
                        todo.append((s, (e & ~m) - 1))
                        todo.append((e & ~m, e))
                        split = True
                        break
            if split:
                continue
            bs = chr(s).encode("utf-8")
            be = chr(e).encode("utf-8")
            out.append(list(zip(bs, be)))
    return out


@dataclass
class Nfa:
    edges: list[list[tuple[int, int, int]]] = field(default_factory=list)
    eps: list[list[int]] = field(default_factory=list)

    def new(self) -> int:
        if len(self.edges) >= MAX_NFA_STATES:
            raise UnsupportedFeature("pattern expands to too many automaton states")
        self.edges.append([])
        self.eps.append([])
        return len(self.edges) - 1

    def closure(self, states: frozenset[int] | set[int]) -> frozenset[int]:
        seen = set(states)
        stack = list(states)
        while stack:
            s = stack.pop()
            for t in self.eps[s]:
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return frozenset(seen)


def _charset(nfa: Nfa, ranges: Ranges) -> tuple[int, int]:
    start, end = nfa.new(), nfa.new()
    for lo, hi in ranges:
        for seq in utf8_sequences(lo, hi):
            cur = start
            for k, (blo, bhi) in enumerate(seq):
                nxt = end if k == len(seq) - 1 else nfa.new()
                nfa.edges[cur].append((blo, bhi, nxt))
                cur = nxt
    return start, end


def _build(nfa: Nfa, node: Node) -> tuple[int, int]:
    if isinstance(node, CharSet):
        return _charset(nfa, node.ranges)
    if isinstance(node, Concat):
        start = cur = nfa.new()
        for item in node.items:
            s, e = _build(nfa, item)
            nfa.eps[cur].append(s)
            cur = e
        return start, cur
    if isinstance(node, Alt):
        start, end = nfa.new(), nfa.new()
        for opt in node.options:
            s, e = _build(nfa, opt)
            nfa.eps[start].append(s)
            nfa.eps[e].append(end)
        return start, end
    if isinstance(node, Repeat):
        start = cur = nfa.new()
        for _ in range(node.min):
            s, e = _build(nfa, node.item)
            nfa.eps[cur].append(s)
            cur = e
        if node.max is None:
            s, e = _build(nfa, node.item)
            nfa.eps[cur].append(s)
            nfa.eps[e].append(s)
            end = nfa.new()
            nfa.eps[cur].append(end)
            nfa.eps[e].append(end)
            return start, end
        end = nfa.new()
        for _ in range(node.max - node.min):
            s, e = _build(nfa, node.item)
            nfa.eps[cur].append(s)
            nfa.eps[cur].append(end)
            cur = e
        nfa.eps[cur].append(end)
        return start, end
    raise TypeError(f"unknown regex node {node!r}")


@dataclass(frozen=True)
class Fsm:
    """Deterministic byte automaton.

    ``table[q][b]`` is the successor of state ``q`` on byte ``b``, or ``-1``.
    States are dense, all reachable from ``start`` and (except possibly a
    lone start state of an empty language) all able to reach acceptance.
    """

    table: tuple[tuple[int, ...], ...]
    start: int
    accepting: frozenset[int]

    @property
    def num_states(self) -> int:
        return len(self.table)

    @property
    def transitions(self) -> dict[tuple[int, int], int]:
        return {
            (q, b): t
            for q, row in enumerate(self.table)
            for b, t in enumerate(row)
            if t != DEAD
        }

    def step(self, state: int, byte: int) -> int:
        return self.table[state][byte]

    def walk(self, data: bytes, state: int | None = None) -> int:
        """State after consuming ``data``, or -1 if the walk dies."""
        q = self.start if state is None else state
        table = self.table
        for b in data:
            q = table[q][b]
            if q < 0:
                return DEAD
        return q

    def accepts(self, data: bytes) -> bool:
        q = self.walk(data)
        return q != DEAD and q in self.accepting

    def is_empty(self) -> bool:
        return not self.accepting

    def live_bytes(self, state: int) -> Iterator[int]:
        row = self.table[state]
        return (b for b in range(256) if row[b] != DEAD)


def _determinize(nfa: Nfa, start: int, accept: int) -> tuple[list[list[int]], int, set[int]]:
    init = nfa.closure({start})
    ids: dict[frozenset[int], int] = {init: 0}
    sets = [init]
    table: list[list[int]] = []
    closures: dict[frozenset[int], frozenset[int]] = {}
    i = 0
    while i < len(sets):
        cur = sets[i]
        i += 1
        edges = [e for s in cur for e in nfa.edges[s]]
        row = [DEAD] * 256
        if edges:
            cuts = sorted({lo for lo, _, _ in edges} | {hi + 1 for _, hi, _ in edges})
            for a, b in zip(cuts, cuts[1:]):
                targets = frozenset(t for lo, hi, t in edges if lo <= a and b - 1 <= hi)
                if not targets:
                    continue
                nxt = closures.get(targets)
                if nxt is None:
                    nxt = closures[targets] = nfa.closure(targets)
                tid = ids.get(nxt)
                if tid is None:
                    tid = ids[nxt] = len(sets)
                    sets.append(nxt)
                for byte in range(a, b):
                    row[byte] = tid
        table.append(row)
    accepting = {k for k, s in enumerate(sets) if accept in s}
    return table, 0, accepting


def _prune(table: list[list[int]], start: int, accepting: set[int]) -> Fsm:
    n = len(table)
    rev: list[list[int]] = [[] for _ in range(n)]
    for q, row in enumerate(table):
        for t in set(row):
            if t != DEAD:
                rev[t].append(q)
    live = set(accepting)
    stack = list(accepting)
    while stack:
        q = stack.pop()
        for p in rev[q]:
            if p not in live:
                live.add(p)
                stack.append(p)
    if start not in live:
        return Fsm(table=((DEAD,) * 256,), start=0, accepting=frozenset())
    # renumber in BFS order from start, keeping only live states
    order = [start]
    remap = {start: 0}
    k = 0
    while k < len(order):
        q = order[k]
        k += 1
        for t in table[q]:
            if t != DEAD and t in live and t not in remap:
                remap[t] = len(order)
                order.append(t)
    new_table = tuple(
        tuple(remap[t] if t != DEAD and t in live else DEAD for t in table[q]) for q in order
    )
    return Fsm(
        table=new_table,
        start=0,
        accepting=frozenset(remap[q] for q in accepting if q in remap),
    )


def minimize(fsm: Fsm) -> Fsm:
    """Moore partition refinement; preserves the start-first BFS numbering."""
    n = fsm.num_states
    # DEAD transitions point at an extra sink row whose class is always -1
    table = np.array(fsm.table, dtype=np.int64).reshape(n, 256)
    table[table == DEAD] = n
    # bytes with identical columns behave the same everywhere; keep one of each
    table = np.unique(table, axis=1)
    cls = np.array([1 if q in fsm.accepting else 0 for q in range(n)], dtype=np.int64)
    num = len(set(cls.tolist()))
    while True:
        ext = np.append(cls, -1)
        sig = np.concatenate([cls[:, None], ext[table]], axis=1)
        ids: dict[tuple[int, ...], int] = {}
        cls = np.array([ids.setdefault(tuple(row), len(ids)) for row in sig.tolist()],
                       dtype=np.int64)
        if len(ids) == num:
            break
        num = len(ids)
    if num == n:
        return fsm
    cls = cls.tolist()
    # one representative per class, renumbered by BFS from start
    rep: dict[int, int] = {}
    for q in range(n):
        rep.setdefault(cls[q], q)
    remap = {cls[fsm.start]: 0}
    order = [cls[fsm.start]]
    k = 0
    while k < len(order):
        c = order[k]
        k += 1
        for t in fsm.table[rep[c]]:
            if t != DEAD and cls[t] not in remap:
                remap[cls[t]] = len(order)
                order.append(cls[t])
    table = tuple(
        tuple(remap[cls[t]] if t != DEAD else DEAD for t in fsm.table[rep[c]]) for c in order
    )
    accepting = frozenset(remap[cls[q]] for q in fsm.accepting)
    return Fsm(table=table, start=0, accepting=accepting)


def compile_node(node: Node, minimized: bool = True) -> Fsm:
    nfa = Nfa()
    start, accept = _build(nfa, node)
    table, s0, acc = _determinize(nfa, start, accept)
    fsm = _prune(table, s0, acc)
    return minimize(fsm) if minimized else fsm


def compile_regex(pattern: str, minimized: bool = True) -> Fsm:
    """Compile ``pattern`` to a pruned (and by default minimized) byte DFA.

    Raises:
        RegexSyntaxError: malformed pattern.
        UnsupportedFeature: backreferences, lookaround, lazy quantifiers, ...
    """
    return compile_node(parse_regex(pattern), minimized=minimized)


def literal_fsm(data: bytes) -> Fsm:
    """DFA accepting exactly ``data``."""
    n = len(data)
    table = []
    for i in range(n + 1):
        row = [DEAD] * 256
        if i < n:
            row[data[i]] = i + 1
        table.append(tuple(row))
    return Fsm(table=tuple(table), start=0, accepting=frozenset({n}))
