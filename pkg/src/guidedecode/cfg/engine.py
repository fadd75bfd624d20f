"""Pushdown-automaton token masking over a compiled grammar.

The grammar is flattened into *positions* ``(rule, alternative, dot)``. A
parser configuration is ``(position, terminal_state, stack)``: the position's
symbol is a terminal being matched, ``terminal_state`` is the state of that
terminal's byte DFA, and ``stack`` is a persistent stack of return positions.
A :class:`PdaState` holds the set of live configurations, which makes the
automaton nondeterministic but bounded by ``max_configs``.

Masks are computed in three layers:

1. Per (terminal, DFA state) *position*, tokens are pre-classified once:
   context-independent valid (the walk stays inside the terminal),
   context-independent invalid (the walk dies before the terminal could have
   ended), or context-dependent (the walk can leave the terminal, so validity
   depends on what the stack says comes next).
2. At runtime only context-dependent tokens are simulated against the real
   stack.
3. Whole masks are memoized in an LRU keyed by each configuration's position
   plus its top ``cache_stack_depth`` stack symbols. A mask is stored only
   when computing it read no deeper than that, so the cache never changes
   results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GrammarTooAmbiguous, IllegalToken
from ..regex import DEAD, Fsm
from ..vocab import TokenMask, Vocabulary
from .cache import LRUCache
from .grammar import Grammar, Ref, Term, inline_rules
from .stack import ROOT, ExecStack

Config = tuple[int, int, ExecStack]


@dataclass(frozen=True)
class TokenClasses:
    """Partition of the vocabulary at one automaton position."""

    ci_valid: TokenMask
    ci_invalid: TokenMask
    context_dependent: TokenMask
    cd_ids: np.ndarray


class _Probe:
    """Tracks how deep into a configuration's original stack a simulation read."""

    __slots__ = ("floor",)

    def __init__(self, depth: int) -> None:
        self.floor = depth


class PdaEngine:
    """Compiled grammar plus vocabulary classification and mask cache.

    Args:
        grammar: validated grammar.
        vocab: vocabulary masks are computed over.
        inline: apply :func:`inline_rules` before building positions.
        max_inline_refs: reference-count threshold for inlining.
        cache_capacity: mask-cache entries; ``None`` unbounded, ``0`` off.
        cache_stack_depth: stack symbols included in a cache key.
        max_configs: live-configuration bound before GrammarTooAmbiguous.
    """

    backend = "pda"

    def __init__(
        self,
        grammar: Grammar,
        vocab: Vocabulary,
        *,
        inline: bool = True,
        max_inline_refs: int = 4,
        cache_capacity: int | None = 4096,
        cache_stack_depth: int = 4,
        max_configs: int = 32,
    ) -> None:
        self.source_grammar = grammar
        self.grammar = inline_rules(grammar, max_inline_refs) if inline else grammar
        self.vocab = vocab
        self.max_configs = max_configs
        self.cache_stack_depth = cache_stack_depth
        self.cache: LRUCache[TokenMask] = LRUCache(cache_capacity)
        self._build_positions()
        self.classes = classify_tokens(self, vocab)
        self._done_mask = TokenMask.zeros(vocab.size)
        self._initial = self._make_initial()

    # -- construction ------------------------------------------------------

    def _build_positions(self) -> None:
        g = self.grammar
        term_names = sorted(g.terminals)
        term_ids = {n: i for i, n in enumerate(term_names)}
        self.terminals: list[Fsm] = [g.terminals[n].fsm for n in term_names]
        self.terminal_names = term_names
        rule_names = list(g.rules)
        rule_ids = {n: i for i, n in enumerate(rule_names)}
        self.rule_names = rule_names
        # pos_term[p] >= 0: terminal id; pos_rule_ref[p] >= 0: rule id; both -1: end
        self.pos_term: list[int] = []
        self.pos_ref: list[int] = []
        self.pos_owner: list[int] = []
        self.rule_starts: list[list[int]] = [[] for _ in rule_names]
        for r, name in enumerate(rule_names):
            for alt in g.rules[name]:
                self.rule_starts[r].append(len(self.pos_term))
                for sym in alt:
                    if isinstance(sym, Term):
                        self.pos_term.append(term_ids[sym.name])
                        self.pos_ref.append(-1)
                    else:
                        assert isinstance(sym, Ref)
                        self.pos_term.append(-1)
                        self.pos_ref.append(rule_ids[sym.name])
                    self.pos_owner.append(r)
                self.pos_term.append(-1)
                self.pos_ref.append(-1)
                self.pos_owner.append(r)
        self.start_rule = rule_ids[g.start]

    def _make_initial(self) -> "PdaState":
        configs: set[Config] = set()
        accept = False
        for sp in self.rule_starts[self.start_rule]:
            accept |= self._expand(sp, ROOT, configs, None)
        self._check_size(len(configs))
        return PdaState(self, frozenset(configs), accept)

    @property
    def num_positions(self) -> int:
        return len(self.pos_term)

    # -- core automaton ----------------------------------------------------

    def _check_size(self, n: int) -> None:
        if n > self.max_configs:
            raise GrammarTooAmbiguous(n, self.max_configs)

    def _expand(self, pos: int, stack: ExecStack, out: set[Config], probe: _Probe | None) -> bool:
        """Add every terminal configuration reachable from ``pos`` without input.

        Returns True if the start rule can complete (input may end here).
        """
        accept = False
        work = [(pos, stack)]
        seen: set[tuple[int, ExecStack]] = set()
        pos_term, pos_ref, terms = self.pos_term, self.pos_ref, self.terminals
        while work:
            item = work.pop()
            if item in seen:
                continue
            seen.add(item)
            p, st = item
            t = pos_term[p]
            if t >= 0:
                fsm = terms[t]
                out.add((p, fsm.start, st))
                if fsm.start in fsm.accepting:
                    work.append((p + 1, st))
                continue
            r = pos_ref[p]
            if r >= 0:
                child = st.push(p + 1)
                for sp in self.rule_starts[r]:
                    work.append((sp, child))
                continue
            # end of an alternative: return to the caller
            if st.parent is None:
                accept = True
                if probe is not None:
                    probe.floor = -1
            else:
                if probe is not None and st.depth - 1 < probe.floor:
                    probe.floor = st.depth - 1
                work.append((st.symbol, st.parent))
        return accept

    def _step(self, configs, byte: int, probe: _Probe | None) -> tuple[set[Config], bool]:
        out: set[Config] = set()
        accept = False
        terms, pos_term = self.terminals, self.pos_term
        for p, q, st in configs:
            fsm = terms[pos_term[p]]
            nq = fsm.table[q][byte]
            if nq == DEAD:
                continue
            out.add((p, nq, st))
            if nq in fsm.accepting:
                accept |= self._expand(p + 1, st, out, probe)
        self._check_size(len(out))
        return out, accept

    def run(self, configs, data: bytes, probe: _Probe | None = None):
        accept = False
        for b in data:
            configs, accept = self._step(configs, b, probe)
            if not configs and not accept:
                return None, False
        return configs, accept

    # -- masks -------------------------------------------------------------

    def initial_state(self) -> "PdaState":
        return self._initial

    def fingerprint(self, state: "PdaState") -> tuple:
        s = self.cache_stack_depth
        return (
            frozenset((p, q, st.top(s), st.depth <= s) for p, q, st in state.configs),
            state.can_end,
        )

    def pda_mask(self, state: "PdaState") -> TokenMask:
        if state.done:
            return self._done_mask
        key = None
        if self.cache.capacity != 0:
            key = self.fingerprint(state)
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        bits, max_read = self._compute_mask(state)
        mask = TokenMask._wrap(bits)
        if key is not None and max_read <= self.cache_stack_depth:
            self.cache.put(key, mask)
        return mask

    def _compute_mask(self, state: "PdaState") -> tuple[np.ndarray, int]:
        vocab = self.vocab
        bits = np.zeros(vocab.size, dtype=bool)
        pending: list[tuple[Config, np.ndarray]] = []
        for cfg in state.configs:
            cls = self.classes[(self.pos_term[cfg[0]], cfg[1])]
            bits |= cls.ci_valid.bits
            if cls.cd_ids.size:
                pending.append((cfg, cls.cd_ids))
        max_read = 0
        tokens = vocab.tokens
        for cfg, cd_ids in pending:
            probe = _Probe(cfg[2].depth)
            for tid in cd_ids.tolist():
                if bits[tid]:
                    continue
                configs, accept = self.run((cfg,), tokens[tid], probe)
                if configs or accept:
                    bits[tid] = True
            read = cfg[2].depth - probe.floor
            if read > max_read:
                max_read = read
        bits[vocab.eos_id] = state.can_end
        return bits, max_read


def classify_tokens(engine: PdaEngine, vocab: Vocabulary) -> dict[tuple[int, int], TokenClasses]:
    """Partition the vocabulary at every (terminal, DFA state) position.

    A token is context-independent valid if its bytes stay inside the
    terminal's DFA, context-independent invalid if the walk dies without the
    terminal having been complete at any earlier byte boundary or if it holds
    a byte no terminal consumes, and context-dependent otherwise. EOS and
    empty tokens are always invalid here; EOS is decided by the state's
    ``can_end``.
    """
    trie = vocab.trie
    # a byte no terminal ever consumes kills any token containing it, everywhere
    live = np.zeros(256, dtype=bool)
    for fsm in engine.terminals:
        for row in fsm.table:
            live |= np.asarray(row) != DEAD
    dead = np.array([not tok or not all(live[b] for b in tok) for tok in vocab.tokens])
    dead[vocab.eos_id] = True
    out: dict[tuple[int, int], TokenClasses] = {}
    for t, fsm in enumerate(engine.terminals):
        table, accepting = fsm.table, fsm.accepting
        for q in range(fsm.num_states):
            valid = np.zeros(vocab.size, dtype=bool)
            cd = np.zeros(vocab.size, dtype=bool)
            stack = [(0, q, q in accepting)]
            while stack:
                node, state, passed = stack.pop()
                row = table[state]
                for byte, child in trie.children[node].items():
                    nxt = row[byte]
                    if nxt == DEAD:
                        if passed:
                            cd[trie.subtree_ids(child)] = True
                        continue
                    ends = trie.ends[child]
                    if ends:
                        valid[list(ends)] = True
                    stack.append((child, nxt, passed or nxt in accepting))
            cd &= ~dead
            invalid = ~(valid | cd)
            out[(t, q)] = TokenClasses(
                ci_valid=TokenMask._wrap(valid),
                ci_invalid=TokenMask._wrap(invalid),
                context_dependent=TokenMask._wrap(cd),
                cd_ids=np.flatnonzero(cd),
            )
    return out


class PdaState:
    """Immutable set of live parser configurations.

    ``done`` marks the terminal state entered by consuming EOS.
    """

    __slots__ = ("engine", "configs", "can_end", "done")

    def __init__(self, engine: PdaEngine, configs: frozenset, can_end: bool,
                 done: bool = False) -> None:
        self.engine = engine
        self.configs = configs
        self.can_end = can_end
        self.done = done

    @property
    def is_complete(self) -> bool:
        return self.done

    def allowed_mask(self) -> TokenMask:
        return self.engine.pda_mask(self)

    def advance(self, token_id: int) -> "PdaState":
        engine = self.engine
        vocab = engine.vocab
        if self.done:
            raise IllegalToken(token_id, "grammar already complete")
        if not 0 <= token_id < vocab.size:
            raise IllegalToken(token_id, "out of range")
        if token_id == vocab.eos_id:
            if not self.can_end:
                raise IllegalToken(token_id, "input cannot end here")
            return PdaState(engine, frozenset(), True, done=True)
        data = vocab.tokens[token_id]
        if not data:
            raise IllegalToken(token_id, "empty token")
        configs, accept = engine.run(self.configs, data)
        if configs is None:
            raise IllegalToken(token_id)
        return PdaState(engine, frozenset(configs), accept)

    def advance_bytes(self, data: bytes) -> "PdaState | None":
        """Advance over raw bytes; None if they leave the language's prefixes."""
        if self.done:
            return None
        if not data:
            return self
        configs, accept = self.engine.run(self.configs, data)
        if configs is None:
            return None
        return PdaState(self.engine, frozenset(configs), accept)

    def branch(self) -> "PdaState":
        """Independent handle sharing all stack structure; O(live configurations)."""
        return PdaState(self.engine, self.configs, self.can_end, self.done)

    def max_depth(self) -> int:
        return max((st.depth for _, _, st in self.configs), default=0)

    def __repr__(self) -> str:
        return f"PdaState(configs={len(self.configs)}, can_end={self.can_end}, done={self.done})"


def pda_mask(engine: PdaEngine, state: PdaState) -> TokenMask:
    return engine.pda_mask(state)


def stack_branch(state: PdaState) -> PdaState:
    return state.branch()


class PdaConstraint:
    """Constraint wrapper so the decoder can treat every backend alike."""

    backend = "pda"

    def __init__(self, engine: PdaEngine) -> None:
        self.engine = engine
        self.vocab = engine.vocab

    def initial_state(self) -> PdaState:
        return self.engine.initial_state()
