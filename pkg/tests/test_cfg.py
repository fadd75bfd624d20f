from __future__ import annotations

import json
import random
import threading
import time

import pytest

from guidedecode.cfg import (
    ROOT,
    ExecStack,
    LRUCache,
    PdaConstraint,
    PdaEngine,
    Ref,
    Term,
    classify_tokens,
    inline_rules,
    json_grammar,
    parse_grammar,
    pda_mask,
    schema_to_grammar,
    stack_branch,
)
from guidedecode.errors import (
    GrammarSyntaxError,
    GrammarTooAmbiguous,
    IllegalToken,
    LeftRecursionUnsupported,
    UndefinedRule,
    UnsupportedSchemaFeature,
)
from guidedecode.schema import RAG_RESPONSE_SCHEMA
from guidedecode.validators import GrammarRecognizer
from guidedecode.vocab import TokenMask, Vocabulary, synthetic_vocabulary

from oracles import choose, json_vocab, schema_vocab


def accepts(grammar, text: str) -> bool:
    return GrammarRecognizer(grammar).accepts(text.encode())


def vocab_of(*toks: str) -> Vocabulary:
    return Vocabulary(tuple(t.encode() for t in toks) + (b"</s>",), len(toks))


def walk(state, vocab: Vocabulary, text: str):
    """Advance ``state`` through ``text`` one vocabulary token at a time."""
    for tid in vocab.greedy_tokenize(text.encode()):
        state = state.advance(tid)
    return state


# -- parse_grammar -----------------------------------------------------------


def test_right_recursive_toy_grammar():
    g = parse_grammar('start: "a" start | "b"')
    for w in ["b", "ab", "aab", "aaaab"]:
        assert accepts(g, w)
    for w in ["", "a", "ba", "abb"]:
        assert not accepts(g, w)


def test_undefined_rule():
    with pytest.raises(UndefinedRule):
        parse_grammar('start: "(" expr ")"')


@pytest.mark.parametrize("text", ['start: start "a" | "b"', 'start: x "a"\nx: start | "b"',
                                  'start: opt start "a" | "b"\nopt: %empty | "c"'])
def test_left_recursion_rejected(text):
    with pytest.raises(LeftRecursionUnsupported):
        parse_grammar(text)


@pytest.mark.parametrize("text", ['start: "a" (', 'start: | "a"', "start: /[/", 'start: "a" start',
                                  '"a": b', "start: 'x'"])
def test_grammar_syntax_errors(text):
    with pytest.raises(GrammarSyntaxError):
        parse_grammar(text)


def test_ebnf_operators_and_named_terminals():
    g = parse_grammar('# list\nstart: "[" (ITEM ("," ITEM)*)? "]"\nITEM: /[0-9]+/\n')
    for w in ["[]", "[1]", "[1,22,3]"]:
        assert accepts(g, w)
    for w in ["[", "[1,]", "[,1]", "1"]:
        assert not accepts(g, w)
    assert "ITEM" in g.named_terminals


def test_json_grammar_accepts_documents():
    g = json_grammar()
    docs = ['{"document_ids": ["x"]}', "[]", '{"a": [1, -2.5e3, true, null, {}]}', '"\\u00e9"',
            '{ "k" :\n"v" }', "0"]
    for d in docs:
        json.loads(d)
        assert accepts(g, d), d
    for d in ["{", "[1,]", "01", '{"a" 1}', "tru", '"\\x"']:
        assert not accepts(g, d), d


def test_round_trip_through_text():
    g = json_grammar()
    back = parse_grammar(g.to_text())
    for d in ['{"a": [1, 2]}', "[true,false]", '"x"']:
        assert accepts(back, d)


# -- schema_to_grammar -------------------------------------------------------


def test_schema_grammar_rag_shape():
    g = schema_to_grammar(RAG_RESPONSE_SCHEMA)
    assert accepts(g, '{"response":"ok","document_ids":["a","b"]}')
    assert accepts(g, '{ "response" : "ok" ,\n "document_ids" : [ ] }')
    assert not accepts(g, '{"document_ids":[],"response":"ok"}')
    assert not accepts(g, '{"response":"ok"}')
    assert not accepts(g, '{"response":1,"document_ids":[]}')


def test_schema_with_optional_property_rejected():
    schema = {"type": "object", "properties": {"a": {"type": "string"}, "b": {"type": "string"}},
              "required": ["a"]}
    with pytest.raises(UnsupportedSchemaFeature):
        schema_to_grammar(schema)


@pytest.mark.parametrize("schema", [{"anyOf": [{"type": "string"}]}, {"type": "null"},
                                    {"type": "string", "pattern": "a+"}])
def test_schema_unsupported_keywords(schema):
    with pytest.raises(UnsupportedSchemaFeature):
        schema_to_grammar(schema)


def test_string_schema_is_exactly_json_strings():
    g = schema_to_grammar({"type": "string"})
    for w in ['""', '"abc"', '"\\n"', '"é"']:
        assert accepts(g, w)
    for w in ["abc", '"a', '"a""', '1', ' "a"']:
        assert not accepts(g, w)


def test_schema_scalars():
    g = schema_to_grammar({"type": "object", "properties": {"n": {"type": "number"},
                                                            "f": {"type": "boolean"}},
                           "required": ["n", "f"]})
    assert accepts(g, '{"n":-1.5e2,"f":false}')
    assert not accepts(g, '{"n":01,"f":false}')


# -- inline_rules ------------------------------------------------------------


def test_inline_single_use_rule():
    g = parse_grammar('a: b\nb: "x"')
    out = inline_rules(g)
    assert list(out.rules) == ["a"]
    assert out.rules["a"] == [(Term(out.rules["a"][0][0].name),)]
    assert out.terminals[out.rules["a"][0][0].name].literal == b"x"


def test_inline_leaves_recursion():
    g = parse_grammar('start: "(" inner ")"\ninner: "x" inner | %empty')
    out = inline_rules(g)
    assert "inner" in out.rules
    assert any(Ref("inner") in alt for alt in out.rules["inner"])


def test_inline_respects_reference_threshold():
    g = parse_grammar('start: x x x x x\nx: "a" | "b"')
    assert "x" in inline_rules(g, max_refs=4).rules
    assert "x" not in inline_rules(g, max_refs=5).rules


def random_grammar(rng: random.Random) -> str:
    """Random right-recursive grammar over {a, b}.

    Alternatives of a rule begin with distinct literals, which keeps parsing
    close to deterministic so brute-force enumeration stays cheap.
    """
    names = ["start", "r1", "r2", "r3"]
    lines = []
    for name in names:
        alts = []
        for first in rng.sample(["a", "b"], rng.randint(1, 2)):
            syms = [json.dumps(first if rng.random() < 0.7 else first + rng.choice("ab"))]
            for _ in range(rng.randint(0, 2)):
                if rng.random() < 0.5:
                    syms.append(rng.choice(names))
                else:
                    lit = json.dumps(rng.choice(["a", "b", "ab"]))
                    syms.append(lit + rng.choice(["", "", "?", "*"]))
            alts.append(" ".join(syms))
        if rng.random() < 0.3:
            alts.append("%empty")
        lines.append(f"{name}: " + " | ".join(alts))
    return "\n".join(lines)


def language_signature(grammar, max_len: int) -> dict[bytes, bool]:
    """Every viable prefix up to ``max_len`` bytes mapped to acceptance."""
    rec = GrammarRecognizer(grammar)
    out: dict[bytes, bool] = {}
    stack = [(b"", rec.initial())]
    while stack:
        word, (configs, accept) = stack.pop()
        out[word] = accept
        if len(word) == max_len:
            continue
        for b in b"ab":
            nxt = rec.step(configs, b)
            if nxt[0] or nxt[1]:
                stack.append((word + bytes([b]), nxt))
    return out


def test_inlining_preserves_language_on_random_grammars():
    rng = random.Random(7)
    checked = 0
    while checked < 50:
        try:
            g = parse_grammar(random_grammar(rng))
        except (LeftRecursionUnsupported, GrammarSyntaxError):
            continue
        for k in (1, 4):
            assert language_signature(g, 12) == language_signature(inline_rules(g, k), 12)
        checked += 1


# -- classification ----------------------------------------------------------


def reached_states(engine: PdaEngine, vocab: Vocabulary, seed: int, decodes: int, steps: int):
    rng = random.Random(seed)
    for _ in range(decodes):
        state, prefix = engine.initial_state(), b""
        for _ in range(steps):
            yield state, prefix
            mask = state.allowed_mask()
            tid = choose(rng, mask, vocab.eos_id, 0.05)
            if tid is None or tid == vocab.eos_id:
                break
            state = state.advance(tid)
            prefix += vocab.tokens[tid]


def test_classes_partition_vocabulary():
    v = json_vocab(96, 1)
    engine = PdaEngine(json_grammar(), v)
    for cls in engine.classes.values():
        total = cls.ci_valid.bits.astype(int) + cls.ci_invalid.bits + cls.context_dependent.bits
        assert (total == 1).all()


def test_classification_sound_against_oracle():
    v = json_vocab(128, 2)
    g = json_grammar()
    engine = PdaEngine(g, v)
    rec = GrammarRecognizer(g)
    for state, prefix in reached_states(engine, v, 3, 12, 25):
        oracle = set(rec.mask_after(prefix, v).allowed_ids())
        everywhere_invalid = None
        for p, q, _ in state.configs:
            cls = engine.classes[(engine.pos_term[p], q)]
            assert set(cls.ci_valid.allowed_ids()) <= oracle
            inv = set(cls.ci_invalid.allowed_ids())
            everywhere_invalid = inv if everywhere_invalid is None else everywhere_invalid & inv
        # EOS is decided by the state's can_end, not by the classifier
        assert not (everywhere_invalid or set()) & (oracle - {v.eos_id})


def test_true_is_context_independent_valid_at_value_start():
    v = vocab_of("true", "}", "[", "\x01")
    engine = PdaEngine(json_grammar(), v)
    tid = v.token_id("true")
    state = engine.initial_state()
    assert any(engine.classes[(engine.pos_term[p], q)].ci_valid.bits[tid]
               for p, q, _ in state.configs)


def test_brace_after_object_open_matches_oracle():
    v = vocab_of("{", "}", " ", '"a"')
    g = json_grammar()
    engine = PdaEngine(g, v)
    state = walk(engine.initial_state(), v, "{ ")
    assert state.allowed_mask() == GrammarRecognizer(g).mask_after(b"{ ", v)
    assert v.token_id("}") in state.allowed_mask()


def test_globally_dead_token_is_invalid_everywhere():
    v = vocab_of("true", "a\x01", "\x01")
    engine = PdaEngine(json_grammar(), v)
    for t in (v.token_id("\x01"), v.token_id("a\x01")):
        for cls in classify_tokens(engine, v).values():
            assert cls.ci_invalid.bits[t]


# -- pda_mask ----------------------------------------------------------------


def test_mask_after_response_key_begins_string():
    v = schema_vocab(128, 4)
    g = schema_to_grammar(RAG_RESPONSE_SCHEMA)
    engine = PdaEngine(g, v)
    prefix = '{"response":'
    state = engine.initial_state().advance_bytes(prefix.encode())
    mask = pda_mask(engine, state)
    assert mask == GrammarRecognizer(g).mask_after(prefix.encode(), v)
    for tid in mask.allowed_ids():
        assert v.tokens[tid][:1] in (b'"', b" ", b"\n", b"\t")
    assert v.token_id('"') in mask and v.token_id("ok") not in mask


def test_mask_at_document_end_is_eos_only():
    v = vocab_of('{"response":"x","document_ids":[]}', " ")
    engine = PdaEngine(schema_to_grammar(RAG_RESPONSE_SCHEMA), v, inline=False)
    state = engine.initial_state().advance(0)
    # trailing whitespace is not part of the document, so only EOS remains
    assert state.allowed_mask().allowed_ids() == [v.eos_id]
    end = state.advance(v.eos_id)
    assert end.is_complete and end.allowed_mask().popcount() == 0
    with pytest.raises(IllegalToken):
        end.advance(v.eos_id)


def test_mask_equals_oracle_on_random_decodes():
    v = json_vocab(80, 5)
    g = json_grammar()
    engine = PdaEngine(g, v)
    rec = GrammarRecognizer(g)
    for state, prefix in reached_states(engine, v, 6, 10, 30):
        assert state.allowed_mask() == rec.mask_after(prefix, v)


def test_cache_warm_and_cold_identical():
    v = json_vocab(96, 8)
    g = json_grammar()
    cold = PdaEngine(g, v, cache_capacity=0)
    warm = PdaEngine(g, v, cache_capacity=None)
    for _ in range(2):
        for (s1, p1), (s2, p2) in zip(reached_states(cold, v, 9, 8, 30),
                                      reached_states(warm, v, 9, 8, 30)):
            assert p1 == p2 and s1.allowed_mask() == s2.allowed_mask()
    assert warm.cache.hits > 0 and len(cold.cache) == 0


def test_illegal_tokens_raise():
    v = vocab_of("[", "]", "x")
    state = PdaEngine(json_grammar(), v).initial_state()
    with pytest.raises(IllegalToken):
        state.advance(v.token_id("]"))
    with pytest.raises(IllegalToken):
        state.advance(v.eos_id)
    with pytest.raises(IllegalToken):
        state.advance(99)


def test_too_ambiguous():
    g = parse_grammar('start: "a" "b" | "a" "c" | "a" "d"')
    v = vocab_of("a", "b")
    with pytest.raises(GrammarTooAmbiguous):
        PdaEngine(g, v, max_configs=2)
    assert PdaEngine(g, v, max_configs=3).initial_state().allowed_mask().allowed_ids() == [0]


# -- ExecStack and branching -------------------------------------------------


def test_exec_stack_is_persistent():
    a = ROOT.push(1)
    b = a.push(2)
    c = a.push(3)
    assert list(b) == [2, 1] and list(c) == [3, 1] and list(a) == [1]
    sym, parent = b.pop()
    assert sym == 2 and parent is a
    assert (ROOT.depth, a.depth, b.depth) == (0, 1, 2) and len(b) == 2
    assert b.top(5) == (2, 1) and b.top(1) == (2,)
    assert ExecStack(2, ExecStack(1, ROOT)) == b and hash(ExecStack(2, a)) == hash(b)
    with pytest.raises(IndexError):
        ROOT.pop()


def test_deep_stack_equality_iterative():
    a = b = ROOT
    for i in range(20000):
        a, b = a.push(i % 3), b.push(i % 3)
    assert a == b and a.depth == 20000


def test_branch_then_diverge_matches_replay():
    v = vocab_of("[", '"', "a", "]", ",")
    engine = PdaEngine(json_grammar(), v)
    base = walk(engine.initial_state(), v, "[[")
    copy = stack_branch(base)
    left = copy.advance(v.token_id("["))
    right = base.advance(v.token_id('"'))
    fresh = PdaEngine(json_grammar(), v, cache_capacity=0)
    assert left.allowed_mask() == walk(fresh.initial_state(), v, "[[[").allowed_mask()
    assert right.allowed_mask() == walk(fresh.initial_state(), v, '[["').allowed_mask()
    # the original handle still sees the shared prefix only
    assert base.allowed_mask() == walk(fresh.initial_state(), v, "[[").allowed_mask()


def test_branch_of_terminal_state_is_terminal():
    v = vocab_of("1")
    state = PdaEngine(json_grammar(), v).initial_state().advance(0).advance(v.eos_id)
    assert stack_branch(state).is_complete


def test_interleaved_branch_family_matches_replay():
    v = json_vocab(64, 11)
    g = json_grammar()
    engine = PdaEngine(g, v)
    rec = GrammarRecognizer(g)
    rng = random.Random(12)
    family = [(engine.initial_state(), b"")]
    for _ in range(150):
        state, prefix = rng.choice(family)
        if rng.random() < 0.4:
            family.append((state.branch(), prefix))
            continue
        tid = choose(rng, state.allowed_mask(), v.eos_id, 0.0)
        if tid is None:
            continue
        family.append((state.advance(tid), prefix + v.tokens[tid]))
    for state, prefix in family:
        assert state.allowed_mask() == rec.mask_after(prefix, v)


def test_branch_cost_independent_of_depth():
    v = vocab_of("[")
    engine = PdaEngine(json_grammar(), v)
    shallow = engine.initial_state().advance(0)
    deep = shallow
    for _ in range(2000):
        deep = deep.advance(0)
    assert deep.max_depth() > 1000

    def cost(s):
        t0 = time.perf_counter()
        for _ in range(2000):
            s = s.branch()
        return time.perf_counter() - t0

    best_shallow = min(cost(shallow) for _ in range(5))
    best_deep = min(cost(deep) for _ in range(5))
    assert best_deep < 10 * best_shallow


# -- concurrency -------------------------------------------------------------


def test_lru_cache_basics():
    c: LRUCache[int] = LRUCache(2)
    c.put("a", 1)
    c.put("b", 2)
    assert c.get("a") == 1
    c.put("c", 3)
    assert c.get("b") is None and c.get("a") == 1 and len(c) == 2
    off: LRUCache[int] = LRUCache(0)
    off.put("a", 1)
    assert off.get("a") is None
    with pytest.raises(ValueError):
        LRUCache(-1)


def test_lru_cache_thread_safe():
    c: LRUCache[int] = LRUCache(16)
    errors = []

    def hammer(seed):
        rng = random.Random(seed)
        try:
            for _ in range(5000):
                k = rng.randrange(64)
                if rng.random() < 0.5:
                    c.put(k, k)
                else:
                    got = c.get(k)
                    assert got is None or got == k
        except Exception as exc:  # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=hammer, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors and len(c) <= 16


def test_shared_engine_concurrent_masks():
    v = json_vocab(96, 13)
    engine = PdaEngine(json_grammar(), v, cache_capacity=8)
    states = [s for s, _ in reached_states(engine, v, 14, 6, 20)]
    serial = [PdaEngine(json_grammar(), v, cache_capacity=0).pda_mask(s) for s in states]
    results: dict[int, list[TokenMask]] = {}

    def worker(i):
        results[i] = [engine.pda_mask(s) for s in states]

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for masks in results.values():
        assert masks == serial


def test_constraint_wrapper():
    v = synthetic_vocabulary(12, "ab", seed=1)
    c = PdaConstraint(PdaEngine(parse_grammar('start: "a" start | "b"'), v))
    assert c.backend == "pda" and c.vocab is v
    assert c.initial_state().allowed_mask() == GrammarRecognizer(
        parse_grammar('start: "a" start | "b"')).mask_after(b"", v)
