from __future__ import annotations

import random
import re

import pytest
from hypothesis import given, settings, strategies as st

from guidedecode.decoder import DecodeConfig, decode
from guidedecode.errors import DeadEnd, IllegalToken, RegexSyntaxError, UnsupportedFeature
from guidedecode.regex import (
    FsmConstraint,
    build_index,
    compile_regex,
    escape_literal,
    fsm_advance,
    load_index,
    minimize,
    parse_regex,
    save_index,
    utf8_sequences,
)
from guidedecode.sources import MockRandom
from guidedecode.vocab import Vocabulary, synthetic_vocabulary

from oracles import fsm_fold_mask, random_regex


def vocab_of(*toks: str) -> Vocabulary:
    return Vocabulary(tuple(t.encode() for t in toks), len(toks) - 1)


def ids(v: Vocabulary, *toks: str) -> set[int]:
    return {v.eos_id if t == "</s>" else v.token_id(t) for t in toks}


def test_digits_language():
    f = compile_regex("[0-9]+")
    assert f.accepts(b"42") and not f.accepts(b"") and not f.accepts(b"4a")


def test_two_string_language():
    f = compile_regex("(a|b)c")
    words = [bytes(p) for p in __import__("itertools").product(b"abc", repeat=2)]
    assert {w for w in words if f.accepts(w)} == {b"ac", b"bc"}


@pytest.mark.parametrize("pattern", ["(?=x)", "(?!x)", "(?<=a)b", r"(a)\1", "a*?", "a++",
                                     "(?i)a", r"\bfoo", "a^b", "[[:alpha:]]"])
def test_unsupported(pattern):
    with pytest.raises(UnsupportedFeature):
        compile_regex(pattern)


@pytest.mark.parametrize("pattern", ["(", "a)", "[a-", "*a", "a{3,1}", "[z-a]", "\\"])
def test_syntax_errors(pattern):
    with pytest.raises(RegexSyntaxError):
        compile_regex(pattern)


def test_literal_brace_and_escape():
    assert compile_regex("a{,2}").accepts(b"a{,2}")
    for text in ["a.b", "x/y", "(1+2)*3?", "[]{}|\\^$"]:
        assert compile_regex(escape_literal(text)).accepts(text.encode())


def test_index_digits_example():
    v = vocab_of("0", "1", "a", "</s>")
    c = FsmConstraint.from_regex("[0-9]+", v)
    s = c.initial_state()
    assert set(s.allowed_mask().allowed_ids()) == ids(v, "0", "1")
    s = fsm_advance(s, v.token_id("0"))
    assert set(s.allowed_mask().allowed_ids()) == ids(v, "0", "1", "</s>")


def test_index_single_string():
    v = vocab_of("a", "</s>")
    c = FsmConstraint.from_regex("a", v)
    s = c.initial_state()
    assert s.allowed_mask().allowed_ids() == [0]
    s = s.advance(0)
    assert s.allowed_mask().allowed_ids() == [1]
    end = s.advance(1)
    assert end.is_complete and end.allowed_mask().popcount() == 0


def test_illegal_token():
    v = vocab_of("1", "a", "</s>")
    s = FsmConstraint.from_regex("[0-9]+", v).initial_state()
    with pytest.raises(IllegalToken):
        s.advance(v.token_id("a"))
    with pytest.raises(IllegalToken):
        s.advance(v.eos_id)  # not accepting yet


def test_no_viable_token_is_dead_end():
    v = vocab_of("a", "b", "</s>")
    c = FsmConstraint.from_regex("[0-9]{2}", v)
    assert c.initial_state().allowed_mask().popcount() == 0
    with pytest.raises(DeadEnd):
        decode(MockRandom(v.size, 0), c, DecodeConfig())


def test_multibyte_tokens_and_partial_utf8():
    # tokens that split a two-byte character are allowed when a completion exists
    v = Vocabulary((b"\xc3", b"\xa9", "é".encode(), b"e", b"</s>"), 4)
    c = FsmConstraint.from_regex("é+", v)
    s = c.initial_state()
    assert set(s.allowed_mask().allowed_ids()) == {0, 2}
    s = s.advance(0)
    assert set(s.allowed_mask().allowed_ids()) == {1}
    s = s.advance(1)
    assert set(s.allowed_mask().allowed_ids()) == {0, 2, 4}


def test_dot_matches_whole_characters():
    f = compile_regex(".")
    for ch in ["a", "é", "€", "😀"]:
        assert f.accepts(ch.encode())
    assert not f.accepts(b"\n") and not f.accepts(b"\xff") and not f.accepts(b"\xc3")


def test_utf8_sequences_cover_ranges():
    for lo, hi in [(0, 0x7F), (0x80, 0x7FF), (0x800, 0xFFFF), (0x10000, 0x10FFFF), (0xE9, 0x20AC)]:
        seqs = utf8_sequences(lo, hi)
        for cp in random.Random(lo).sample(range(lo, hi + 1), min(200, hi - lo + 1)):
            if 0xD800 <= cp <= 0xDFFF:
                continue
            enc = chr(cp).encode()
            assert any(len(s) == len(enc) and all(a <= b <= z for b, (a, z) in zip(enc, s))
                       for s in seqs)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_random_regex_matches_python_re(seed):
    rng = random.Random(seed)
    pattern = random_regex(rng, depth=2)
    f = compile_regex(pattern)
    rx = re.compile(pattern, re.ASCII)
    for _ in range(80):
        s = "".join(rng.choice("abc01x.-_z") for _ in range(rng.randint(0, 6)))
        assert (rx.fullmatch(s) is not None) == f.accepts(s.encode()), (pattern, s)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_index_equals_fold_oracle_multibyte(seed):
    rng = random.Random(seed)
    pattern = random_regex(rng).replace("[x-z0]", "[w-z0]").replace("x", "é")
    v = synthetic_vocabulary(rng.randint(32, 128), "abc01é.-_z", seed=seed)
    c = FsmConstraint.from_regex(pattern, v)
    for q in range(c.fsm.num_states):
        assert c.index.mask(q) == fsm_fold_mask(c.fsm, q, v)


def test_fsm_is_pruned_and_minimal():
    f = compile_regex("(a|b)*abb|x")
    # every state reaches acceptance and is reachable from the start
    n = f.num_states
    reach = {f.start}
    frontier = [f.start]
    while frontier:
        q = frontier.pop()
        for nq in f.table[q]:
            if nq >= 0 and nq not in reach:
                reach.add(nq)
                frontier.append(nq)
    assert reach == set(range(n))
    assert all(not f.is_empty() for _ in [0])
    assert minimize(f).num_states == n
    # four for (a|b)*abb, a distinct start (it alone accepts x) and the x accept state
    assert n == 6


def test_unminimized_equivalent():
    for pattern in ["(a|ab)(c|bcd)", "[a-c]*c[a-c]{2}", "(x+x+)+y"]:
        a, b = compile_regex(pattern), compile_regex(pattern, minimized=False)
        for n in range(6):
            for w in __import__("itertools").product(b"abcdxy", repeat=n):
                assert a.accepts(bytes(w)) == b.accepts(bytes(w))


def test_index_round_trip(tmp_path):
    v = synthetic_vocabulary(100, "abc0123", seed=1)
    c = FsmConstraint.from_regex("[a-c]+[0-3]{2}", v)
    p = tmp_path / "idx.json"
    save_index(c, p)
    back = load_index(p, v)
    assert back.fsm.table == c.fsm.table and back.fsm.accepting == c.fsm.accepting
    for q in range(c.fsm.num_states):
        assert back.index.mask(q) == c.index.mask(q)


def test_dead_tokens_recorded():
    v = vocab_of("a", "zz", "</s>")
    idx = build_index(compile_regex("a+"), v)
    assert idx.dead_tokens == (1,)


def test_parse_regex_ast():
    node = parse_regex("a{2,3}")
    assert (node.min, node.max) == (2, 3)
