"""Regex backend: byte-level DFA compilation and the state-to-token index."""

from .automaton import DEAD, Fsm, compile_regex, literal_fsm, minimize, utf8_sequences
from .index import (
    FsmConstraint,
    FsmIndex,
    FsmState,
    build_index,
    fsm_advance,
    load_index,
    save_index,
)
from .parse import escape_literal, parse_regex

__all__ = [
    "DEAD",
    "Fsm",
    "FsmConstraint",
    "FsmIndex",
    "FsmState",
    "build_index",
    "compile_regex",
    "escape_literal",
    "fsm_advance",
    "literal_fsm",
    "load_index",
    "minimize",
    "parse_regex",
    "save_index",
    "utf8_sequences",
]
