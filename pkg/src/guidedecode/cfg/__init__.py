"""Grammar backend: EBNF grammars compiled to a pushdown automaton."""

from importlib import resources

from .cache import LRUCache
from .engine import (
    PdaConstraint,
    PdaEngine,
    PdaState,
    TokenClasses,
    classify_tokens,
    pda_mask,
    stack_branch,
)
from .grammar import Grammar, Ref, Term, Terminal, inline_rules, parse_grammar
from .stack import ROOT, ExecStack


def json_grammar_source() -> str:
    """The shipped generic JSON grammar."""
    return resources.files("guidedecode").joinpath("data/json.ebnf").read_text(encoding="utf-8")


def json_grammar() -> Grammar:
    return parse_grammar(json_grammar_source())


def schema_to_grammar(schema) -> Grammar:
    """Grammar whose language is exactly the documents conforming to ``schema``.

    Raises UnsupportedSchemaFeature for anything outside the supported subset.
    """
    from ..schema import schema_to_grammar_source

    return parse_grammar(schema_to_grammar_source(schema))


__all__ = [
    "ExecStack",
    "Grammar",
    "LRUCache",
    "PdaConstraint",
    "PdaEngine",
    "PdaState",
    "ROOT",
    "Ref",
    "Term",
    "Terminal",
    "TokenClasses",
    "classify_tokens",
    "inline_rules",
    "json_grammar",
    "json_grammar_source",
    "parse_grammar",
    "pda_mask",
    "schema_to_grammar",
    "stack_branch",
]
