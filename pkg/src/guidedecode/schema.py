"""JSON-schema subset shared by the regex, grammar and enforcer backends.

Supported: ``object`` with every property required, ``string``, ``number``,
``boolean`` and ``array`` with an ``items`` schema. Object keys must appear
in declaration order. Whitespace (space, tab, newline, carriage return) is
free between structural tokens and forbidden elsewhere, including around the
top-level value.

String escapes are limited to ``\\" \\\\ \\n \\t \\uXXXX``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from .errors import UnsupportedSchemaFeature
from .regex.parse import escape_literal

WS_CHARS = b" \t\n\r"
WS_RE = r"[ \t\n\r]*"
STRING_RE = r'"([^"\\\x00-\x1f]|\\["\\nt]|\\u[0-9a-fA-F]{4})*"'
NUMBER_RE = r"-?(0|[1-9][0-9]*)(\.[0-9]+)?([eE][+-]?[0-9]+)?"
BOOLEAN_RE = r"(true|false)"

_ANNOTATIONS = {"title", "description", "$schema", "$id", "$comment", "examples", "default"}
_ALLOWED = {
    "object": {"type", "properties", "required", "additionalProperties"},
    "array": {"type", "items"},
    "string": {"type"},
    "number": {"type"},
    "boolean": {"type"},
}


@dataclass(frozen=True)
class SchemaNode:
    kind: str
    properties: tuple[tuple[str, "SchemaNode"], ...] = ()
    items: "SchemaNode | None" = None

    def key_literal(self, index: int) -> bytes:
        """Exact bytes of the ``index``-th key, quotes included."""
        return json.dumps(self.properties[index][0], ensure_ascii=False).encode("utf-8")


def normalize_schema(schema: Any, path: str = "$") -> SchemaNode:
    """Check ``schema`` against the subset and return its normalized tree.

    Raises UnsupportedSchemaFeature naming the first offending feature.
    """
    if not isinstance(schema, dict):
        raise UnsupportedSchemaFeature("non-object schema", path)
    kind = schema.get("type")
    if kind is None:
        for key in ("anyOf", "oneOf", "allOf", "$ref", "enum", "const", "not"):
            if key in schema:
                raise UnsupportedSchemaFeature(key, path)
        raise UnsupportedSchemaFeature("untyped schema", path)
    if not isinstance(kind, str):
        raise UnsupportedSchemaFeature("type union", path)
    if kind not in _ALLOWED:
        raise UnsupportedSchemaFeature(f"type {kind}", path)
    for key in schema:
        if key not in _ALLOWED[kind] and key not in _ANNOTATIONS:
            raise UnsupportedSchemaFeature(key, path)

    if kind == "object":
        props = schema.get("properties", {})
        if not isinstance(props, dict):
            raise UnsupportedSchemaFeature("non-object properties", path)
        required = schema.get("required", [])
        if not isinstance(required, list):
            raise UnsupportedSchemaFeature("non-list required", path)
        for name in props:
            if name not in required:
                raise UnsupportedSchemaFeature(f"optional property {name!r}", path)
        for name in required:
            if name not in props:
                raise UnsupportedSchemaFeature(f"required property {name!r} without schema", path)
        extra = schema.get("additionalProperties", False)
        if extra is not False:
            raise UnsupportedSchemaFeature("additionalProperties", path)
        return SchemaNode(
            "object",
            properties=tuple(
                (name, normalize_schema(sub, f"{path}.{name}")) for name, sub in props.items()
            ),
        )
    if kind == "array":
        if "items" not in schema:
            raise UnsupportedSchemaFeature("array without items", path)
        return SchemaNode("array", items=normalize_schema(schema["items"], f"{path}[]"))
    return SchemaNode(kind)


def schema_to_regex(schema: Any) -> str:
    """Regex whose language is exactly the conforming documents."""
    node = schema if isinstance(schema, SchemaNode) else normalize_schema(schema)
    return _regex(node)


def _regex(node: SchemaNode) -> str:
    ws = WS_RE
    if node.kind == "string":
        return STRING_RE
    if node.kind == "number":
        return NUMBER_RE
    if node.kind == "boolean":
        return BOOLEAN_RE
    if node.kind == "array":
        item = _regex(node.items)
        return rf"\[{ws}(({item}){ws}(,{ws}({item}){ws})*)?\]"
    parts = []
    for i, (_, sub) in enumerate(node.properties):
        key = escape_literal(node.key_literal(i).decode("utf-8"))
        parts.append(rf"{key}{ws}:{ws}({_regex(sub)}){ws}")
    return r"\{" + ws + f",{ws}".join(parts) + r"\}"


def schema_to_grammar_source(schema: Any) -> str:
    """EBNF source (see :mod:`guidedecode.cfg.grammar`) for the schema."""
    node = schema if isinstance(schema, SchemaNode) else normalize_schema(schema)
    rules: list[str] = []
    counter = [0]

    def lit(text: str) -> str:
        return json.dumps(text, ensure_ascii=False)

    def emit(n: SchemaNode) -> str:
        if n.kind == "string":
            return "STRING"
        if n.kind == "number":
            return "NUMBER"
        if n.kind == "boolean":
            return "BOOLEAN"
        name = f"{n.kind}_{counter[0]}"
        counter[0] += 1
        if n.kind == "array":
            item = emit(n.items)
            rules.append(f'{name}: "[" WS ( {item} WS ( "," WS {item} WS )* )? "]"')
        else:
            body = []
            for i, (_, sub) in enumerate(n.properties):
                key = lit(n.key_literal(i).decode("utf-8"))
                body.append(f'{key} WS ":" WS {emit(sub)} WS')
            inner = ' "," WS '.join(body)
            rules.append(f'{name}: "{{" WS {inner} "}}"')
        return name

    top = emit(node)
    lines = [f"start: {top}", *reversed(rules)]
    lines += [
        f"WS: /{WS_RE}/",
        f"STRING: /{STRING_RE}/",
        f"NUMBER: /{NUMBER_RE}/",
        'BOOLEAN: "true" | "false"',
    ]
    return "\n".join(lines) + "\n"


RAG_RESPONSE_SCHEMA: dict = {
    "type": "object",
    "properties": {
        "response": {"type": "string"},
        "document_ids": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["response", "document_ids"],
}
"""Answer-plus-citations schema used by the evaluation harness."""
