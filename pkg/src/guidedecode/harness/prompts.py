"""Chat-history construction and reference extraction."""

from __future__ import annotations

import re
from importlib import resources
from typing import Sequence

from ..errors import NotEnoughExemplars, ValidationError
from ..llm_client import Message
from .dataset import Context, EvalSample

USER_TEMPLATE = "rag ctx: {ctx} query: {q}"
ASSISTANT_TEMPLATE = "resp: {r} doc ids: {ids}"
DEFAULT_ID_PATTERN = r"[(<]doc_id[)>]\s*(.+?)\s*[(<]/doc_id[)>]"


def default_system_prompt() -> str:
    return resources.files("guidedecode").joinpath("data/system_prompt.txt").read_text(
        encoding="utf-8").strip()


def tag_id(doc_id: str) -> str:
    return f"(doc_id){doc_id}(/doc_id)"


def render_ids(ids: Sequence[str]) -> str:
    return " ".join(tag_id(i) for i in ids)


def render_context(contexts: Sequence[Context]) -> str:
    return "\n".join(f"{tag_id(c.doc_id)} {c.text}" for c in contexts)


def render_user(sample: EvalSample) -> str:
    return USER_TEMPLATE.format(ctx=render_context(sample.contexts), q=sample.query)


def render_assistant(sample: EvalSample) -> str:
    return ASSISTANT_TEMPLATE.format(r=sample.reference_response, ids=render_ids(sample.truth_ids))


def build_history(sample: EvalSample, exemplars: Sequence[EvalSample], n: int,
                  system_prompt: str | None = None) -> tuple[Message, ...]:
    """System prompt, ``n`` exemplar user/assistant pairs, then the query.

    Raises:
        NotEnoughExemplars: fewer than ``n`` exemplars were supplied.
    """
    if n < 0:
        raise ValidationError("turn count must be >= 0")
    if len(exemplars) < n:
        raise NotEnoughExemplars(n, len(exemplars))
    if any(ex.id == sample.id for ex in exemplars[:n]):
        raise ValidationError(f"sample {sample.id!r} cannot be its own exemplar")
    prompt = default_system_prompt() if system_prompt is None else system_prompt
    msgs = [Message("system", prompt)]
    for ex in exemplars[:n]:
        msgs.append(Message("user", render_user(ex)))
        msgs.append(Message("assistant", render_assistant(ex)))
    msgs.append(Message("user", render_user(sample)))
    return tuple(msgs)


def extract_ids(text: str, pattern: str = DEFAULT_ID_PATTERN) -> list[str]:
    """Non-overlapping matches of ``pattern`` in order, duplicates dropped.

    The first capture group is the id when the pattern has one, otherwise
    the whole match.
    """
    rx = re.compile(pattern, re.DOTALL)
    out: list[str] = []
    seen: set[str] = set()
    for m in rx.finditer(text):
        ident = m.group(1) if rx.groups else m.group(0)
        if ident not in seen:
            seen.add(ident)
            out.append(ident)
    return out
