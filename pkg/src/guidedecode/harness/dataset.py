"""Evaluation dataset rows, JSON-Lines I/O and a synthetic generator."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from ..errors import DatasetError


@dataclass(frozen=True)
class Context:
    doc_id: str
    text: str


@dataclass(frozen=True)
class EvalSample:
    """One query with its pre-retrieved contexts.

    ``truth_ids`` keeps file order for rendering; scoring treats it as a set.
    """

    id: str
    query: str
    contexts: tuple[Context, ...]
    truth_ids: tuple[str, ...]
    reference_response: str = ""

    def __post_init__(self) -> None:
        if not self.truth_ids:
            raise DatasetError(f"sample {self.id!r}: truth_ids is empty")
        known = {c.doc_id for c in self.contexts}
        missing = [t for t in self.truth_ids if t not in known]
        if missing:
            raise DatasetError(f"sample {self.id!r}: truth ids not among contexts: {missing}")

    @classmethod
    def from_json(cls, obj: object) -> "EvalSample":
        if not isinstance(obj, dict):
            raise DatasetError("sample must be a JSON object")
        try:
            contexts = tuple(Context(str(c["doc_id"]), str(c["text"])) for c in obj["contexts"])
            return cls(
                id=str(obj["id"]),
                query=str(obj["query"]),
                contexts=contexts,
                truth_ids=tuple(str(t) for t in obj["truth_ids"]),
                reference_response=str(obj.get("reference_response", "")),
            )
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"sample is missing or mistypes a field: {exc}") from None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "contexts": [{"doc_id": c.doc_id, "text": c.text} for c in self.contexts],
            "truth_ids": list(self.truth_ids),
            "reference_response": self.reference_response,
        }


def load_dataset(path: str | Path) -> list[EvalSample]:
    samples = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            samples.append(EvalSample.from_json(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        except DatasetError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate sample ids")
    return samples


def save_dataset(samples: Iterable[EvalSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")


_CODES = ("DOR", "KAR", "ESA", "HUK", "CEZ", "IDR")
_WORDS = (
    "contract court appeal ruling clause tenant lease notice damages party article "
    "statute claim evidence hearing judgment liability term payment deadline record"
).split()


def make_doc_id(rng: random.Random) -> str:
    """Identifier shaped like ``344.0321.DOR.2021_1630505603_page_623``."""
    return (
        f"{rng.randint(100, 999)}.{rng.randint(0, 9999):04d}.{rng.choice(_CODES)}."
        f"{rng.randint(2010, 2024)}_{rng.randint(1_500_000_000, 1_700_000_000)}"
        f"_page_{rng.randint(1, 999)}"
    )


def _sentence(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(n))


def generate_dataset(samples: int, refs_per_sample: int = 6, seed: int = 0,
                     distractors: int = 2, reuse: float = 0.25) -> list[EvalSample]:
    """Synthetic rows: ``refs_per_sample`` truth contexts plus distractors.

    A fraction ``reuse`` of truth ids is drawn from earlier samples so that
    unique references are fewer than total references.
    """
    if samples < 0 or refs_per_sample < 1 or distractors < 0 or not 0 <= reuse <= 1:
        raise ValueError("invalid generator parameters")
    rng = random.Random(seed)
    seen: list[str] = []
    rows = []
    for i in range(samples):
        truth: list[str] = []
        while len(truth) < refs_per_sample:
            if seen and rng.random() < reuse:
                cand = rng.choice(seen)
            else:
                cand = make_doc_id(rng)
            if cand not in truth:
                truth.append(cand)
        others: list[str] = []
        while len(others) < distractors:
            cand = make_doc_id(rng)
            if cand not in truth and cand not in others:
                others.append(cand)
        seen.extend(t for t in truth if t not in seen)
        ids = truth + others
        rng.shuffle(ids)
        contexts = tuple(Context(d, _sentence(rng, 12)) for d in ids)
        rows.append(EvalSample(
            id=f"s{i:05d}",
            query=_sentence(rng, 6) + "?",
            contexts=contexts,
            truth_ids=tuple(truth),
            reference_response=_sentence(rng, 10),
        ))
    return rows
