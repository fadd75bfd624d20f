"""Run the multi-turn evaluation over a dataset against a mock or remote target."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from ..decoder import BACKENDS, DecodeConfig, build_constraint, decode
from ..errors import GuidedDecodeError, ValidationError
from ..llm_client import ChatClient, ChatRequest, Message
from ..schema import RAG_RESPONSE_SCHEMA
from ..sources import MockScripted
from ..vocab import Vocabulary, byte_level_vocabulary
from .dataset import EvalSample
from .metrics import EvalResult, MetricsReport, aggregate
from .prompts import DEFAULT_ID_PATTERN, build_history, extract_ids, tag_id

log = logging.getLogger(__name__)

# names OpenAI-compatible servers commonly use for each backend family
BACKEND_HINTS = {"fsm": "outlines", "pda": "xgrammar", "enforcer": "lm-format-enforcer"}


def planted_text(sample: EvalSample, ids: Sequence[str]) -> str:
    body = {"response": sample.reference_response or "ok",
            "document_ids": [tag_id(i) for i in ids]}
    return json.dumps(body, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class PlantedTarget:
    """Answers the k-th scored sample with ``pattern[k % len(pattern)]``.

    Each entry ``(c, w)`` cites the first ``c`` truth ids and ``w``
    fabricated ids that are not in the truth set.
    """

    pattern: tuple[tuple[int, int], ...]

    def ids_for(self, sample: EvalSample, k: int) -> list[str]:
        c, w = self.pattern[k % len(self.pattern)]
        if c > len(sample.truth_ids):
            raise ValidationError(
                f"planted pattern cites {c} correct ids, sample {sample.id!r} has {len(sample.truth_ids)}"
            )
        truth = set(sample.truth_ids)
        wrong = []
        j = 0
        while len(wrong) < w:
            cand = f"000.0000.FAKE.0000_{k}_page_{j}"
            if cand not in truth:
                wrong.append(cand)
            j += 1
        return list(sample.truth_ids[:c]) + wrong

    def respond(self, sample: EvalSample, history: Sequence[Message], k: int) -> str:
        return planted_text(sample, self.ids_for(sample, k))


@dataclass(frozen=True)
class TruthTarget:
    def respond(self, sample: EvalSample, history: Sequence[Message], k: int) -> str:
        return planted_text(sample, sample.truth_ids)


def parse_target(spec: str):
    """``mock:truth``, ``mock:planted:C/W,C/W,...`` or ``remote:<url>``."""
    kind, _, rest = spec.partition(":")
    if kind == "remote":
        if not rest:
            raise ValidationError("remote target needs a URL: remote:<url>")
        return ("remote", rest)
    if kind != "mock":
        raise ValidationError(f"unknown target {spec!r}; expected mock:... or remote:<url>")
    variant, _, params = rest.partition(":")
    if variant == "truth":
        return TruthTarget()
    if variant == "planted":
        try:
            pattern = tuple(
                (int(c), int(w)) for c, w in (p.split("/") for p in params.split(","))
            )
        except ValueError:
            raise ValidationError(f"bad planted pattern {params!r}; expected C/W,C/W,...") from None
        if not pattern or any(c < 0 or w < 0 for c, w in pattern):
            raise ValidationError("planted pattern needs non-negative C/W pairs")
        return PlantedTarget(pattern)
    raise ValidationError(f"unknown mock target {variant!r}")


@dataclass
class EvalRun:
    report: MetricsReport
    results: list[EvalResult]
    latencies: list[float]


def run_eval(
    samples: Sequence[EvalSample],
    turns: int,
    target: str,
    backend: str = "none",
    *,
    seed: int = 0,
    jobs: int = 1,
    id_pattern: str = DEFAULT_ID_PATTERN,
    system_prompt: str | None = None,
    vocab: Vocabulary | None = None,
    model: str = "default",
    api_key_env: str | None = None,
    hint_field: str | None = None,
    timeout: float = 60.0,
    max_retries: int = 2,
    max_tokens: int = 2048,
    out_dir: str | Path | None = None,
    config: dict[str, Any] | None = None,
) -> EvalRun:
    """Score ``samples[turns:]``; the leading ``turns`` samples are the exemplars.

    Per-sample errors from decoding or the client are recorded as failures.
    Results keep dataset order regardless of completion order.
    """
    if backend not in BACKENDS:
        raise ValidationError(f"backend must be one of {BACKENDS}")
    if turns < 0:
        raise ValidationError("turns must be >= 0")
    if len(samples) <= turns:
        raise ValidationError(f"dataset has {len(samples)} rows; {turns} are reserved as exemplars")
    exemplars = list(samples[:turns])
    scored = list(samples[turns:])
    tgt = parse_target(target)
    remote = isinstance(tgt, tuple)

    client = None
    if remote:
        kwargs: dict[str, Any] = {"max_retries": max_retries, "max_in_flight": max(1, jobs)}
        if api_key_env:
            kwargs["api_key_env"] = api_key_env
        client = ChatClient(tgt[1], **kwargs)
    constraint = check = None
    if not remote and backend != "none":
        vocab = vocab or byte_level_vocabulary()
        constraint, check = build_constraint(backend, vocab, schema=RAG_RESPONSE_SCHEMA)

    def one(k: int) -> tuple[EvalResult, float]:
        sample = scored[k]
        start = time.perf_counter()
        try:
            history = build_history(sample, exemplars, turns, system_prompt)
            if client is not None:
                req_kw: dict[str, Any] = {}
                if hint_field:
                    req_kw["hint_field"] = hint_field
                req = ChatRequest(
                    model, history,
                    response_schema=None if backend == "none" else RAG_RESPONSE_SCHEMA,
                    backend_hint=BACKEND_HINTS.get(backend),
                    max_tokens=max_tokens, timeout=timeout, **req_kw,
                )
                text = client.chat(req).text
            else:
                text = tgt.respond(sample, history, k)
                if constraint is not None:
                    script = vocab.greedy_tokenize(text)
                    source = MockScripted(vocab.size, script, vocab.eos_id, seed=seed + k)
                    cfg = DecodeConfig(backend=backend, greedy=True, seed=seed + k,
                                       max_tokens=max(max_tokens, len(script) + 1))
                    text = decode(source, constraint, cfg, check).text.decode("utf-8", "replace")
            result = EvalResult.scored(sample.id, sample.truth_ids, extract_ids(text, id_pattern), text)
        except (GuidedDecodeError, OSError) as exc:
            log.warning("sample %s failed: %s", sample.id, exc)
            result = EvalResult.failed(sample.id, sample.truth_ids, f"{type(exc).__name__}: {exc}")
        return result, time.perf_counter() - start

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(one, range(len(scored))))
    else:
        pairs = [one(k) for k in range(len(scored))]
    results = [r for r, _ in pairs]
    latencies = [t for _, t in pairs]
    echo = {"turns": turns, "target": target, "backend": backend, "seed": seed,
            "id_pattern": id_pattern, "model": model, **(config or {})}
    report = aggregate(results, turns, id_pattern, echo)
    run = EvalRun(report, results, latencies)
    if out_dir is not None:
        write_run(run, out_dir)
    return run


def write_run(run: EvalRun, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for r in run.results:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    (out / "report.json").write_text(
        json.dumps(run.report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lat = run.latencies
    timing = {"samples": len(lat), "total_seconds": sum(lat),
              "mean_seconds": sum(lat) / len(lat) if lat else 0.0}
    (out / "timings.json").write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")


def load_results(path: str | Path) -> list[EvalResult]:
    with open(path, encoding="utf-8") as fh:
        return [EvalResult.from_json(json.loads(line)) for line in fh if line.strip()]
