"""Per-sample scoring and exact aggregate metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence


@dataclass(frozen=True)
class Verdict:
    corr: tuple[str, ...]
    fp: tuple[str, ...]
    success: bool
    hallucination: bool


def eval_sample(truth_ids: Iterable[str], resp_ids: Sequence[str]) -> Verdict:
    """Score one response: success needs a correct id and no false ones."""
    truth = set(truth_ids)
    ids = list(dict.fromkeys(resp_ids))
    corr = tuple(i for i in ids if i in truth)
    fp = tuple(i for i in ids if i not in truth)
    return Verdict(corr, fp, bool(corr) and not fp, bool(fp))


@dataclass
class EvalResult:
    sample_id: str
    resp_ids: list[str]
    corr: list[str]
    fp: list[str]
    success: bool
    hallucination: bool
    response: str
    truth_ids: list[str] = field(default_factory=list)
    error: str | None = None

    @classmethod
    def scored(cls, sample_id: str, truth_ids: Sequence[str], resp_ids: Sequence[str],
               response: str) -> "EvalResult":
        v = eval_sample(truth_ids, resp_ids)
        return cls(sample_id, list(dict.fromkeys(resp_ids)), list(v.corr), list(v.fp),
                   v.success, v.hallucination, response, list(truth_ids))

    @classmethod
    def failed(cls, sample_id: str, truth_ids: Sequence[str], error: str) -> "EvalResult":
        return cls(sample_id, [], [], [], False, False, "", list(truth_ids), error)

    def to_json(self) -> dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, obj: dict) -> "EvalResult":
        return cls(**obj)


def _rate(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


@dataclass
class MetricsReport:
    """Aggregates for one (dataset, turns, target, backend) run.

    Rates are exact fractions over completed (non-failed) samples.
    ``fp_sample_rate`` equals ``hallucination_rate``; both names are kept so
    the two readings of "false positive rate" sit side by side.
    """

    turns: int
    samples: int
    completed: int
    failures: int
    successes: int
    hallucinations: int
    total_resp_ids: int
    total_fp: int
    total_refs: int
    unique_refs: int
    success_rate: Fraction
    hallucination_rate: Fraction
    fp_reference_rate: Fraction
    id_pattern: str
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def fp_sample_rate(self) -> Fraction:
        return self.hallucination_rate

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for k, v in self.__dict__.items():
            out[k] = v
        for name in ("success_rate", "hallucination_rate", "fp_reference_rate"):
            frac = getattr(self, name)
            out[name] = float(frac)
            out[name + "_exact"] = f"{frac.numerator}/{frac.denominator}"
        out["fp_sample_rate"] = float(self.hallucination_rate)
        out["judge_scores"] = None
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        kw = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        for name in ("success_rate", "hallucination_rate", "fp_reference_rate"):
            kw[name] = Fraction(obj[name + "_exact"])
        return cls(**kw)


def aggregate(results: Sequence[EvalResult], turns: int, id_pattern: str,
              config: dict[str, Any] | None = None) -> MetricsReport:
    done = [r for r in results if r.error is None]
    successes = sum(r.success for r in done)
    halluc = sum(r.hallucination for r in done)
    total_ids = sum(len(r.resp_ids) for r in done)
    total_fp = sum(len(r.fp) for r in done)
    refs = [t for r in results for t in r.truth_ids]
    return MetricsReport(
        turns=turns,
        samples=len(results),
        completed=len(done),
        failures=len(results) - len(done),
        successes=successes,
        hallucinations=halluc,
        total_resp_ids=total_ids,
        total_fp=total_fp,
        total_refs=len(refs),
        unique_refs=len(set(refs)),
        success_rate=_rate(successes, len(done)),
        hallucination_rate=_rate(halluc, len(done)),
        fp_reference_rate=_rate(total_fp, total_ids),
        id_pattern=id_pattern,
        config=dict(config or {}),
    )
