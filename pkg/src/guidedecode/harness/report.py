"""Render comparison tables from a directory of evaluation runs.

Three tables are produced: a dataset overview (references and samples per
turn level), mean end-to-end time per sample by backend and target, and
false-positive rates by target, turn level and backend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

BACKEND_COLUMNS = (("fsm", "FSM (regex)"), ("pda", "PDA (grammar)"), ("enforcer", "Enforcer"),
                   ("none", "Unconstrained"))
NOTE = ("Values come from the runs found under the input directory. Mock runs exercise the "
        "pipeline only; they are not measurements of served models.")


def turn_label(n: int) -> str:
    return f"{n}-Turn" if n == 1 or n == 0 else f"{n}-Turns"


@dataclass(frozen=True)
class RunRecord:
    path: Path
    target: str
    turns: int
    backend: str
    report: dict[str, Any]
    mean_seconds: float | None


def collect_runs(root: str | Path) -> list[RunRecord]:
    runs = []
    for rp in sorted(Path(root).rglob("report.json")):
        rep = json.loads(rp.read_text(encoding="utf-8"))
        cfg = rep.get("config", {})
        timing = rp.with_name("timings.json")
        mean = json.loads(timing.read_text())["mean_seconds"] if timing.exists() else None
        target = cfg.get("target", "?")
        if str(target).startswith("remote:") and cfg.get("model") not in (None, "default"):
            target = cfg["model"]
        runs.append(RunRecord(rp.parent, str(target), int(rep["turns"]),
                              str(cfg.get("backend", "?")), rep, mean))
    return runs


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]

    def line(cells: list[str]) -> str:
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(header), sep, *(line(r) for r in rows)])


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100 * x:.2f}%"


def build_tables(runs: list[RunRecord]) -> dict[str, Any]:
    turns = sorted({r.turns for r in runs})
    targets = sorted({r.target for r in runs})
    backends = [(b, label) for b, label in BACKEND_COLUMNS if any(r.backend == b for r in runs)]
    first: dict[int, RunRecord] = {}
    for r in runs:
        first.setdefault(r.turns, r)
    cell: dict[tuple[str, int, str], RunRecord] = {}
    for r in runs:
        cell.setdefault((r.target, r.turns, r.backend), r)

    overview = {
        "header": ["Metric", *(turn_label(t) for t in turns)],
        "rows": [
            ["Total Ref.", *(str(first[t].report["total_refs"]) for t in turns)],
            ["Unique Ref.", *(str(first[t].report["unique_refs"]) for t in turns)],
            ["Total Samples", *(str(first[t].report["samples"]) for t in turns)],
        ],
    }

    timing_rows = []
    for b, label in backends:
        row = [label]
        for tg in targets:
            vals = [r.mean_seconds for r in runs
                    if r.target == tg and r.backend == b and r.mean_seconds is not None]
            row.append(f"{sum(vals) / len(vals):.6f}" if vals else "n/a")
        timing_rows.append(row)
    timing = {"header": ["Backend", *targets], "rows": timing_rows}

    def fp_table(key: str) -> dict[str, Any]:
        rows = []
        for tg in targets:
            for t in turns:
                row = [tg, turn_label(t)]
                for b, _ in backends:
                    r = cell.get((tg, t, b))
                    row.append(_pct(r.report[key]) if r else "n/a")
                rows.append(row)
        return {"header": ["Target", "Turns", *(label for _, label in backends)], "rows": rows}

    return {
        "dataset_overview": overview,
        "time_per_sample": timing,
        "fp_reference_rate": fp_table("fp_reference_rate"),
        "fp_sample_rate": fp_table("hallucination_rate"),
    }


def render_report(root: str | Path) -> str:
    runs = collect_runs(root)
    if not runs:
        return f"no report.json files under {root}\n"
    t = build_tables(runs)
    parts = [
        "Dataset overview", _table(t["dataset_overview"]["header"], t["dataset_overview"]["rows"]),
        "", "End-to-end time per sample (s)",
        _table(t["time_per_sample"]["header"], t["time_per_sample"]["rows"]),
        "", "False positive rate (false references / all extracted references)",
        _table(t["fp_reference_rate"]["header"], t["fp_reference_rate"]["rows"]),
        "", "False positive rate (samples with any false reference / samples)",
        _table(t["fp_sample_rate"]["header"], t["fp_sample_rate"]["rows"]),
        "", NOTE, "",
    ]
    return "\n".join(parts)
