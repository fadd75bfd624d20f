"""Multi-turn retrieval evaluation: histories, id extraction and metrics."""

from .dataset import Context, EvalSample, generate_dataset, load_dataset, make_doc_id, save_dataset
from .metrics import EvalResult, MetricsReport, Verdict, aggregate, eval_sample
from .prompts import (
    ASSISTANT_TEMPLATE,
    DEFAULT_ID_PATTERN,
    USER_TEMPLATE,
    build_history,
    default_system_prompt,
    extract_ids,
    render_assistant,
    render_user,
)
from .report import render_report
from .runner import EvalRun, PlantedTarget, TruthTarget, load_results, parse_target, run_eval

__all__ = [
    "ASSISTANT_TEMPLATE",
    "Context",
    "DEFAULT_ID_PATTERN",
    "EvalResult",
    "EvalRun",
    "EvalSample",
    "MetricsReport",
    "PlantedTarget",
    "TruthTarget",
    "USER_TEMPLATE",
    "Verdict",
    "aggregate",
    "build_history",
    "default_system_prompt",
    "eval_sample",
    "extract_ids",
    "generate_dataset",
    "load_dataset",
    "load_results",
    "make_doc_id",
    "parse_target",
    "render_assistant",
    "render_report",
    "render_user",
    "run_eval",
    "save_dataset",
]
