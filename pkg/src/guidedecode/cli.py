"""Command-line entry point: compile, decode, eval, report, gen-dataset.

Settings resolve as built-in defaults < ``--config`` JSON file < environment
(``GUIDEDECODE_<NAME>``) < flags. Every command that writes artifacts also
writes ``resolved_config.json`` beside them. Exit codes: 0 success, 1 usage
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from .errors import DeadEnd, GuidedDecodeError

log = logging.getLogger("guidedecode")

ENV_PREFIX = "GUIDEDECODE_"
SECRET_KEYS = {"api_key", "apikey", "token", "password", "secret"}

COMMON_DEFAULTS: dict[str, Any] = {
    "config": None,
    "json_errors": False,
    "log_level": "WARNING",
    "jobs": os.cpu_count() or 1,
}
DEFAULTS: dict[str, dict[str, Any]] = {
    "compile": {"regex": None, "grammar": None, "json_schema": None, "vocab": None,
                "backend": None, "out": None, "cache_capacity": 4096},
    "decode": {"backend": "fsm", "regex": None, "grammar": None, "json_schema": None,
               "vocab": None, "source": "mock:random:0", "max_tokens": 512, "seed": 0,
               "temperature": 1.0, "greedy": False, "overlap": False, "cache_capacity": 4096,
               "out": None},
    "eval": {"dataset": None, "turns": 0, "target": "mock:truth", "endpoint": None,
             "backend": "none", "seed": 0, "out": "runs/eval", "model": "default",
             "id_pattern": None, "system_prompt": None, "vocab": None,
             "api_key_env": "GUIDEDECODE_API_KEY", "hint_field": None, "timeout": 60.0,
             "max_retries": 2, "max_tokens": 2048},
    "report": {"input": None, "out": None, "format": "text"},
    "gen-dataset": {"samples": 750, "refs_per_sample": 6, "distractors": 2, "seed": 0,
                    "out": "."},
}
TYPES: dict[str, type] = {"jobs": int, "max_tokens": int, "seed": int, "turns": int,
                          "samples": int, "refs_per_sample": int, "distractors": int,
                          "max_retries": int, "temperature": float, "timeout": float,
                          "cache_capacity": int}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit(2)
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _cache_capacity(text: str) -> int | None:
    return None if text.lower() in ("none", "unbounded") else int(text)


def build_parser() -> _Parser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file of settings (flags override it)")
    common.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")

    parser = _Parser(prog="guidedecode", description="Constrained decoding toolkit.",
                     parents=[common], argument_default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def constraint_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--regex", help="regular expression constraint")
        p.add_argument("--grammar", help="grammar file")
        p.add_argument("--json-schema", help="JSON-schema file")
        p.add_argument("--vocab", help="vocabulary JSON file (default: built-in byte-level)")
        p.add_argument("--cache-capacity", type=_cache_capacity,
                       help="PDA mask cache entries; 0 disables, 'none' is unbounded")

    p = sub.add_parser("compile", parents=[common], argument_default=argparse.SUPPRESS,
                       help="compile a constraint and write its index or summary")
    constraint_args(p)
    p.add_argument("--backend", choices=["fsm", "pda", "enforcer"])
    p.add_argument("--out", help="output file")

    p = sub.add_parser("decode", parents=[common], argument_default=argparse.SUPPRESS,
                       help="run one constrained generation")
    constraint_args(p)
    p.add_argument("--backend", choices=["fsm", "pda", "enforcer", "none"])
    p.add_argument("--source", help="mock:<random|adversarial|scripted>:<seed> or remote:<url>")
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--overlap", action="store_true", help="compute masks while logits are fetched")
    p.add_argument("--out", help="directory for decode.json")

    p = sub.add_parser("eval", parents=[common], argument_default=argparse.SUPPRESS,
                       help="multi-turn reference evaluation")
    p.add_argument("--dataset", help="JSON-Lines dataset")
    p.add_argument("--turns", type=int, choices=[0, 1, 2])
    p.add_argument("--target", help="mock:truth | mock:planted:C/W,... | remote:<url>")
    p.add_argument("--endpoint", help="OpenAI-compatible base URL (same as --target remote:<url>)")
    p.add_argument("--backend", choices=["fsm", "pda", "enforcer", "none"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", help="model name sent to a remote target")
    p.add_argument("--id-pattern", help="regex capturing document ids")
    p.add_argument("--system-prompt", help="file holding the system prompt")
    p.add_argument("--vocab", help="vocabulary for mock guided decoding")
    p.add_argument("--api-key-env", help="environment variable holding the API key")
    p.add_argument("--hint-field", help="request field carrying the backend hint")
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--max-tokens", type=int)

    p = sub.add_parser("report", parents=[common], argument_default=argparse.SUPPRESS,
                       help="render comparison tables from eval runs")
    p.add_argument("--in", dest="input", help="directory containing eval runs")
    p.add_argument("--out", help="directory for report files")
    p.add_argument("--format", choices=["text", "json"])

    p = sub.add_parser("gen-dataset", parents=[common], argument_default=argparse.SUPPRESS,
                       help="write a synthetic evaluation dataset")
    p.add_argument("--samples", type=int)
    p.add_argument("--refs-per-sample", type=int)
    p.add_argument("--distractors", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (dataset.jsonl)")
    return parser


def _env_settings(keys: Sequence[str]) -> dict[str, Any]:
    out = {}
    for key in keys:
        raw = os.environ.get(ENV_PREFIX + key.upper().replace("-", "_"))
        if raw is None or key in ("config",):
            continue
        if key in TYPES:
            try:
                out[key] = TYPES[key](raw)
            except ValueError:
                raise UsageError(f"bad value for {ENV_PREFIX}{key.upper()}: {raw!r}") from None
        elif key in ("greedy", "overlap", "json_errors"):
            out[key] = raw.lower() in ("1", "true", "yes")
        else:
            out[key] = raw
    return out


def resolve(command: str, flags: dict[str, Any]) -> dict[str, Any]:
    cfg = {**COMMON_DEFAULTS, **DEFAULTS[command]}
    path = flags.get("config") or os.environ.get(ENV_PREFIX + "CONFIG")
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.get(command, data).items()}
        # a resolved_config.json echo names its command; accept it back for the same one
        if data.pop("command", command) != command:
            raise UsageError(f"config file was resolved for another command, not {command}")
        secrets = SECRET_KEYS & {k.lower() for k in data}
        if secrets:
            raise UsageError(f"credentials are not accepted in config files: {sorted(secrets)}")
        unknown = set(data) - set(cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update({k: v for k, v in data.items() if k in cfg})
        cfg["config"] = str(path)
    cfg.update(_env_settings(list(cfg)))
    cfg.update(flags)
    return cfg


def _write_config(directory: Path, command: str, cfg: dict[str, Any]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "resolved_config.json").write_text(
        json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_vocab(path: str | None):
    from .vocab import byte_level_vocabulary, load_vocabulary

    return load_vocabulary(path) if path else byte_level_vocabulary()


def _constraint_inputs(cfg: dict[str, Any]) -> dict[str, Any]:
    given = [k for k in ("regex", "grammar", "json_schema") if cfg.get(k) is not None]
    if len(given) > 1:
        raise UsageError("give only one of --regex, --grammar, --json-schema")
    out: dict[str, Any] = {}
    if cfg.get("regex") is not None:
        out["regex"] = cfg["regex"]
    if cfg.get("grammar") is not None:
        out["grammar"] = Path(cfg["grammar"]).read_text(encoding="utf-8")
    if cfg.get("json_schema") is not None:
        out["schema"] = json.loads(Path(cfg["json_schema"]).read_text(encoding="utf-8"))
    return out


def cmd_compile(cfg: dict[str, Any]) -> int:
    from .decoder import build_constraint
    from .regex import save_index

    inputs = _constraint_inputs(cfg)
    if not inputs:
        raise UsageError("compile needs --regex, --grammar or --json-schema")
    backend = cfg["backend"] or ("fsm" if "regex" in inputs else "pda")
    vocab = _load_vocab(cfg["vocab"])
    start = time.perf_counter()
    constraint, _ = build_constraint(backend, vocab, cache_capacity=cfg["cache_capacity"], **inputs)
    elapsed = time.perf_counter() - start
    summary: dict[str, Any] = {"backend": backend, "vocab_size": vocab.size,
                               "build_seconds": round(elapsed, 6)}
    if backend == "fsm":
        summary["states"] = constraint.fsm.num_states
        summary["dead_tokens"] = len(constraint.index.dead_tokens)
    elif backend == "pda":
        eng = constraint.engine
        summary["rules"] = len(eng.grammar.rules)
        summary["positions"] = eng.num_positions
        summary["context_dependent_pairs"] = sum(
            len(c.cd_ids) for c in eng.classes.values())
    out = cfg["out"]
    if out:
        out_path = Path(out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        if backend == "fsm":
            save_index(constraint, out_path)
        else:
            out_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        _write_config(out_path.parent, "compile", cfg)
        summary["out"] = str(out_path)
    print(json.dumps(summary))
    return 0


def cmd_decode(cfg: dict[str, Any]) -> int:
    from .decoder import DecodeConfig, build_constraint, decode
    from .sources import parse_source

    inputs = _constraint_inputs(cfg)
    if not inputs and cfg["backend"] != "none":
        raise UsageError("decode needs --regex, --grammar or --json-schema unless --backend none")
    vocab = _load_vocab(cfg["vocab"])
    constraint, check = build_constraint(cfg["backend"], vocab,
                                         cache_capacity=cfg["cache_capacity"], **inputs)
    try:
        source = parse_source(cfg["source"], vocab.size, vocab.eos_id)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dcfg = DecodeConfig(backend=cfg["backend"], max_tokens=cfg["max_tokens"],
                        temperature=cfg["temperature"], seed=cfg["seed"], greedy=cfg["greedy"],
                        overlap=cfg["overlap"], on_dead_end="return")
    out = decode(source, constraint, dcfg, check)
    text = out.dumps()
    print(text)
    if cfg["out"]:
        d = Path(cfg["out"])
        _write_config(d, "decode", cfg)
        (d / "decode.json").write_text(text + "\n", encoding="utf-8")
    return 2 if out.finish_reason == "dead_end" else 0


def cmd_eval(cfg: dict[str, Any]) -> int:
    from .harness import DEFAULT_ID_PATTERN, load_dataset, run_eval

    if not cfg["dataset"]:
        raise UsageError("eval needs --dataset")
    target = f"remote:{cfg['endpoint']}" if cfg["endpoint"] else cfg["target"]
    cfg = {**cfg, "target": target, "id_pattern": cfg["id_pattern"] or DEFAULT_ID_PATTERN}
    samples = load_dataset(cfg["dataset"])
    prompt = (Path(cfg["system_prompt"]).read_text(encoding="utf-8").strip()
              if cfg["system_prompt"] else None)
    vocab = _load_vocab(cfg["vocab"]) if cfg["vocab"] else None
    out = Path(cfg["out"])
    _write_config(out, "eval", cfg)
    run = run_eval(
        samples, cfg["turns"], target, cfg["backend"], seed=cfg["seed"], jobs=cfg["jobs"],
        id_pattern=cfg["id_pattern"], system_prompt=prompt, vocab=vocab, model=cfg["model"],
        api_key_env=cfg["api_key_env"], hint_field=cfg["hint_field"], timeout=cfg["timeout"],
        max_retries=cfg["max_retries"], max_tokens=cfg["max_tokens"], out_dir=out,
        config={"dataset": str(cfg["dataset"])},
    )
    r = run.report
    print(json.dumps({"out": str(out), "samples": r.samples, "failures": r.failures,
                      "success_rate": float(r.success_rate),
                      "hallucination_rate": float(r.hallucination_rate),
                      "fp_reference_rate": float(r.fp_reference_rate)}))
    return 0


def cmd_report(cfg: dict[str, Any]) -> int:
    from .harness.report import build_tables, collect_runs, render_report

    if not cfg["input"]:
        raise UsageError("report needs --in")
    if not Path(cfg["input"]).is_dir():
        raise FileNotFoundError(f"no such directory: {cfg['input']}")
    if cfg["format"] == "json":
        text = json.dumps(build_tables(collect_runs(cfg["input"])), indent=2) + "\n"
    else:
        text = render_report(cfg["input"])
    sys.stdout.write(text)
    if cfg["out"]:
        d = Path(cfg["out"])
        _write_config(d, "report", cfg)
        (d / ("report.json" if cfg["format"] == "json" else "report.md")).write_text(text, encoding="utf-8")
    return 0


def cmd_gen_dataset(cfg: dict[str, Any]) -> int:
    from .harness import generate_dataset, save_dataset

    rows = generate_dataset(cfg["samples"], cfg["refs_per_sample"], cfg["seed"], cfg["distractors"])
    d = Path(cfg["out"])
    _write_config(d, "gen-dataset", cfg)
    save_dataset(rows, d / "dataset.jsonl")
    print(json.dumps({"out": str(d / "dataset.jsonl"), "samples": len(rows)}))
    return 0


COMMANDS = {"compile": cmd_compile, "decode": cmd_decode, "eval": cmd_eval,
            "report": cmd_report, "gen-dataset": cmd_gen_dataset}


def _fail(code: int, exc: BaseException, as_json: bool) -> int:
    if as_json:
        payload: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc).strip(),
                                   "exit_code": code}
        if isinstance(exc, DeadEnd):
            payload["prefix_ids"] = exc.prefix_ids
        sys.stderr.write(json.dumps(payload) + "\n")
    else:
        sys.stderr.write(f"error: {str(exc).strip()}\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--json-errors" in argv
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
        command = ns.pop("command", None)
        if command is None:
            raise UsageError(parser.format_help())
        cfg = resolve(command, ns)
        as_json = bool(cfg["json_errors"])
        logging.basicConfig(level=cfg["log_level"], stream=sys.stderr,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        if cfg["jobs"] < 1:
            raise UsageError("--jobs must be >= 1")
        return COMMANDS[command](cfg)
    except UsageError as exc:
        return _fail(1, exc, as_json)
    except (GuidedDecodeError, OSError, ValueError) as exc:
        return _fail(2, exc, as_json)


if __name__ == "__main__":
    sys.exit(main())
