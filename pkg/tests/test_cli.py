from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
from pathlib import Path

import pytest

from guidedecode.cli import main
from guidedecode.schema import RAG_RESPONSE_SCHEMA

from conftest import FIXTURES


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("GUIDEDECODE_"):
            monkeypatch.delenv(key)


def run(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_decode_smoke(capsys):
    code, out, _ = run(capsys, "decode", "--backend", "fsm", "--regex", "[0-9]+", "--vocab",
                       str(FIXTURES / "vocab_binary.json"), "--source", "mock:random:7")
    doc = json.loads(out)
    assert code == 0 and set(doc) >= {"text", "token_ids", "finish_reason", "steps"}
    if doc["finish_reason"] == "eos":
        assert doc["text"].isdigit() and doc["valid"] is True


def test_decode_is_deterministic(capsys):
    args = ("decode", "--backend", "pda", "--regex", "[a-c]{2,5}", "--source", "mock:random:3",
            "--seed", "4")
    assert run(capsys, *args)[1] == run(capsys, *args)[1]


def test_decode_schema_greedy_enforcer(capsys, tmp_path):
    schema = tmp_path / "s.json"
    schema.write_text(json.dumps(RAG_RESPONSE_SCHEMA))
    code, out, _ = run(capsys, "decode", "--backend", "enforcer", "--json-schema", str(schema),
                       "--source", "mock:adversarial:1", "--max-tokens", "40",
                       "--out", str(tmp_path / "o"))
    assert code == 0 and json.loads(out)["finish_reason"] in ("eos", "max_tokens")
    assert json.loads((tmp_path / "o" / "decode.json").read_text()) == json.loads(out)
    resolved = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
    assert resolved["command"] == "decode" and resolved["max_tokens"] == 40


def test_decode_grammar_file(capsys):
    code, out, _ = run(capsys, "decode", "--backend", "pda", "--grammar",
                       str(FIXTURES / "json.ebnf"), "--source", "mock:random:2",
                       "--max-tokens", "30")
    assert code == 0 and json.loads(out)["finish_reason"] in ("eos", "max_tokens")


def test_decode_dead_end_exit_2(capsys, tmp_path):
    vocab = tmp_path / "v.json"
    vocab.write_text(json.dumps({"eos_id": 2, "tokens": ["a", "b", "</s>"]}))
    code, out, _ = run(capsys, "decode", "--regex", "[0-9]", "--vocab", str(vocab))
    assert code == 2 and json.loads(out)["finish_reason"] == "dead_end"


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "decode", "--bogus")
    assert code == 1 and "usage:" in err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["decode", "--regex", "a", "--grammar", "g"],
                                  ["eval"], ["report"], ["decode", "--source", "mock:x:1",
                                                         "--regex", "a"]])
def test_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 1


def test_runtime_error_json(capsys):
    code, _, err = run(capsys, "decode", "--regex", "(", "--json-errors")
    doc = json.loads(err)
    assert code == 2 and doc["error"] == "RegexSyntaxError" and doc["exit_code"] == 2
    code, _, err = run(capsys, "decode", "--nope", "--json-errors")
    assert code == 1 and json.loads(err)["exit_code"] == 1


def test_missing_file_is_runtime_error(capsys, tmp_path):
    assert run(capsys, "decode", "--vocab", str(tmp_path / "none.json"), "--regex", "a")[0] == 2


def test_config_precedence(capsys, tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"decode": {"max_tokens": 7, "seed": 1, "regex": "[ab]+",
                                          "backend": "fsm"}}))
    out_dir = tmp_path / "o"

    def resolved():
        return json.loads((out_dir / "resolved_config.json").read_text())

    run(capsys, "decode", "--config", str(cfg), "--out", str(out_dir))
    assert (resolved()["max_tokens"], resolved()["seed"]) == (7, 1)
    monkeypatch.setenv("GUIDEDECODE_MAX_TOKENS", "9")
    run(capsys, "decode", "--config", str(cfg), "--out", str(out_dir))
    assert (resolved()["max_tokens"], resolved()["seed"]) == (9, 1)
    run(capsys, "decode", "--config", str(cfg), "--out", str(out_dir), "--max-tokens", "3")
    assert resolved()["max_tokens"] == 3 and resolved()["regex"] == "[ab]+"


def test_flat_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"regex": "x", "max-tokens": 2}))
    code, out, _ = run(capsys, "decode", "--config", str(cfg), "--greedy")
    assert code == 0 and json.loads(out)["text"] == "x"


@pytest.mark.parametrize("content", [{"decode": {"api_key": "sk-1"}}, {"token": "t"},
                                     {"decode": {"colour": "red"}}, [1, 2]])
def test_bad_config_rejected(capsys, tmp_path, content):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(content))
    code, _, err = run(capsys, "decode", "--config", str(cfg), "--regex", "a")
    assert code == 1
    if "api_key" in json.dumps(content) or "token" in json.dumps(content):
        assert "credentials" in err


def test_compile_fsm_index_and_summary(capsys, tmp_path):
    code, out, _ = run(capsys, "compile", "--regex", "[0-9]{2}", "--out", str(tmp_path / "i.json"))
    doc = json.loads(out)
    assert code == 0 and doc["backend"] == "fsm" and doc["states"] >= 3
    from guidedecode.regex import load_index
    from guidedecode.vocab import byte_level_vocabulary

    idx = load_index(tmp_path / "i.json", byte_level_vocabulary())
    assert idx.fsm.accepts(b"42")
    assert (tmp_path / "resolved_config.json").exists()
    code, out, _ = run(capsys, "compile", "--grammar", str(FIXTURES / "json.ebnf"))
    assert code == 0 and json.loads(out)["backend"] == "pda"


def test_gen_eval_report_pipeline(capsys, tmp_path):
    assert run(capsys, "gen-dataset", "--samples", "8", "--seed", "1", "--out", str(tmp_path))[0] == 0
    data = tmp_path / "dataset.jsonl"
    runs = tmp_path / "runs"
    for backend in ("fsm", "none"):
        code, out, _ = run(capsys, "eval", "--dataset", str(data), "--turns", "1",
                           "--target", "mock:planted:1/0,0/1", "--backend", backend,
                           "--out", str(runs / backend), "--jobs", "2")
        assert code == 0 and json.loads(out)["samples"] == 7
        assert (runs / backend / "resolved_config.json").exists()
    code, out, _ = run(capsys, "report", "--in", str(runs), "--out", str(tmp_path / "rep"))
    assert code == 0 and "| Metric" in out
    assert (tmp_path / "rep" / "report.md").read_text() == out
    code, out, _ = run(capsys, "report", "--in", str(runs), "--format", "json")
    assert set(json.loads(out)) == {"dataset_overview", "time_per_sample", "fp_reference_rate",
                                    "fp_sample_rate"}
    assert run(capsys, "report", "--in", str(tmp_path / "missing"))[0] == 2


def test_eval_unreachable_remote_exit_0(capsys, tmp_path):
    run(capsys, "gen-dataset", "--samples", "3", "--out", str(tmp_path))
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    code, out, _ = run(capsys, "eval", "--dataset", str(tmp_path / "dataset.jsonl"),
                       "--endpoint", f"http://127.0.0.1:{port}/v1", "--backend", "pda",
                       "--max-retries", "0", "--out", str(tmp_path / "r"))
    assert code == 0 and json.loads(out)["failures"] == 3
    assert json.loads((tmp_path / "r" / "report.json").read_text())["failures"] == 3
    resolved = json.loads((tmp_path / "r" / "resolved_config.json").read_text())
    assert resolved["target"] == f"remote:http://127.0.0.1:{port}/v1"


def test_eval_resolved_config_reproduces_run(capsys, tmp_path):
    run(capsys, "gen-dataset", "--samples", "6", "--out", str(tmp_path))
    args = ["eval", "--dataset", str(tmp_path / "dataset.jsonl"), "--target",
            "mock:planted:2/1", "--backend", "enforcer", "--turns", "2"]
    run(capsys, *args, "--out", str(tmp_path / "a"))
    resolved = tmp_path / "a" / "resolved_config.json"
    code, _, _ = run(capsys, "eval", "--config", str(resolved), "--out", str(tmp_path / "b"))
    a = (tmp_path / "a" / "results.jsonl").read_bytes()
    assert code == 0 and a == (tmp_path / "b" / "results.jsonl").read_bytes()
    assert run(capsys, "decode", "--config", str(resolved))[0] == 1


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "guidedecode.cli", "decode", "--regex", "ab",
                           "--greedy"], capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0 and json.loads(proc.stdout)["text"] == "ab"
    proc = subprocess.run([sys.executable, "-m", "guidedecode.cli", "--bad"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 1
