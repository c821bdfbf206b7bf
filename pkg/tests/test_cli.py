from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from conftest import GOLDEN, golden_config
from facteval.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def golden_flags(tmp_path, run_id="golden"):
    return [
        "--run-id", run_id,
        "--prompts", str(GOLDEN / "prompts.jsonl"),
        "--output-dir", str(tmp_path / "out"),
        "--source-kind", "local_corpus",
        "--corpus", str(GOLDEN / "corpus.jsonl"),
        "--top-k", "1",
        "--similarity", "jaccard",
        "--mock-script", str(GOLDEN / "mock_script.json"),
        "--retry-base-delay", "0",
        "--cache-root", str(tmp_path / "cache"),
    ]


def test_run_command_success(runner, tmp_path):
    result = runner.invoke(main, ["run", *golden_flags(tmp_path)])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output)
    assert summary["status"] == "ok"
    assert summary["macro"]["macro_prec"] == 0.75
    assert (tmp_path / "out" / "golden" / "report.md").exists()


def test_config_file_with_flag_override(runner, tmp_path):
    cfg = golden_config(tmp_path).model_dump(mode="json")
    cfg["run_id"] = "from-file"
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    result = runner.invoke(main, ["run", "--config", str(cfg_path),
                                  "--run-id", "overridden"])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["run_id"] == "overridden"
    assert (tmp_path / "out" / "overridden").is_dir()


def test_partial_failure_exits_2(runner, tmp_path):
    script = json.loads((GOLDEN / "mock_script.json").read_text(encoding="utf-8"))
    script["chat"].insert(0, {
        "tag": "precision_judge",
        "contains": "Claim:\n\nAdam Brody is an American actor.",
        "error": "network",
    })
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script), encoding="utf-8")
    flags = golden_flags(tmp_path, run_id="failing")
    flags[flags.index(str(GOLDEN / "mock_script.json"))] = str(script_path)
    result = runner.invoke(main, ["run", *flags])
    assert result.exit_code == 2, result.output
    summary = json.loads(result.output)
    assert summary["failed_prompts"] == {"p1": summary["failed_prompts"]["p1"]}


def test_fatal_error_exits_1(runner, tmp_path):
    flags = golden_flags(tmp_path)
    flags[flags.index(str(GOLDEN / "prompts.jsonl"))] = str(tmp_path / "missing.jsonl")
    result = runner.invoke(main, ["run", *flags])
    assert result.exit_code == 1
    assert "error" in result.output or "error" in (result.stderr or "")


def test_stage_and_report_commands(runner, tmp_path):
    result = runner.invoke(main, ["score", *golden_flags(tmp_path)])
    assert result.exit_code == 0, result.output
    run_dir = str(tmp_path / "out" / "golden")
    report = runner.invoke(main, ["report", run_dir])
    assert report.exit_code == 0, report.output
    assert "# Run report: golden" in report.output


def test_resume_command(runner, tmp_path):
    first = runner.invoke(main, ["run", *golden_flags(tmp_path)])
    assert first.exit_code == 0
    run_dir = str(tmp_path / "out" / "golden")
    Path(run_dir, "report.json").unlink()
    result = runner.invoke(main, ["resume", run_dir])
    assert result.exit_code == 0, result.output
    assert Path(run_dir, "report.json").exists()


def test_generate_stage_command(runner, tmp_path):
    result = runner.invoke(main, ["generate", *golden_flags(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "golden" / "responses.jsonl").exists()
    assert not (tmp_path / "out" / "golden" / "evidence.jsonl").exists()


def test_invalid_config_exits_1(runner, tmp_path):
    flags = golden_flags(tmp_path) + ["--alpha", "0", "--beta", "0"]
    result = runner.invoke(main, ["run", *flags])
    assert result.exit_code == 1
