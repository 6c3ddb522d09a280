from __future__ import annotations

import json

import pytest

from conftest import build_fixture_corpus, write_run_config
from limgen.cli import main


@pytest.fixture
def corpus(tmp_path):
    return build_fixture_corpus(tmp_path / "corpus")


def test_validate_config_ok(corpus, tmp_path, capsys):
    config = write_run_config(corpus, tmp_path / "runs")
    assert main(["validate-config", "--config", str(config)]) == 0
    assert "config ok" in capsys.readouterr().out


def test_validate_config_reports_problems(tmp_path, capsys):
    config = tmp_path / "bad.toml"
    config.write_text('[backend]\nkind = "teapot"\n', encoding="utf-8")
    assert main(["validate-config", "--config", str(config)]) == 1
    captured = capsys.readouterr()
    assert "config invalid" in captured.out
    assert "backend.kind" in captured.err


def test_missing_config_file_exits_1(tmp_path, capsys):
    assert main(["ingest", "--config", str(tmp_path / "nope.toml")]) == 1
    assert "config error" in capsys.readouterr().err


def test_generate_before_ingest_exits_1(corpus, tmp_path, capsys):
    config = write_run_config(corpus, tmp_path / "runs")
    assert main(["generate", "--config", str(config)]) == 1
    assert "dependency error" in capsys.readouterr().err


def test_report_before_evaluate_exits_1(corpus, tmp_path, capsys):
    config = write_run_config(corpus, tmp_path / "runs")
    assert main(["report", "--config", str(config)]) == 1
    assert "dependency error" in capsys.readouterr().err


def test_corrupt_paper_exits_2(corpus, tmp_path, capsys):
    (corpus / "papers" / "broken.json").write_text("{not json", encoding="utf-8")
    config = write_run_config(corpus, tmp_path / "runs")
    try:
        assert main(["ingest", "--config", str(config)]) == 2
        assert "runtime error" in capsys.readouterr().err
    finally:
        (corpus / "papers" / "broken.json").unlink()


def test_full_pipeline_via_cli(corpus, tmp_path, capsys):
    runs = tmp_path / "runs"
    config = write_run_config(corpus, runs)

    assert main(["ingest", "--config", str(config)]) == 0
    assert "ingested 3 papers" in capsys.readouterr().out
    assert main(["generate", "--config", str(config)]) == 0
    assert "generated limitations for 3 papers" in capsys.readouterr().out
    assert main(["evaluate", "--config", str(config)]) == 0
    assert "evaluated 3 papers" in capsys.readouterr().out

    run_root = runs / "test-run"
    for pid in ("paper-alpha", "paper-beta", "paper-gamma"):
        assert (run_root / "ingest" / pid / "ground_truth.json").exists()
        assert (run_root / "ingest" / pid / "record.json").exists()
        assert (run_root / "ingest" / pid / "citations.json").exists()
        assert (run_root / "generate" / pid / "final_limitations.json").exists()
        assert (run_root / "generate" / pid / "agent_extractor.json").exists()
        assert (run_root / "generate" / pid / "scorecards_analyzer.json").exists()
        assert (run_root / "evaluate" / pid / "coverage.json").exists()
        assert (run_root / "evaluate" / pid / "quality.json").exists()
    assert (run_root / "manifest.json").exists()

    # ground truth was actually built from both streams
    truth = json.loads(
        (run_root / "ingest" / "paper-alpha" / "ground_truth.json").read_text()
    )
    assert truth["items"]

    report_out = tmp_path / "report.txt"
    assert main(["report", "--config", str(config), "--out", str(report_out)]) == 0
    table = report_out.read_text(encoding="utf-8")
    assert "paper-alpha" in table and "mean" in table

    # resumable: re-running a stage leaves artifacts untouched
    final_path = run_root / "generate" / "paper-alpha" / "final_limitations.json"
    before = final_path.stat().st_mtime_ns
    assert main(["generate", "--config", str(config)]) == 0
    assert final_path.stat().st_mtime_ns == before

    # --force regenerates
    assert main(["generate", "--config", str(config), "--force"]) == 0
    assert final_path.stat().st_mtime_ns != before


def test_papers_limit(corpus, tmp_path, capsys):
    config = write_run_config(corpus, tmp_path / "runs", run_id="limited")
    assert main(["ingest", "--config", str(config), "--papers", "1"]) == 0
    assert "ingested 1 papers" in capsys.readouterr().out
    ingest_root = tmp_path / "runs" / "limited" / "ingest"
    assert [p.name for p in sorted(ingest_root.iterdir())] == ["paper-alpha"]
