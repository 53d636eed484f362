from __future__ import annotations

import json
from pathlib import Path

import pytest

from riva.cli import build_parser, main
from riva.harness import corpus_path

GOLDEN = Path(__file__).parent / "golden"
SUBCOMMANDS = ("run", "eval", "inspect", "export", "list-tasks")


def help_text(*argv):
    parser = build_parser()
    if not argv:
        return parser.format_help()
    sub = next(a for a in parser._actions if a.dest == "command")
    return sub.choices[argv[0]].format_help()


@pytest.fixture(autouse=True)
def fixed_width(monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")


@pytest.mark.parametrize("cmd", ("",) + SUBCOMMANDS)
def test_help_golden(cmd):
    name = f"help-{cmd or 'main'}.txt"
    assert help_text(*([cmd] if cmd else [])) == (GOLDEN / name).read_text()


def test_k_zero_is_config_error(capsys):
    scenario = corpus_path("scenarios", "ping-stale.json")
    assert main(["run", "--scenario", str(scenario), "--k", "0"]) == 2
    assert "k must be ≥ 1" in capsys.readouterr().err


def test_missing_model_for_http(capsys, tmp_path):
    scenario = corpus_path("scenarios", "ping-stale.json")
    code = main(["run", "--scenario", str(scenario), "--backend", "http://localhost:1/v1", "--out", str(tmp_path)])
    assert code == 2 and "--model" in capsys.readouterr().err


def test_missing_scenario_file(capsys):
    assert main(["run", "--scenario", "nope.json"]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_run_writes_artifacts(tmp_path, capsys):
    scenario = corpus_path("scenarios", "ping-stale.json")
    script = corpus_path("scripts", "ping-stale.script.json")
    code = main(
        ["run", "--scenario", str(scenario), "--agent", "riva", "--k", "2", "--fault", "get_logs",
         "--backend", f"scripted:{script}", "--out", str(tmp_path)]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["success"] and report["steps"] <= 17
    d = tmp_path / "runs" / "ping-stale" / "riva-k2" / "get_logs" / "0"
    assert {p.name for p in d.iterdir()} == {"trajectory.json", "history.json", "report.json"}

    assert main(["inspect", str(d)]) == 0
    out = capsys.readouterr().out
    assert "node1-reach [open, from_spec] 2 record(s)" in out and "terminated by submit" in out

    code = main(["run", "--scenario", str(scenario), "--replay", str(d / "trajectory.json"), "--fault", "get_logs",
                 "--out", str(tmp_path / "replay")])
    assert code == 0 and json.loads(capsys.readouterr().out)["answer"] == report["answer"]


def test_strict_exit_on_scored_failure(tmp_path, capsys):
    scenario = corpus_path("scenarios", "checkout-log-burst.json")
    args = ["run", "--scenario", str(scenario), "--agent", "react", "--fault", "get_logs", "--out", str(tmp_path)]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 1


def test_eval_export_list(tmp_path, capsys):
    assert main(["eval", "--suite", "smoke", "--out", str(tmp_path), "--workers", "2"]) == 0
    for name in ("aggregate.json", "aggregate.csv", "cdf.csv"):
        assert (tmp_path / name).exists()
    capsys.readouterr()
    assert main(["export", "--report", str(tmp_path / "aggregate.json"), "--format", "csv", "--output", str(tmp_path / "x.csv")]) == 0
    assert (tmp_path / "x.csv").read_text().startswith("agent,condition,task_type,runs")
    assert main(["list-tasks", "--suite", "protocol"]) == 0
    out = capsys.readouterr().out
    assert "ping-stale" in out and "expected: node1" in out


def test_eval_cardinality_matches_suite_file(tmp_path, capsys):
    suite_file = corpus_path("suites", "protocol.json")
    suite = json.loads(suite_file.read_text())
    assert main(["eval", "--suite", str(suite_file), "--repetitions", "1", "--seed", "0", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "aggregate.json").read_text())
    assert len(report["runs"]) == len(suite["tasks"]) * len(suite["agents"]) * len(suite["conditions"])
    assert {(g["agent"], g["condition"]) for g in report["groups"]} == {
        (a, c) for a in suite["agents"] for c in suite["conditions"]
    }
