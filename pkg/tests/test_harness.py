from __future__ import annotations

import csv
import json

import pytest

from riva.agents.protocol import Solution, TaskType
from riva.env import GroundTruth
from riva.harness import (
    AggregateReport,
    RunReport,
    Suite,
    Task,
    aggregate,
    empirical_cdf,
    evaluate,
    export,
    load_suite,
    normalize_component,
    parse_agent,
    render_export,
    resolve_suite,
    run_task,
    score,
    validate_report,
)

NO_FAULT = GroundTruth(frozenset(), None, None, ())
WEB_DOWN = GroundTruth(frozenset({"web-up"}), "web", "ServiceDown", ("web",))


def task(scenarios, name, ttype=None):
    return Task.from_scenario(scenarios[name], ttype)


@pytest.mark.parametrize(
    "text, norm",
    [("The Web service.", "web"), ("  WEB  ", "web"), ("node-1", "node-1"), ("the cart_svc component", "cart_svc")],
)
def test_normalize_component(text, norm):
    assert normalize_component(text) == norm


def test_score_detection(scenarios):
    t = task(scenarios, "shop-healthy")
    assert score(t, Solution(TaskType.DETECTION, "no"), NO_FAULT)
    assert score(t, Solution(TaskType.DETECTION, "No, all properties hold."), NO_FAULT)
    assert not score(t, Solution(TaskType.DETECTION, "yes"), NO_FAULT)
    assert score(t, Solution(TaskType.DETECTION, "yes"), WEB_DOWN)
    assert not score(t, None, NO_FAULT)


def test_score_localization(scenarios):
    t = task(scenarios, "web-port-drift")
    assert score(t, Solution(TaskType.LOCALIZATION, "the web service"), WEB_DOWN)
    assert score(t, Solution(TaskType.LOCALIZATION, "nginx"), WEB_DOWN)  # declared alias
    assert not score(t, Solution(TaskType.LOCALIZATION, "db"), WEB_DOWN)
    assert not score(t, Solution(TaskType.LOCALIZATION, "web, db"), WEB_DOWN)
    assert score(t, Solution(TaskType.LOCALIZATION, "none"), NO_FAULT)
    assert not score(t, Solution(TaskType.LOCALIZATION, "web"), NO_FAULT)


def test_score_analysis_is_conjunctive(scenarios):
    t = task(scenarios, "web-sg-drift")
    assert score(t, Solution(TaskType.ANALYSIS, "component=web; fault=ServiceDown"), WEB_DOWN)
    assert score(t, Solution(TaskType.ANALYSIS, "The web service is down (service down)."), WEB_DOWN)
    assert not score(t, Solution(TaskType.ANALYSIS, "component=web; fault=AttributeDrift"), WEB_DOWN)
    assert not score(t, Solution(TaskType.ANALYSIS, "component=db; fault=ServiceDown"), WEB_DOWN)
    assert score(t, Solution(TaskType.ANALYSIS, "component=none; fault=none"), NO_FAULT)


def test_expected_answers_score_true(scenarios):
    for sc in scenarios.values():
        t = Task.from_scenario(sc)
        assert score(t, Solution(t.type, t.expected), sc.ground_truth()), sc.name


def test_empirical_cdf():
    assert empirical_cdf([10, 12, 12, 15, 17]) == [(10, 0.2), (12, 0.6), (15, 0.8), (17, 1.0)]
    assert empirical_cdf([]) == []


def test_parse_agent():
    assert parse_agent("riva").label == "riva:2"
    assert parse_agent("riva:3").k == 3
    assert parse_agent("react").k is None
    with pytest.raises(ValueError, match="k must be ≥ 1"):
        parse_agent("riva:0")
    with pytest.raises(ValueError):
        parse_agent("gpt")


def test_cardinality_and_layout(scenarios, tmp_path):
    t = task(scenarios, "checkout-log-burst")
    suite = Suite("one", [t], [parse_agent("riva:2"), parse_agent("react")], ["none", "get_logs"], repetitions=5)
    report = evaluate(suite, out_dir=tmp_path, workers=3)
    assert len(report.runs) == 20
    for r in report.runs:
        d = tmp_path / "runs" / r.task_id / ("riva-k2" if r.agent == "riva:2" else "react") / r.condition / str(r.rep)
        assert {p.name for p in d.iterdir()} == {"trajectory.json", "history.json", "report.json"}
        assert json.loads((d / "report.json").read_text()) == r.to_json()
    assert (tmp_path / "aggregate.json").read_text() == report.to_json()
    rates = {(g.agent, g.condition): g.success_rate for g in report.groups}
    assert rates[("riva:2", "get_logs")] == 1.0 and rates[("react", "get_logs")] == 0.0


def test_seeds_must_be_distinct(scenarios):
    with pytest.raises(ValueError):
        Suite("s", [task(scenarios, "shop-healthy")], [parse_agent("react")], ["none"], 2, [1, 1])
    with pytest.raises(ValueError):
        Suite("s", [], [parse_agent("react")], ["lightning"])


def test_run_failure_recorded_not_raised(scenarios):
    class Broken:
        name = "broken"
        temperature = 0.0

        def chat(self, messages):
            raise RuntimeError("kaboom")

    report, _ = run_task(task(scenarios, "shop-healthy"), parse_agent("riva"), "none", backend=Broken())
    assert report.terminated_by == "run_error" and not report.success
    assert "kaboom" in report.error
    assert validate_report(report.to_json()) == []


def test_report_schema_validation():
    bad = {"task_id": 1}
    assert validate_report(bad)
    assert validate_report([]) == ["not an object"]


def test_aggregate_both_rates():
    def rr(task_id, rep, ok):
        return RunReport(task_id, "detection", "react", None, "none", rep, rep, ok, 3, 10, 20, True, "submit", "h", "b", 0.0, "x", "x")

    runs = [rr("a", 0, True), rr("a", 1, True), rr("a", 2, True), rr("b", 0, False)]
    g = aggregate("s", 3, [0, 1, 2], runs).groups[0]
    assert g.success_rate == 0.75
    assert g.task_mean_success_rate == 0.5


def test_export_formats(scenarios, tmp_path):
    empty = AggregateReport("empty", 5, [0, 1, 2, 3, 4], [], [])
    assert render_export(empty, "csv").strip().count("\n") == 0
    assert render_export(empty, "cdf-csv") == "agent,condition,task_type,metric,value,cumulative_fraction\n"
    suite = load_suite(resolve_suite("smoke"))
    report = evaluate(suite)
    path = export(report, "json", tmp_path / "r.json")
    assert AggregateReport.from_json(path.read_text()).to_json() == report.to_json()
    rows = list(csv.DictReader(export(report, "cdf-csv", tmp_path / "c.csv").open()))
    assert {r["metric"] for r in rows} == {"steps", "total_tokens", "max_context_tokens"}
    with pytest.raises(ValueError):
        render_export(report, "xml")


def test_replay_reproduces_run(scenarios):
    from riva.harness import ReplayBackend

    t = task(scenarios, "ping-stale")
    first, res = run_task(t, parse_agent("riva"), "get_logs")
    again, _ = run_task(t, parse_agent("riva"), "get_logs", backend=ReplayBackend(res.trajectory))
    assert (again.answer, again.steps, again.total_tokens) == (first.answer, first.steps, first.total_tokens)


def test_full_run_over_http_client(scenarios):
    import httpx

    from riva.agents.scripted import default_backend
    from riva.llm import ChatMessage, HttpChatBackend, Role

    policy = default_backend()

    def handler(request):
        body = json.loads(request.content)
        msgs = [ChatMessage(Role(m["role"]), m["content"]) for m in body["messages"]]
        return httpx.Response(200, json={"choices": [{"message": {"content": policy.reply(msgs)}}]})

    backend = HttpChatBackend("http://fake/v1", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    report, _ = run_task(task(scenarios, "cart-down"), parse_agent("riva"), "get_logs", backend=backend)
    assert report.success and report.backend == "http:m" and report.tokens_estimated
    assert validate_report(report.to_json()) == []
