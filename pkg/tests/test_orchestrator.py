from __future__ import annotations

import pytest

from riva.agents.orchestrator import OrchestratorConfig, RivaRun, run_riva
from riva.agents.prompts import read_context
from riva.agents.protocol import TaskType, fenced
from riva.agents.scripted import DEFAULT_RULES, default_backend, load_script
from riva.agents.trajectory import Actor, StepKind, Termination
from riva.env import Environment
from riva.llm import BackendUnavailable, Rule, ScriptedBackend
from riva.spec import parse_spec
from riva.toolkit import NO_FAULTS, default_registry, fault_condition

SPEC = parse_spec(
    """\
specification tiny
resource web {
  process = "nginx"
}
property web-up: service_running on web
property web-logs: logs_clean("ERROR") on web
"""
)


def verifier_sequence(*replies):
    """Verifier replies from a fixed list (last one repeats); tool generation uses the default policy."""
    state = {"i": 0, "contexts": []}

    def verifier(messages):
        state["contexts"].append(read_context(messages[-1].content))
        reply = replies[min(state["i"], len(replies) - 1)]
        state["i"] += 1
        return reply if isinstance(reply, str) else fenced(reply)

    rules = [Rule(r"\AROLE: verifier", verifier, on="system")] + DEFAULT_RULES[1:]
    return ScriptedBackend(rules, "?"), state


def run(backend, k=2, max_steps=45, faults=NO_FAULTS, spec=SPEC, **kw):
    env = Environment(spec, 0)
    return run_riva(TaskType.DETECTION, env, default_registry(), faults, backend, OrchestratorConfig(k, max_steps, **kw))


def test_config_validation():
    with pytest.raises(ValueError, match="k must be ≥ 1"):
        OrchestratorConfig(k=0)
    with pytest.raises(ValueError):
        OrchestratorConfig(max_steps=0)


def test_default_policy_run_shape():
    res = run(default_backend())
    traj = res.trajectory
    assert traj.terminated_by is Termination.SUBMIT
    assert res.solution.answer == "no"
    # 2 properties x (2 verifier requests + 2 generations) + final submit
    assert traj.steps_used == 9
    assert set(res.verdicts) == {"web-up", "web-logs"}
    assert all(len(res.history.records(g)) == 2 for g in res.verdicts)
    analysis = [s for s in traj.steps if s.actor is Actor.TOOLGEN and s.kind is StepKind.REASONING]
    assert analysis and all(not s.counted and s.token_usage is not None for s in analysis)
    resets = [s for s in traj.steps if s.kind is StepKind.CONTEXT_RESET]
    assert len(resets) == 4


def test_premature_conclusion_rejected():
    backend, state = verifier_sequence(
        {"action": "conclude", "property": "web-up", "verdict": "satisfied", "evidence": [0, 1]},
        {"action": "submit", "answer": "no"},
    )
    res = run(backend)
    assert res.verdicts == {}
    assert any("conclude rejected" in f and "0 of 2" in f for f in state["contexts"][1]["feedback"])
    assert res.solution.answer == "no"


def test_conclusion_must_cite_k_records():
    backend, state = verifier_sequence(
        {"action": "request_generation", "property": "web-up"},
        {"action": "request_generation", "property": "web-up"},
        {"action": "conclude", "property": "web-up", "verdict": "satisfied", "evidence": [0]},
        {"action": "submit", "answer": "no"},
    )
    res = run(backend)
    assert "web-up" not in res.verdicts
    assert any("conclude rejected" in f for f in state["contexts"][3]["feedback"])


def test_inconclusive_needs_no_records():
    backend, _ = verifier_sequence(
        [{"action": "conclude", "property": "web-up", "verdict": "inconclusive"}, {"action": "submit", "answer": "no"}]
    )
    res = run(backend)
    assert res.verdicts["web-up"].value.value == "inconclusive"


def test_abandon_is_final_and_drops_verdict():
    backend, state = verifier_sequence(
        [
            {"action": "conclude", "property": "web-up", "verdict": "inconclusive"},
            {"action": "abandon_goal", "property": "web-up"},
            {"action": "request_generation", "property": "web-up"},
        ],
        [{"action": "abandon_goal", "property": "web-up"}, {"action": "submit", "answer": "no"}],
    )
    res = run(backend)
    assert "web-up" not in res.verdicts
    feedback = state["contexts"][1]["feedback"]
    assert any("request_generation rejected" in f and "abandoned" in f for f in feedback)
    assert res.history.records("web-up") == ()


def test_agent_added_goal():
    backend, _ = verifier_sequence(
        [{"action": "add_goal", "property": "extra", "description": "look around"}, {"action": "submit", "answer": "no"}]
    )
    res = run(backend)
    assert res.history.snapshot()["goals"]["extra"]["origin"] == "agent_added"


def test_actions_after_request_ignored():
    backend, state = verifier_sequence(
        [{"action": "request_generation", "property": "web-up"}, {"action": "submit", "answer": "yes"}],
        {"action": "submit", "answer": "no"},
    )
    res = run(backend)
    assert res.solution.answer == "no"
    assert "actions after request_generation were ignored" in state["contexts"][1]["feedback"]


def test_reprompt_then_protocol_violation_costs_steps():
    backend, state = verifier_sequence("hmm", "still prose", "nope", {"action": "submit", "answer": "no"})
    res = run(backend)
    # two failed replies form one violation; the third fails and the fourth recovers
    assert res.trajectory.steps_used == 4
    assert res.solution.answer == "no"
    assert state["contexts"][1] is None  # the reprompt carries no state
    assert any("protocol violation" in f for f in state["contexts"][2]["feedback"])


def test_step_cap():
    backend, _ = verifier_sequence({"action": "request_generation", "property": "ghost"})
    res = run(backend, max_steps=7)
    assert res.trajectory.terminated_by is Termination.STEP_CAP
    assert res.trajectory.steps_used == 7 and res.solution is None


def test_budget_never_exceeded_mid_generation():
    backend, _ = verifier_sequence({"action": "request_generation", "property": "web-up"})
    for cap in range(1, 12):
        assert run(backend, max_steps=cap).trajectory.steps_used <= cap


def test_backend_error_terminates():
    def boom(messages):
        raise BackendUnavailable("down")

    res = run(ScriptedBackend([Rule("", boom)]))
    assert res.trajectory.terminated_by is Termination.BACKEND_ERROR
    assert "BackendUnavailable" in res.trajectory.error


def test_duplicate_tool_rejected_without_execution():
    calls = iter(
        [
            fenced({"action": "call", "tool": "exec", "args": {"target": "web", "command": "ps"}}),
            fenced({"action": "record", "analysis": "[ok] running"}),
            fenced({"action": "call", "tool": "exec", "args": {"target": "web", "command": "stats"}}),
        ]
    )
    backend, state = verifier_sequence({"action": "request_generation", "property": "web-up"})
    backend.rules[1] = Rule(r"\AROLE: tool-generation", lambda m: next(calls, fenced({"action": "call", "tool": "exec", "args": {}})), on="system")
    env = Environment(SPEC, 0)
    r = RivaRun(TaskType.DETECTION, env, default_registry(), NO_FAULTS, backend, OrchestratorConfig(2, 45))
    r.apply(r.verifier_step())
    clock = env.clock
    r.apply(r.verifier_step())
    assert env.clock == clock  # the duplicate was never run
    assert len(r.history.records("web-up")) == 1
    steps = [s for s in r.trajectory.steps if s.payload.get("rejected") == "duplicate_tool"]
    assert steps and all(s.counted for s in steps)


def test_typo_correction_kept_as_exploratory(scenarios):
    sc = scenarios["web-edge-typo"]
    res = run_riva(
        TaskType.DETECTION,
        sc.build(),
        default_registry(),
        NO_FAULTS,
        load_script(sc.script),
        OrchestratorConfig(2, 45, record_exploratory=True),
    )
    snap = res.history.snapshot()["goals"]["web-logs"]
    assert len(snap["records"]) == 2
    assert snap["records"][0]["args"] == {"service": "web"}
    assert len(snap["exploratory"]) == 1 and "servcie" in snap["exploratory"][0]["result"]
    assert res.solution.answer == "yes"


def test_starvation_loops_to_step_cap(scenarios):
    sc = scenarios["worker-logs-2s"]
    res = run_riva(TaskType.DETECTION, sc.build(), default_registry(), NO_FAULTS, load_script(sc.script), OrchestratorConfig(3))
    assert res.trajectory.terminated_by is Termination.STEP_CAP
    assert res.verdicts == {} and not res.history.is_conclusive("worker-logs")
    assert len(res.history.records("worker-logs")) == 2


def test_history_listener_sees_records():
    seen = []
    env = Environment(SPEC, 0)
    run_riva(
        TaskType.DETECTION, env, default_registry(), fault_condition("get_logs"), default_backend(),
        on_history=lambda h: seen.append(sum(len(h.records(g)) for g in h.goal_ids)),
    )
    assert seen[-1] == 4 and seen == sorted(seen)
