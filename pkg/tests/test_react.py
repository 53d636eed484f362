from __future__ import annotations

from riva.agents.protocol import TaskType, fenced
from riva.agents.react import run_react
from riva.agents.scripted import default_backend
from riva.agents.trajectory import StepKind, Termination
from riva.llm import Rule, ScriptedBackend
from riva.toolkit import NO_FAULTS, default_registry, fault_condition


def test_single_path_per_property(scenarios):
    sc = scenarios["checkout-log-burst"]
    res = run_react(TaskType.DETECTION, sc.build(), default_registry(), NO_FAULTS, default_backend())
    assert res.trajectory.terminated_by is Termination.SUBMIT
    assert res.solution.answer == "yes"
    calls = [s for s in res.trajectory.steps if s.kind is StepKind.TOOL_INVOCATION]
    assert len(calls) == len(sc.spec.properties)
    assert res.trajectory.steps_used == len(calls) + 1


def test_misled_by_silent_fault(scenarios):
    sc = scenarios["checkout-log-burst"]
    res = run_react(TaskType.DETECTION, sc.build(), default_registry(), fault_condition("get_logs"), default_backend())
    assert res.solution.answer == "no"


def test_falls_back_after_interface_error(scenarios):
    sc = scenarios["worker-logs-2s"]
    env = sc.build()
    # the traces surface is missing here; any failing path is retried with the next one
    res = run_react(TaskType.DETECTION, env, default_registry(), NO_FAULTS, default_backend())
    assert res.solution.answer == "yes"


def test_parse_errors_cost_steps_until_cap(scenarios):
    sc = scenarios["shop-healthy"]
    res = run_react(TaskType.DETECTION, sc.build(), default_registry(), NO_FAULTS, ScriptedBackend([Rule("", "prose")]), max_steps=5)
    assert res.trajectory.terminated_by is Termination.STEP_CAP
    assert res.trajectory.steps_used == 5 and res.solution is None
    assert all("parse_error" in s.payload for s in res.trajectory.steps)


def test_observation_fed_back(scenarios):
    sc = scenarios["shop-healthy"]
    seen = []

    def policy(messages):
        seen.append(messages[-1].content)
        if len(seen) == 1:
            return fenced({"thought": "look", "action": {"tool": "exec", "args": {"target": "cart", "command": "hostname"}}})
        return fenced({"thought": "done", "submit": "no"})

    res = run_react(TaskType.DETECTION, sc.build(), default_registry(), NO_FAULTS, ScriptedBackend([Rule("", policy)]))
    assert seen[1].startswith("Observation:\ncart")
    assert res.solution.answer == "no"
