from __future__ import annotations

import pytest

from riva.agents.prompts import property_json
from riva.agents.scripted import (
    OK,
    VIOLATED,
    build_answer,
    candidate_calls,
    infer_fault_kind,
    interpret,
    record_verdict,
)
from riva.env import Environment, LogErrorBurst, MetricAnomaly, ServiceDown, StaleMapping
from riva.toolkit import NO_FAULTS, ToolCall


def r(tool, result, status):
    return {"tool": tool, "args": {}, "result": result, "analysis": f"[{status}] note"}


@pytest.mark.parametrize(
    "records, verdict",
    [
        ([r("a", "x", OK), r("b", "y", OK)], "satisfied"),
        ([r("a", "x", OK), r("b", "y", VIOLATED)], "violated"),
        # empty output is only trusted when nothing else exists
        ([r("a", "", VIOLATED), r("b", "y", OK)], "satisfied"),
        ([r("a", "", OK), r("b", "y", VIOLATED)], "violated"),
        ([r("a", "", OK), r("b", "", OK)], "satisfied"),
        ([{"tool": "a", "args": {}, "result": "x", "analysis": "hmm"}], "inconclusive"),
    ],
)
def test_record_verdict(records, verdict):
    assert record_verdict(records)[0] == verdict


def test_every_violation_read_correctly_on_each_detecting_path(scenarios, registry):
    for name, sc in scenarios.items():
        env = sc.build()
        truth = env.ground_truth()
        for prop in sc.spec.properties:
            pj = property_json(sc.spec, prop)
            expected = VIOLATED if prop.id in truth.violated_properties else OK
            readings = []
            for call in candidate_calls(pj):
                out = registry.invoke(call, env, NO_FAULTS)
                if out.ok:
                    readings.append(interpret(pj, call, out.output)[0])
            # the interpreter never invents a violation on a healthy property
            if expected == OK:
                assert set(readings) == {OK}, (name, prop.id, readings)
            else:
                assert readings.count(VIOLATED) >= 2, (name, prop.id, readings)


def test_empty_output_read_naively(shop_spec):
    pj = property_json(shop_spec, shop_spec.property("checkout-logs"))
    assert interpret(pj, ToolCall("get_logs", {"service": "checkout"}), "")[0] == OK


def test_stale_mapping_readings(ping_spec, registry):
    env = Environment(ping_spec, 0)
    env.inject_drift(StaleMapping(logical_id="1", wrong_target="0"))
    pj = property_json(ping_spec, ping_spec.property("node1-reach"))
    ping, message, _ = candidate_calls(pj)
    assert interpret(pj, ping, registry.invoke(ping, env).output)[0] == OK  # misleading path
    status, note = interpret(pj, message, registry.invoke(message, env).output)
    assert status == VIOLATED and "another node" in note


@pytest.mark.parametrize(
    "fault, pid",
    [
        (ServiceDown(resource="cart", service="cart"), "cart-up"),
        (LogErrorBurst(resource="cart", pattern="x"), "cart-logs"),
        (MetricAnomaly(resource="checkout", metric="latency_ms", multiplier=10), "checkout-latency"),
    ],
)
def test_first_candidate_sees_fault(shop_spec, registry, fault, pid):
    env = Environment(shop_spec, 0)
    env.inject_drift(fault)
    pj = property_json(shop_spec, shop_spec.property(pid))
    call = candidate_calls(pj)[0]
    assert interpret(pj, call, registry.invoke(call, env).output)[0] == VIOLATED


def test_fault_kind_priority():
    assert infer_fault_kind({"service_running", "logs_clean"}, []) == "ServiceDown"
    assert infer_fault_kind({"reachable"}, ["address answered by another node (x)"]) == "StaleMapping"
    assert infer_fault_kind({"reachable", "attribute_equals"}, []) == "AttributeDrift"
    assert infer_fault_kind({"logs_clean", "metric_in_range"}, []) == "LogErrorBurst"
    assert infer_fault_kind({"metric_in_range"}, []) == "MetricAnomaly"


def test_build_answer():
    f = [
        {"subject": "web", "predicate": "logs_clean", "violated": True, "notes": []},
        {"subject": "db", "predicate": "service_running", "violated": False, "notes": []},
    ]
    assert build_answer("detection", f) == "yes"
    assert build_answer("localization", f) == "web"
    assert build_answer("analysis", f) == "component=web; fault=LogErrorBurst"
    healthy = [dict(x, violated=False) for x in f]
    assert build_answer("detection", healthy) == "no"
    assert build_answer("localization", healthy) == "none"
