from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riva.env import Environment
from riva.harness import corpus_path
from riva.spec import load_spec
from riva.toolkit import (
    NO_FAULTS,
    DuplicateName,
    ToolCall,
    ToolFaultConfig,
    UnknownTool,
    default_registry,
    default_tools,
    fault_condition,
)

GOLDEN = Path(__file__).parent / "golden"


def test_manifest_golden(registry):
    assert registry.manifest_json() + "\n" == (GOLDEN / "manifest.json").read_text()


def test_success_passthrough(registry, shop_env):
    out = registry.invoke(ToolCall("exec", {"target": "cart", "command": "hostname"}), shop_env)
    assert out.ok and out.output == "cart" and out.status == "success"


@pytest.mark.parametrize(
    "call, fragment",
    [
        (ToolCall("nope", {}), "unknown tool"),
        (ToolCall("get_logs", {}), "missing required argument 'service'"),
        (ToolCall("get_logs", {"servcie": "cart"}), "unexpected argument 'servcie'"),
        (ToolCall("get_logs", {"service": 3}), "must be string"),
        (ToolCall("get_logs", {"service": "cart", "lines": True}), "must be integer"),
        (ToolCall("get_logs", {"service": "ghost"}), "no resource named"),
        (ToolCall("exec", {"target": "cart", "command": "reboot"}), "not allowed"),
        (ToolCall("ping_node", {"id": "9"}), "no node with id"),
    ],
)
def test_interface_errors(registry, shop_env, call, fragment):
    out = registry.invoke(call, shop_env)
    assert not out.ok and fragment in out.error
    assert out.text().startswith("InterfaceError")


def test_faulted_tool_is_silent(registry, shop_env):
    faults = ToolFaultConfig({"get_logs"})
    out = registry.invoke(ToolCall("get_logs", {"service": "cart"}), shop_env, faults)
    assert out.ok and out.output == ""
    # still validated and still observed: a bad call stays an error
    bad = registry.invoke(ToolCall("get_logs", {"service": "ghost"}), shop_env, faults)
    assert not bad.ok


def test_faulted_call_still_advances_clock(registry, shop_env):
    registry.invoke(ToolCall("get_logs", {"service": "cart"}), shop_env, ToolFaultConfig({"get_logs"}))
    assert shop_env.clock == 1


def test_registry_errors(registry):
    with pytest.raises(DuplicateName):
        registry.register(default_tools()[0])
    with pytest.raises(UnknownTool):
        registry.apply_fault(ToolFaultConfig({"teleport"}))
    with pytest.raises(ValueError):
        ToolFaultConfig(mode="garbage")
    with pytest.raises(ValueError):
        fault_condition("everything")


def test_apply_fault_sets_registry_default(shop_env):
    reg = default_registry()
    reg.apply_fault(fault_condition("both"))
    assert reg.invoke(ToolCall("read_metrics", {"service": "cart"}), shop_env).output == ""
    assert reg.invoke(ToolCall("read_metrics", {"service": "cart"}), shop_env, NO_FAULTS).output != ""


def test_call_render_and_json():
    call = ToolCall("exec", {"target": "web", "command": "ps"})
    assert ToolCall.from_json(call.to_json()) == call
    assert hash(call) == hash(ToolCall("exec", {"command": "ps", "target": "web"}))
    assert "exec(" in call.render()


@settings(max_examples=50, deadline=None)
@given(service=st.sampled_from(["cart", "checkout"]), lines=st.none() | st.integers(1, 20))
def test_any_valid_logs_call_is_blank_when_faulted(service, lines):
    env = Environment(load_spec(corpus_path("specs", "shop.spec")), 0)
    args = {"service": service} if lines is None else {"service": service, "lines": lines}
    out = default_registry().invoke(ToolCall("get_logs", args), env, fault_condition("get_logs"))
    assert out.ok and out.output == ""
