"""Deterministic policies standing in for the language model.

Each policy is a pure function of the message list. It reads the context
blocks the orchestrator embeds in prompts and answers in the agent protocol,
so the same run loop drives scripted and live models.

The verifier policy resolves contradictions with a fixed rule: empty tool
output is treated as degenerate and only used when nothing substantive
exists; among substantive records any violation wins. The tool generation
and ReAct policies read empty output naively ("nothing abnormal reported"),
which is what makes a single path vulnerable to silent tool faults.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Sequence

from riva.agents.prompts import read_context
from riva.agents.protocol import TaskType, fenced
from riva.env import ATTRIBUTES_PATH, scalar_equal
from riva.llm import ChatMessage, Role, Rule, ScriptedBackend
from riva.llm import load_script as _load_script
from riva.toolkit import ToolCall

OK = "ok"
VIOLATED = "violated"

STALE_HINT = "answered by another node"


# --------------------------------------------------------------------------
# diagnostic knowledge


def candidate_calls(prop: dict) -> list[ToolCall]:
    """Diagnostic paths for a property, most direct first."""
    subject = prop["subject"]
    attrs = prop.get("resource", {})
    node_id = attrs.get("node_id")
    kind = prop.get("predicate")
    args = prop.get("args", [])
    if kind == "reachable":
        calls = []
        if node_id is not None:
            calls += [ToolCall("ping_node", {"id": node_id}), ToolCall("send_message", {"id": node_id})]
        return calls + [ToolCall("exec", {"target": subject, "command": "ip addr"})]
    if kind == "attribute_equals":
        if args[0] == "ip":
            calls = [ToolCall("exec", {"target": subject, "command": "ip addr"}), ToolCall("get_logs", {"service": subject})]
            if node_id is not None:
                calls.append(ToolCall("send_message", {"id": node_id}))
            return calls
        return [
            ToolCall("exec", {"target": subject, "command": f"cat {ATTRIBUTES_PATH}"}),
            ToolCall("get_logs", {"service": subject}),
        ]
    if kind == "service_running":
        return [
            ToolCall("exec", {"target": subject, "command": "ps"}),
            ToolCall("read_metrics", {"service": subject, "metric": "up"}),
            ToolCall("read_traces", {"service": subject}),
            ToolCall("get_logs", {"service": subject}),
        ]
    if kind == "logs_clean":
        return [
            ToolCall("get_logs", {"service": subject}),
            ToolCall("exec", {"target": subject, "command": f"cat /var/log/{subject}.log"}),
            ToolCall("read_traces", {"service": subject}),
        ]
    if kind == "metric_in_range":
        calls = [ToolCall("read_metrics", {"service": subject, "metric": args[0]})]
        if args[0] == "latency_ms":
            calls.append(ToolCall("read_traces", {"service": subject}))
        return calls + [ToolCall("exec", {"target": subject, "command": "stats"})]
    return [ToolCall("exec", {"target": subject, "command": "hostname"})]


_STAMP = re.compile(r"^\[t=[^\]]*\]\s?")
_VALUE = r'("(?:[^"\\]|\\.)*"|\S+)'


def _log_lines(output: str) -> list[str]:
    return [_STAMP.sub("", line) for line in output.splitlines() if line.strip()]


def _json_value(token: str) -> Any:
    try:
        return json.loads(token)
    except json.JSONDecodeError:
        return token


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _in_range(value: float, lo: float, hi: float, what: str) -> tuple[str, str]:
    if lo <= value <= hi:
        return OK, f"{what} {value:.2f} within [{lo}, {hi}]"
    return VIOLATED, f"{what} {value:.2f} outside [{lo}, {hi}]"


def _ack(output: str, subject: str) -> tuple[str, str]:
    m = re.search(r"ack from (\S+)", output)
    if not m:
        return VIOLATED, "no acknowledgement from the node"
    if m.group(1) != subject:
        return VIOLATED, f"address {STALE_HINT} ({m.group(1)})"
    return OK, f"acknowledged by {subject}"


def _eth0(output: str) -> str | None:
    m = re.search(r"eth0: inet (\S+)/", output)
    return m.group(1) if m else None


def interpret(prop: dict, call: ToolCall, output: str) -> tuple[str, str]:
    """Read one tool output as evidence for ``prop``: (ok|violated, note)."""
    if not output.strip():
        return OK, "tool returned no output; nothing abnormal reported"
    subject = prop["subject"]
    attrs = prop.get("resource", {})
    kind = prop.get("predicate")
    args = prop.get("args", [])
    tool = call.tool_name
    command = " ".join(str(call.arguments.get("command", "")).split())

    if kind == "reachable":
        if tool == "ping_node":
            m = re.search(r"\b(\d+)% packet loss", output)
            if m and int(m.group(1)) == 0:
                return OK, "echo reply received"
            return VIOLATED, "no echo reply"
        if tool == "send_message":
            return _ack(output, subject)
        if tool == "exec" and command == "ip addr":
            ip, declared = _eth0(output), attrs.get("ip")
            if ip == declared:
                return OK, f"interface holds declared address {declared}"
            return VIOLATED, f"interface holds {ip}, not the declared {declared}"

    elif kind == "attribute_equals":
        name, expected = args
        if tool == "exec" and command == f"cat {ATTRIBUTES_PATH}":
            m = re.search(rf"^{re.escape(name)} = (.*)$", output, re.M)
            if not m:
                return VIOLATED, f"attribute {name} absent"
            actual = _json_value(m.group(1))
        elif tool == "exec" and command == "ip addr" and name == "ip":
            actual = _eth0(output)
        elif tool in ("get_logs",) or (tool == "exec" and command.startswith("cat /var/log/")):
            found = []
            for line in _log_lines(output):
                if " config" in line:
                    found += re.findall(rf"(?:^|\s){re.escape(name)}={_VALUE}", line)
            if not found:
                return OK, f"logs do not mention {name}"
            actual = _json_value(found[-1])
        elif tool == "send_message" and name == "ip":
            return _ack(output, subject)
        else:
            return OK, "output does not bear on this property"
        if scalar_equal(actual, expected):
            return OK, f"{name} is {json.dumps(actual)} as declared"
        return VIOLATED, f"{name} is {json.dumps(actual)}, declared {json.dumps(expected)}"

    elif kind == "service_running":
        process = attrs.get("process", subject)
        if tool == "exec" and command == "ps":
            running = [line.split()[1] for line in output.splitlines()[1:] if len(line.split()) > 1]
            if process in running:
                return OK, f"process {process} is running"
            return VIOLATED, f"process {process} missing from the process list"
        if tool == "read_metrics":
            m = re.search(r"^up (.*)$", output, re.M)
            if m:
                samples = [float(v) for v in m.group(1).split()]
                if samples and samples[-1] >= 1:
                    return OK, "up gauge is 1"
                return VIOLATED, "up gauge is 0"
        if tool == "read_traces":
            m = re.search(r"(\d+) spans", output)
            if m and int(m.group(1)) > 0:
                return OK, f"{m.group(1)} recent spans"
            return VIOLATED, "no spans recorded"
        if tool == "get_logs":
            if any("exited with code" in line for line in _log_lines(output)):
                return VIOLATED, "logs show the process exiting"
            return OK, "no crash in logs"

    elif kind == "logs_clean":
        pattern = args[0]
        if tool == "get_logs" or (tool == "exec" and command.startswith("cat /var/log/")):
            hits = [line for line in _log_lines(output) if re.search(pattern, line)]
            if hits:
                return VIOLATED, f"{len(hits)} line(s) match {pattern!r}, e.g. {hits[0]!r}"
            return OK, f"no line matches {pattern!r}"
        if tool == "read_traces":
            hits = [line for line in output.splitlines() if "status=ERROR" in line and re.search(pattern, line)]
            if hits:
                return VIOLATED, f"{len(hits)} failing span(s) match {pattern!r}"
            return OK, "no failing spans"

    elif kind == "metric_in_range":
        name, lo, hi = args
        if tool == "read_metrics":
            m = re.search(rf"^{re.escape(name)} (.*)$", output, re.M)
            if not m:
                return OK, f"metric {name} not reported"
            if "no samples" in m.group(1):
                return VIOLATED, f"metric {name} has no samples"
            return _in_range(_mean([float(v) for v in m.group(1).split()]), lo, hi, f"mean {name}")
        if tool == "read_traces" and name == "latency_ms":
            durations = [float(v) for v in re.findall(r"duration_ms=([\d.]+)", output)]
            if not durations:
                return VIOLATED, "no spans to measure latency"
            return _in_range(_mean(durations), lo, hi, "mean span duration")
        if tool == "exec" and command == "stats":
            m = re.search(rf"^{re.escape(name)}=(\S+)$", output, re.M)
            if not m:
                return OK, f"metric {name} not reported"
            if m.group(1) == "n/a":
                return VIOLATED, f"metric {name} has no samples"
            return _in_range(float(m.group(1)), lo, hi, name)

    return OK, "output does not bear on this property"


def analysis_text(status: str, note: str) -> str:
    return f"[{status}] {note}"


def analysis_status(text: str) -> str | None:
    m = re.match(r"\[(ok|violated)\]", text.strip())
    return m.group(1) if m else None


def record_verdict(records: list[dict]) -> tuple[str, str]:
    """Verdict from K records: substantive evidence first, then any violation wins."""
    substantive = [r for r in records if r.get("result", "").strip()]
    pool = substantive or records
    statuses = [analysis_status(r.get("analysis", "")) for r in pool]
    basis = "substantive" if substantive else "only empty"
    if VIOLATED in statuses:
        r = pool[statuses.index(VIOLATED)]
        return "violated", f"{basis} evidence from {r['tool']}: {r['analysis']}"
    if OK in statuses:
        return "satisfied", f"{basis} evidence agrees the property holds ({len(pool)} of {len(records)} records)"
    return "inconclusive", "records carry no usable analysis"


def infer_fault_kind(predicates: set[str], notes: list[str]) -> str:
    if "service_running" in predicates:
        return "ServiceDown"
    if "reachable" in predicates and any(STALE_HINT in n for n in notes):
        return "StaleMapping"
    if "attribute_equals" in predicates or "reachable" in predicates:
        return "AttributeDrift"
    if "logs_clean" in predicates:
        return "LogErrorBurst"
    return "MetricAnomaly"


def build_answer(task_type: str, findings: list[dict]) -> str:
    """Task answer from per-property findings ``{subject, predicate, violated, notes}``."""
    violated = [f for f in findings if f["violated"]]
    task_type = TaskType(task_type)
    if task_type is TaskType.DETECTION:
        return "yes" if violated else "no"
    subjects = list(dict.fromkeys(f["subject"] for f in violated))
    if task_type is TaskType.LOCALIZATION:
        return ", ".join(subjects) if subjects else "none"
    if not subjects:
        return "component=none; fault=none"
    component = subjects[0]
    mine = [f for f in violated if f["subject"] == component]
    kind = infer_fault_kind({f["predicate"] for f in mine}, [n for f in mine for n in f["notes"]])
    return f"component={component}; fault={kind}"


# --------------------------------------------------------------------------
# policies


def _latest_context(messages: Sequence[ChatMessage]) -> dict:
    for msg in reversed(messages):
        if msg.role is Role.USER:
            ctx = read_context(msg.content)
            if ctx is not None:
                return ctx
    return {}


def verifier_policy(messages: Sequence[ChatMessage]) -> str:
    state = _latest_context(messages)
    k = state["k"]
    actions: list[dict] = []
    findings: list[dict] = []
    for goal in state["goals"]:
        if goal["status"] == "abandoned" or "predicate" not in goal:
            continue
        verdict = goal.get("verdict")
        if verdict is None and len(goal["records"]) == k:
            value, rationale = record_verdict(goal["records"])
            verdict = {"value": value, "rationale": rationale}
            actions.append(
                {
                    "action": "conclude",
                    "property": goal["id"],
                    "verdict": value,
                    "evidence": list(range(k)) if value != "inconclusive" else [],
                    "rationale": rationale,
                }
            )
        if verdict is None:
            actions.append({"action": "request_generation", "property": goal["id"]})
            return fenced(actions if len(actions) > 1 else actions[0])
        findings.append(
            {
                "subject": goal["subject"],
                "predicate": goal["predicate"],
                "violated": verdict["value"] == "violated",
                "notes": [verdict.get("rationale", "")] + [r.get("analysis", "") for r in goal["records"]],
            }
        )
    actions.append({"action": "submit", "answer": build_answer(state["task_type"], findings)})
    return fenced(actions if len(actions) > 1 else actions[0])


def _assistant_json(msg: ChatMessage) -> dict:
    m = re.search(r"```json\n(.*?)\n```", msg.content, re.S)
    try:
        return json.loads(m.group(1)) if m else {}
    except json.JSONDecodeError:
        return {}


def toolgen_policy(messages: Sequence[ChatMessage]) -> str:
    request = read_context(messages[1].content) or {}
    prop = request.get("property", {})
    used = set(request.get("used_tools", []))
    failed = [
        ToolCall.from_json(r)
        for r in request.get("exploratory", [])
        if r.get("result", "").startswith("InterfaceError")
    ]
    last_call = None
    for i, msg in enumerate(messages):
        if msg.role is Role.ASSISTANT:
            obj = _assistant_json(msg)
            if obj.get("action") == "call":
                last_call = ToolCall(obj["tool"], obj.get("args", {}))
                nxt = read_context(messages[i + 1].content) if i + 1 < len(messages) else None
                if nxt and nxt.get("outcome") in ("interface_error", "rejected"):
                    failed.append(last_call)

    latest = read_context(messages[-1].content) or {}
    if latest.get("outcome") == "success" and last_call is not None and "predicate" in prop:
        status, note = interpret(prop, last_call, latest.get("output", ""))
        return fenced({"action": "record", "analysis": analysis_text(status, note)})

    candidates = candidate_calls(prop) if "subject" in prop else []
    for call in candidates:
        if call.tool_name not in used and call not in failed:
            return fenced({"action": "call", "tool": call.tool_name, "args": dict(call.arguments)})
    # nothing new left to try: fall back to a path already taken
    attempts = sum(1 for m in messages if m.role is Role.ASSISTANT)
    pool = [c for c in candidates if c.tool_name in used] or candidates
    if not pool:
        return fenced({"action": "call", "tool": "exec", "args": {"target": request.get("goal", ""), "command": "hostname"}})
    call = pool[attempts % len(pool)]
    return fenced({"action": "call", "tool": call.tool_name, "args": dict(call.arguments)})


def react_policy(messages: Sequence[ChatMessage]) -> str:
    ctx = read_context(messages[0].content) or {}
    props = ctx.get("properties", [])
    done: dict[str, dict] = {}
    failed: dict[str, list[ToolCall]] = {}
    for i, msg in enumerate(messages):
        if msg.role is not Role.ASSISTANT:
            continue
        obj = _assistant_json(msg)
        focus = obj.get("property")
        action = obj.get("action")
        if focus is None or not isinstance(action, dict) or i + 1 >= len(messages):
            continue
        call = ToolCall(action["tool"], action.get("args", {}))
        obs = read_context(messages[i + 1].content) or {}
        if obs.get("outcome") == "success":
            prop = next(p for p in props if p["id"] == focus)
            status, note = interpret(prop, call, obs.get("output", ""))
            done[focus] = {"subject": prop["subject"], "predicate": prop["predicate"], "violated": status == VIOLATED, "notes": [note]}
        else:
            failed.setdefault(focus, []).append(call)

    for prop in props:
        if prop["id"] in done:
            continue
        for call in candidate_calls(prop):
            if call not in failed.get(prop["id"], []):
                return fenced(
                    {
                        "thought": f"check {prop['id']}: {prop['description']}",
                        "property": prop["id"],
                        "action": {"tool": call.tool_name, "args": dict(call.arguments)},
                    }
                )
        done[prop["id"]] = {"subject": prop["subject"], "predicate": prop["predicate"], "violated": False, "notes": []}

    findings = [done[p["id"]] for p in props]
    answer = build_answer(ctx["task_type"], findings)
    return fenced({"thought": "all properties checked", "submit": answer})


POLICIES = {"verifier": verifier_policy, "toolgen": toolgen_policy, "react": react_policy}

DEFAULT_RULES = [
    Rule(r"\AROLE: verifier", verifier_policy, on="system"),
    Rule(r"\AROLE: tool-generation", toolgen_policy, on="system"),
    Rule(r"\AROLE: react", react_policy, on="system"),
]

UNSURE = "I am not sure what to do next."


def default_backend() -> ScriptedBackend:
    return ScriptedBackend(list(DEFAULT_RULES), UNSURE, name="scripted:default")


def load_script(path) -> ScriptedBackend:
    return _load_script(Path(path), POLICIES)
