"""Text protocol shared by the agents: fenced JSON action blocks.

A reply carries its action as a fenced block::

    ```json
    {"action": "request_generation", "property": "p1"}
    ```

A reply consisting solely of a JSON value is accepted as well. Verifier
replies may hold a JSON list of actions, applied in order.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Any, Union

from riva.spec import SpecError, Verdict, VerdictValue
from riva.toolkit import ToolCall


class ParseFailure(ValueError):
    pass


class TaskType(str, enum.Enum):
    DETECTION = "detection"
    LOCALIZATION = "localization"
    ANALYSIS = "analysis"


@dataclass(frozen=True)
class Solution:
    task_type: TaskType
    answer: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "task_type", TaskType(self.task_type))
        if not self.answer or not self.answer.strip():
            raise ValueError("a solution needs a non-empty answer")

    def to_json(self) -> dict:
        return {"task_type": self.task_type.value, "answer": self.answer}


# verifier actions


@dataclass(frozen=True)
class RequestGeneration:
    property_id: str


@dataclass(frozen=True)
class Conclude:
    property_id: str
    verdict: Verdict


@dataclass(frozen=True)
class AddGoal:
    property_id: str
    description: str = ""


@dataclass(frozen=True)
class AbandonGoal:
    property_id: str


@dataclass(frozen=True)
class Submit:
    answer: str
    task_type: TaskType | None = None


VerifierAction = Union[RequestGeneration, Conclude, AddGoal, AbandonGoal, Submit]


# tool generation actions


@dataclass(frozen=True)
class GenerateCall:
    call: ToolCall


@dataclass(frozen=True)
class RecordAnalysis:
    analysis: str


# ReAct turn


@dataclass(frozen=True)
class ReactTurn:
    thought: str
    call: ToolCall | None = None
    answer: str | None = None


_FENCE = re.compile(r"```([A-Za-z]*)[ \t]*\n(.*?)```", re.S)


def extract_json(text: str) -> Any:
    """Return the JSON value of the first ``json`` (or untagged) fenced block."""
    if text is None:
        raise ParseFailure("empty reply")
    blocks = [(tag, body) for tag, body in _FENCE.findall(text) if tag in ("", "json")]
    if blocks:
        body = blocks[0][1]
        try:
            return json.loads(body)
        except json.JSONDecodeError as exc:
            raise ParseFailure(f"action block is not valid JSON: {exc}") from None
    stripped = text.strip()
    if stripped[:1] in ("{", "["):
        try:
            return json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseFailure(f"reply is not valid JSON: {exc}") from None
    raise ParseFailure("no fenced JSON action block found")


def _require(obj: dict, key: str, kind=str) -> Any:
    if key not in obj:
        raise ParseFailure(f"action {obj.get('action')!r} is missing {key!r}")
    value = obj[key]
    if not isinstance(value, kind):
        raise ParseFailure(f"{key!r} must be {kind.__name__}")
    return value


def _verifier_action(obj: Any) -> VerifierAction:
    if not isinstance(obj, dict):
        raise ParseFailure("each action must be a JSON object")
    action = obj.get("action")
    if action == "request_generation":
        return RequestGeneration(_require(obj, "property"))
    if action == "conclude":
        pid = _require(obj, "property")
        raw = _require(obj, "verdict")
        try:
            value = VerdictValue(raw.lower())
        except ValueError:
            raise ParseFailure(f"unknown verdict {raw!r}") from None
        evidence = obj.get("evidence", [])
        if not isinstance(evidence, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in evidence):
            raise ParseFailure("'evidence' must be a list of record indices")
        return Conclude(pid, Verdict(value, str(obj.get("rationale", "")), tuple(evidence)))
    if action == "add_goal":
        return AddGoal(_require(obj, "property"), str(obj.get("description", "")))
    if action == "abandon_goal":
        return AbandonGoal(_require(obj, "property"))
    if action == "submit":
        answer = _require(obj, "answer")
        task_type = obj.get("task_type")
        try:
            return Submit(answer, TaskType(task_type) if task_type else None)
        except ValueError:
            raise ParseFailure(f"unknown task type {task_type!r}") from None
    raise ParseFailure(f"unknown verifier action {action!r}")


def parse_verifier_reply(text: str) -> list[VerifierAction]:
    value = extract_json(text)
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ParseFailure("empty action list")
    return [_verifier_action(item) for item in items]


def parse_toolgen_reply(text: str) -> GenerateCall | RecordAnalysis:
    obj = extract_json(text)
    if not isinstance(obj, dict):
        raise ParseFailure("tool generation replies must be a single JSON object")
    action = obj.get("action")
    if action == "call":
        tool = _require(obj, "tool")
        args = obj.get("args", {})
        if not isinstance(args, dict):
            raise ParseFailure("'args' must be an object")
        return GenerateCall(ToolCall(tool, args))
    if action == "record":
        return RecordAnalysis(_require(obj, "analysis"))
    raise ParseFailure(f"unknown tool generation action {action!r}")


def parse_react_reply(text: str) -> ReactTurn:
    obj = extract_json(text)
    if not isinstance(obj, dict):
        raise ParseFailure("ReAct replies must be a single JSON object")
    thought = str(obj.get("thought", ""))
    if "submit" in obj:
        answer = obj["submit"]
        if not isinstance(answer, str) or not answer.strip():
            raise ParseFailure("'submit' must be a non-empty string")
        return ReactTurn(thought, answer=answer)
    action = obj.get("action")
    if isinstance(action, dict):
        tool = _require(action, "tool")
        args = action.get("args", {})
        if not isinstance(args, dict):
            raise ParseFailure("'args' must be an object")
        return ReactTurn(thought, call=ToolCall(tool, args))
    raise ParseFailure("ReAct reply needs an 'action' object or a 'submit' answer")


def parse_action(text: str):
    """Parse any agent reply, dispatching on the shape of its action block.

    Returns a list of verifier actions, a tool generation action, or a
    :class:`ReactTurn`.
    """
    value = extract_json(text)
    probe = value[0] if isinstance(value, list) and value else value
    if not isinstance(probe, dict):
        raise ParseFailure("action block must be an object or a list of objects")
    action = probe.get("action")
    if action in ("call", "record"):
        return parse_toolgen_reply(text)
    if "thought" in probe and ("submit" in probe or isinstance(action, dict)):
        return parse_react_reply(text)
    return parse_verifier_reply(text)


# rendering helpers used by scripted policies and prompt examples


def fenced(value: Any) -> str:
    return "```json\n" + json.dumps(value) + "\n```"


def verdict_action(property_id: str, verdict: Verdict) -> dict:
    return {
        "action": "conclude",
        "property": property_id,
        "verdict": verdict.value.value,
        "evidence": list(verdict.evidence),
        "rationale": verdict.rationale,
    }


def check_verdict(verdict: Verdict, k: int) -> str | None:
    try:
        verdict.check(k)
    except SpecError as exc:
        return str(exc)
    return None
