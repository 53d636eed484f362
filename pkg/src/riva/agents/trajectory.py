from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

from riva.llm import TokenUsage


class Actor(str, enum.Enum):
    VERIFIER = "verifier"
    TOOLGEN = "toolgen"
    REACT = "react"


class StepKind(str, enum.Enum):
    REASONING = "reasoning"
    TOOL_INVOCATION = "tool_invocation"
    HISTORY_MUTATION = "history_mutation"
    SUBMISSION = "submission"
    CONTEXT_RESET = "context_reset"


class Termination(str, enum.Enum):
    SUBMIT = "submit"
    STEP_CAP = "step_cap_reached"
    BACKEND_ERROR = "backend_error"


@dataclass
class Step:
    actor: Actor
    kind: StepKind
    payload: dict[str, Any] = field(default_factory=dict)
    token_usage: TokenUsage | None = None
    # only backend replies that count against the step budget set this
    counted: bool = False

    def to_json(self) -> dict:
        return {
            "actor": self.actor.value,
            "kind": self.kind.value,
            "counted": self.counted,
            "token_usage": self.token_usage.to_json() if self.token_usage else None,
            "payload": self.payload,
        }

    @classmethod
    def from_json(cls, data: dict) -> Step:
        usage = data.get("token_usage")
        return cls(
            Actor(data["actor"]),
            StepKind(data["kind"]),
            data.get("payload", {}),
            TokenUsage.from_json(usage) if usage else None,
            data.get("counted", False),
        )


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    terminated_by: Termination | None = None
    error: str | None = None

    @property
    def steps_used(self) -> int:
        return sum(1 for s in self.steps if s.counted)

    def add(self, step: Step) -> Step:
        self.steps.append(step)
        return step

    def submissions(self) -> list[Step]:
        return [s for s in self.steps if s.kind is StepKind.SUBMISSION]

    def to_json(self) -> dict:
        return {
            "terminated_by": self.terminated_by.value if self.terminated_by else None,
            "error": self.error,
            "steps_used": self.steps_used,
            "steps": [s.to_json() for s in self.steps],
        }

    @classmethod
    def from_json(cls, data: dict) -> Trajectory:
        term = data.get("terminated_by")
        return cls(
            [Step.from_json(s) for s in data["steps"]],
            Termination(term) if term else None,
            data.get("error"),
        )
