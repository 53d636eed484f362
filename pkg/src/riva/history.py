"""Shared tool-call history: per-goal execution records with distinct tools."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

from riva.toolkit import ToolCall


class HistoryError(Exception):
    def __init__(self, goal: str, message: str):
        super().__init__(message)
        self.goal = goal


class UnknownGoal(HistoryError):
    def __init__(self, goal: str):
        super().__init__(goal, f"unknown goal {goal!r}")


class GoalExists(HistoryError):
    def __init__(self, goal: str):
        super().__init__(goal, f"goal {goal!r} already exists")


class DuplicateTool(HistoryError):
    def __init__(self, goal: str, tool: str):
        super().__init__(goal, f"tool {tool!r} was already used for goal {goal!r}")
        self.tool = tool


class GoalFull(HistoryError):
    def __init__(self, goal: str, k: int):
        super().__init__(goal, f"goal {goal!r} already holds {k} records")


class GoalAbandoned(HistoryError):
    def __init__(self, goal: str):
        super().__init__(goal, f"goal {goal!r} is abandoned")


class AlreadyAbandoned(HistoryError):
    def __init__(self, goal: str):
        super().__init__(goal, f"goal {goal!r} was already abandoned")


class GoalStatus(str, enum.Enum):
    OPEN = "open"
    ABANDONED = "abandoned"


class GoalOrigin(str, enum.Enum):
    FROM_SPEC = "from_spec"
    AGENT_ADDED = "agent_added"


@dataclass(frozen=True)
class ToolExecutionRecord:
    command: ToolCall
    result: str
    analysis: str

    def __post_init__(self) -> None:
        if self.command is None or self.result is None or self.analysis is None:
            raise ValueError("command, result and analysis are all required")

    def to_json(self) -> dict:
        return {
            "tool": self.command.tool_name,
            "args": dict(self.command.arguments),
            "result": self.result,
            "analysis": self.analysis,
        }

    @classmethod
    def from_json(cls, data: dict) -> ToolExecutionRecord:
        return cls(ToolCall(data["tool"], data.get("args", {})), data["result"], data["analysis"])


@dataclass
class GoalEntry:
    origin: GoalOrigin = GoalOrigin.FROM_SPEC
    status: GoalStatus = GoalStatus.OPEN
    description: str = ""
    records: list[ToolExecutionRecord] = field(default_factory=list)
    exploratory: list[ToolExecutionRecord] = field(default_factory=list)


@dataclass(frozen=True)
class GoalStatusView:
    property_id: str
    record_count: int
    used_tool_names: tuple[str, ...]
    conclusive: bool
    status: GoalStatus
    origin: GoalOrigin


class ToolHistory:
    """Map from property id to at most ``k`` records, each using a different tool.

    Records are append-only and abandoned goals stay abandoned. Failed
    mutations leave the history untouched. Listeners registered with
    :meth:`subscribe` receive the history after every successful mutation.
    """

    def __init__(self, k: int, goals: Iterable[str] = ()):
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise ValueError("k must be ≥ 1")
        self.k = k
        self._goals: dict[str, GoalEntry] = {}
        self._listeners: list[Callable[[ToolHistory], None]] = []
        for goal in goals:
            self.add_goal(goal)

    # -- queries

    def __contains__(self, goal: str) -> bool:
        return goal in self._goals

    def __len__(self) -> int:
        return len(self._goals)

    @property
    def goal_ids(self) -> list[str]:
        return list(self._goals)

    def _entry(self, goal: str) -> GoalEntry:
        try:
            return self._goals[goal]
        except KeyError:
            raise UnknownGoal(goal) from None

    def records(self, goal: str) -> tuple[ToolExecutionRecord, ...]:
        return tuple(self._entry(goal).records)

    def exploratory(self, goal: str) -> tuple[ToolExecutionRecord, ...]:
        return tuple(self._entry(goal).exploratory)

    def used_tools(self, goal: str) -> list[str]:
        """Tool names recorded for ``goal``, in insertion order."""
        return [r.command.tool_name for r in self._entry(goal).records]

    def status(self, goal: str) -> GoalStatus:
        return self._entry(goal).status

    def origin(self, goal: str) -> GoalOrigin:
        return self._entry(goal).origin

    def is_conclusive(self, goal: str) -> bool:
        entry = self._entry(goal)
        return len(entry.records) == self.k and entry.status is GoalStatus.OPEN

    def view(self, goal: str) -> GoalStatusView:
        entry = self._entry(goal)
        return GoalStatusView(
            goal,
            len(entry.records),
            tuple(self.used_tools(goal)),
            self.is_conclusive(goal),
            entry.status,
            entry.origin,
        )

    # -- mutations

    def add_goal(self, goal: str, origin: GoalOrigin = GoalOrigin.FROM_SPEC, description: str = "") -> None:
        if goal in self._goals:
            raise GoalExists(goal)
        self._goals[goal] = GoalEntry(GoalOrigin(origin), description=description)
        self._notify()

    def record(self, goal: str, rec: ToolExecutionRecord) -> None:
        entry = self._entry(goal)
        if entry.status is GoalStatus.ABANDONED:
            raise GoalAbandoned(goal)
        if rec.command.tool_name in self.used_tools(goal):
            raise DuplicateTool(goal, rec.command.tool_name)
        if len(entry.records) >= self.k:
            raise GoalFull(goal, self.k)
        entry.records.append(rec)
        self._notify()

    def record_exploratory(self, goal: str, rec: ToolExecutionRecord) -> None:
        """Keep a correction attempt next to the goal; it never counts toward ``k``."""
        entry = self._entry(goal)
        if entry.status is GoalStatus.ABANDONED:
            raise GoalAbandoned(goal)
        entry.exploratory.append(rec)
        self._notify()

    def abandon_goal(self, goal: str) -> None:
        entry = self._entry(goal)
        if entry.status is GoalStatus.ABANDONED:
            raise AlreadyAbandoned(goal)
        entry.status = GoalStatus.ABANDONED
        self._notify()

    # -- snapshots

    def subscribe(self, listener: Callable[[ToolHistory], None]) -> None:
        self._listeners.append(listener)

    def _notify(self) -> None:
        for listener in self._listeners:
            listener(self)

    def snapshot(self) -> dict:
        goals = {}
        for goal, entry in self._goals.items():
            item = {
                "status": entry.status.value,
                "origin": entry.origin.value,
                "records": [r.to_json() for r in entry.records],
            }
            if entry.exploratory:
                item["exploratory"] = [r.to_json() for r in entry.exploratory]
            goals[goal] = item
        return {"k": self.k, "goals": goals}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.snapshot(), **kwargs)

    @classmethod
    def from_snapshot(cls, data: dict) -> ToolHistory:
        history = cls(data["k"])
        for goal, item in data["goals"].items():
            entry = GoalEntry(GoalOrigin(item["origin"]), GoalStatus(item["status"]))
            entry.records = [ToolExecutionRecord.from_json(r) for r in item["records"]]
            entry.exploratory = [ToolExecutionRecord.from_json(r) for r in item.get("exploratory", [])]
            history._goals[goal] = entry
        return history

    def copy(self) -> ToolHistory:
        return ToolHistory.from_snapshot(self.snapshot())
