"""RIVA control loop: a Verifier Agent and a Tool Generation Agent over a shared history.

Each verifier reply may trigger at most one tool generation, and each
generation adds at most one record, so the verifier reasons between any two
records. The step budget is shared by both agents.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

from riva.agents import prompts
from riva.agents.protocol import (
    AbandonGoal,
    AddGoal,
    Conclude,
    GenerateCall,
    ParseFailure,
    RecordAnalysis,
    RequestGeneration,
    Solution,
    Submit,
    TaskType,
    VerifierAction,
    check_verdict,
    parse_toolgen_reply,
    parse_verifier_reply,
)
from riva.agents.trajectory import Actor, Step, StepKind, Termination, Trajectory
from riva.env import Environment
from riva.history import GoalOrigin, GoalStatus, HistoryError, ToolExecutionRecord, ToolHistory
from riva.llm import BackendError, ChatBackend, ChatMessage, assistant, system, user
from riva.spec import Verdict
from riva.toolkit import NO_FAULTS, ToolFaultConfig, ToolRegistry

log = logging.getLogger(__name__)

MISSING_ANALYSIS = "(no analysis provided)"


class ProtocolViolation(Exception):
    pass


class GenerationStarved(Exception):
    def __init__(self, goal: str, attempts: int):
        super().__init__(f"no new usable tool call for {goal!r} after {attempts} attempt(s)")
        self.goal = goal
        self.attempts = attempts


class BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class OrchestratorConfig:
    """Run settings.

    One backend reply costs one step, for either agent. A tool generation
    attempt costs one step whether or not the call works; the analysis reply
    that closes a successful attempt is part of that attempt and is not
    charged again (its tokens are still counted).
    """

    k: int = 2
    max_steps: int = 45
    record_exploratory: bool = False
    toolgen_retry_limit: int = 3

    def __post_init__(self) -> None:
        if not isinstance(self.k, int) or self.k < 1:
            raise ValueError("k must be ≥ 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be ≥ 1")
        if self.toolgen_retry_limit < 1:
            raise ValueError("toolgen_retry_limit must be ≥ 1")


@dataclass
class RunResult:
    trajectory: Trajectory
    solution: Solution | None
    history: ToolHistory | None = None
    verdicts: dict[str, Verdict] = field(default_factory=dict)


def _task_type(task) -> TaskType:
    return TaskType(getattr(task, "type", task))


class RivaRun:
    def __init__(
        self,
        task,
        env: Environment,
        registry: ToolRegistry,
        faults: ToolFaultConfig | None,
        backend: ChatBackend,
        config: OrchestratorConfig,
        on_history: Callable[[ToolHistory], None] | None = None,
    ):
        self.task_type = _task_type(task)
        self.env = env
        self.spec = env.spec
        self.registry = registry
        self.faults = NO_FAULTS if faults is None else faults
        self.backend = backend
        self.config = config
        self.history = ToolHistory(config.k)
        if on_history is not None:
            self.history.subscribe(on_history)
        for prop in self.spec.properties:
            self.history.add_goal(prop.id, GoalOrigin.FROM_SPEC, prop.description)
        self.verdicts: dict[str, Verdict] = {}
        self.trajectory = Trajectory()
        self.solution: Solution | None = None
        self.feedback: list[str] = []
        self.verifier_messages: list[ChatMessage] = [
            system(prompts.verifier_system(self.spec, self.task_type, config.k))
        ]
        self._toolgen_system = prompts.toolgen_system(registry.manifest_json())

    # -- budget

    @property
    def budget_left(self) -> int:
        return self.config.max_steps - self.trajectory.steps_used

    def _chat(self, messages: list[ChatMessage], actor: Actor, kind: StepKind, counted: bool = True) -> tuple[str, Step]:
        if counted and self.budget_left <= 0:
            raise BudgetExhausted()
        reply, usage = self.backend.chat(messages)
        step = self.trajectory.add(Step(actor, kind, {"reply": reply}, usage, counted))
        return reply, step

    # -- verifier

    def render_state(self) -> str:
        goals = []
        for goal in self.history.goal_ids:
            item = {
                "id": goal,
                "origin": self.history.origin(goal).value,
                "status": self.history.status(goal).value,
                "records": [
                    {"index": i, **r.to_json(), "result": prompts.preview(r.result)}
                    for i, r in enumerate(self.history.records(goal))
                ],
                "verdict": self.verdicts[goal].to_json() if goal in self.verdicts else None,
            }
            if self.history.origin(goal) is GoalOrigin.FROM_SPEC:
                item.update(prompts.property_json(self.spec, self.spec.property(goal)))
            goals.append(item)
        ctx = {
            "task_type": self.task_type.value,
            "k": self.config.k,
            "steps_used": self.trajectory.steps_used,
            "max_steps": self.config.max_steps,
            "goals": goals,
            "feedback": self.feedback,
        }
        self.feedback = []
        lines = ["Current tool history and verdicts:", prompts.context_block(ctx)]
        return "\n".join(lines)

    def verifier_step(self) -> list[VerifierAction]:
        """One verifier turn; raises ProtocolViolation when the reprompt also fails."""
        self.verifier_messages.append(user(self.render_state()))
        reply, step = self._chat(self.verifier_messages, Actor.VERIFIER, StepKind.REASONING)
        self.verifier_messages.append(assistant(reply))
        try:
            return parse_verifier_reply(reply)
        except ParseFailure as exc:
            step.payload["parse_error"] = str(exc)
            self.verifier_messages.append(
                user(f"Your reply could not be parsed: {exc}. Reply with a fenced json action block.")
            )
        reply, step = self._chat(self.verifier_messages, Actor.VERIFIER, StepKind.REASONING)
        self.verifier_messages.append(assistant(reply))
        try:
            return parse_verifier_reply(reply)
        except ParseFailure as exc:
            step.payload["parse_error"] = str(exc)
            raise ProtocolViolation(str(exc)) from None

    def _mutation(self, actor: Actor, **payload) -> None:
        self.trajectory.add(Step(actor, StepKind.HISTORY_MUTATION, payload))

    def apply(self, actions: list[VerifierAction]) -> bool:
        """Apply verifier actions in order. Returns True once the task is submitted."""
        for i, action in enumerate(actions):
            if isinstance(action, RequestGeneration):
                if i < len(actions) - 1:
                    self.feedback.append("actions after request_generation were ignored")
                self.handle_request(action.property_id)
                return False
            if isinstance(action, Conclude):
                self._conclude(action)
            elif isinstance(action, AddGoal):
                try:
                    self.history.add_goal(action.property_id, GoalOrigin.AGENT_ADDED, action.description)
                    self._mutation(Actor.VERIFIER, event="add_goal", goal=action.property_id)
                except HistoryError as exc:
                    self.feedback.append(f"add_goal rejected: {exc}")
            elif isinstance(action, AbandonGoal):
                try:
                    self.history.abandon_goal(action.property_id)
                    dropped = self.verdicts.pop(action.property_id, None)
                    self._mutation(
                        Actor.VERIFIER, event="abandon_goal", goal=action.property_id, dropped_verdict=dropped is not None
                    )
                except HistoryError as exc:
                    self.feedback.append(f"abandon_goal rejected: {exc}")
            elif isinstance(action, Submit):
                if action.task_type is not None and action.task_type is not self.task_type:
                    self.feedback.append(
                        f"submit rejected: the running task is {self.task_type.value}, not {action.task_type.value}"
                    )
                    continue
                self.solution = Solution(self.task_type, action.answer)
                self.trajectory.add(Step(Actor.VERIFIER, StepKind.SUBMISSION, self.solution.to_json()))
                return True
        return False

    def _conclude(self, action: Conclude) -> None:
        goal, verdict = action.property_id, action.verdict
        if goal not in self.history:
            self.feedback.append(f"conclude rejected: unknown goal {goal!r}")
            return
        if goal in self.verdicts:
            self.feedback.append(f"conclude rejected: {goal!r} already has a verdict")
            return
        if verdict.conclusive:
            if not self.history.is_conclusive(goal):
                view = self.history.view(goal)
                self.feedback.append(
                    f"conclude rejected: {goal!r} has {view.record_count} of {self.config.k} records"
                    + (" and is abandoned" if view.status is GoalStatus.ABANDONED else "")
                )
                return
            problem = check_verdict(verdict, self.config.k)
            if problem:
                self.feedback.append(f"conclude rejected: {problem}")
                return
        elif self.history.status(goal) is GoalStatus.ABANDONED:
            self.feedback.append(f"conclude rejected: {goal!r} is abandoned")
            return
        self.verdicts[goal] = verdict
        self.trajectory.add(
            Step(Actor.VERIFIER, StepKind.HISTORY_MUTATION, {"event": "conclude", "goal": goal, **verdict.to_json()})
        )

    def handle_request(self, goal: str) -> None:
        if goal not in self.history:
            self.feedback.append(f"request_generation rejected: unknown goal {goal!r}")
            return
        view = self.history.view(goal)
        if view.status is GoalStatus.ABANDONED:
            self.feedback.append(f"request_generation rejected: {goal!r} is abandoned")
            return
        if view.record_count >= self.config.k:
            self.feedback.append(f"request_generation rejected: {goal!r} already has {self.config.k} records")
            return
        try:
            rec = self.toolgen_step(goal)
        except GenerationStarved as exc:
            self.feedback.append(f"generation for {goal!r} failed: {exc}")
            return
        if rec is None:
            return
        self.history.record(goal, rec)
        self._mutation(Actor.TOOLGEN, event="record", goal=goal, **rec.to_json())
        self.feedback.append(f"new record for {goal!r} using {rec.command.tool_name}")

    # -- tool generation

    def _generation_request(self, goal: str) -> str:
        ctx = {
            "goal": goal,
            "used_tools": self.history.used_tools(goal),
            "records": [r.to_json() for r in self.history.records(goal)],
            "exploratory": [r.to_json() for r in self.history.exploratory(goal)],
        }
        if self.history.origin(goal) is GoalOrigin.FROM_SPEC:
            ctx["property"] = prompts.property_json(self.spec, self.spec.property(goal))
        else:
            ctx["property"] = {"id": goal, "description": self.history._entry(goal).description}
        used = ", ".join(ctx["used_tools"]) or "none"
        return f"Generate one verification command for goal {goal}. Tools already used: {used}.\n" + prompts.context_block(ctx)

    def toolgen_step(self, goal: str) -> ToolExecutionRecord | None:
        """Run one generation for ``goal``; None if the budget ran out first."""
        messages = [system(self._toolgen_system), user(self._generation_request(goal))]
        self.trajectory.add(Step(Actor.TOOLGEN, StepKind.CONTEXT_RESET, {"goal": goal}))
        used = set(self.history.used_tools(goal))
        exploratory: list[ToolExecutionRecord] = []
        attempts = 0
        try:
            while attempts < self.config.toolgen_retry_limit:
                reply, step = self._chat(messages, Actor.TOOLGEN, StepKind.TOOL_INVOCATION)
                attempts += 1
                messages.append(assistant(reply))
                step.payload["goal"] = goal
                try:
                    action = parse_toolgen_reply(reply)
                    if not isinstance(action, GenerateCall):
                        raise ParseFailure("expected a call action")
                except ParseFailure as exc:
                    step.payload["parse_error"] = str(exc)
                    messages.append(user(f"Protocol error: {exc}. Reply with a call action."))
                    continue
                call = action.call
                step.payload["call"] = call.to_json()
                if call.tool_name in used:
                    step.payload["rejected"] = "duplicate_tool"
                    messages.append(
                        user(
                            f"Rejected: {call.tool_name} was already used for {goal}. Use a different tool.\n"
                            + prompts.context_block({"outcome": "rejected", "tool": call.tool_name})
                        )
                    )
                    continue
                outcome = self.registry.invoke(call, self.env, self.faults)
                step.payload["outcome"] = {"status": outcome.status, "output": outcome.output, "error": outcome.error}
                if not outcome.ok:
                    exploratory.append(ToolExecutionRecord(call, outcome.text(), "interface error, corrected"))
                    messages.append(
                        user(
                            f"The call failed: {outcome.error}\nFix the call and try again.\n"
                            + prompts.context_block({"outcome": "interface_error", "tool": call.tool_name, "error": outcome.error})
                        )
                    )
                    continue
                messages.append(
                    user(
                        "The call succeeded. Output:\n"
                        + (outcome.output if outcome.output else "(empty output)")
                        + "\nReply with a record action analysing what this shows about the property.\n"
                        + prompts.context_block({"outcome": "success", "tool": call.tool_name, "output": outcome.output})
                    )
                )
                reply, astep = self._chat(messages, Actor.TOOLGEN, StepKind.REASONING, counted=False)
                astep.payload["goal"] = goal
                try:
                    record = parse_toolgen_reply(reply)
                    analysis = record.analysis if isinstance(record, RecordAnalysis) else MISSING_ANALYSIS
                except ParseFailure as exc:
                    astep.payload["parse_error"] = str(exc)
                    analysis = MISSING_ANALYSIS
                self._keep_exploratory(goal, exploratory)
                return ToolExecutionRecord(call, outcome.output, analysis)
        except BudgetExhausted:
            self._keep_exploratory(goal, exploratory)
            return None
        self._keep_exploratory(goal, exploratory)
        raise GenerationStarved(goal, attempts)

    def _keep_exploratory(self, goal: str, records: list[ToolExecutionRecord]) -> None:
        if not self.config.record_exploratory:
            return
        for rec in records:
            self.history.record_exploratory(goal, rec)

    # -- main loop

    def run(self) -> RunResult:
        try:
            while self.budget_left > 0:
                try:
                    actions = self.verifier_step()
                except ProtocolViolation as exc:
                    self.feedback.append(f"protocol violation: {exc}")
                    continue
                if self.apply(actions):
                    self.trajectory.terminated_by = Termination.SUBMIT
                    break
            else:
                self.trajectory.terminated_by = Termination.STEP_CAP
        except BudgetExhausted:
            self.trajectory.terminated_by = Termination.STEP_CAP
        except BackendError as exc:
            log.warning("backend failure: %s", exc)
            self.trajectory.terminated_by = Termination.BACKEND_ERROR
            self.trajectory.error = f"{type(exc).__name__}: {exc}"
        return RunResult(self.trajectory, self.solution, self.history, dict(self.verdicts))


def run_riva(
    task,
    env: Environment,
    registry: ToolRegistry,
    faults: ToolFaultConfig | None,
    backend: ChatBackend,
    config: OrchestratorConfig | None = None,
    on_history: Callable[[ToolHistory], None] | None = None,
) -> RunResult:
    return RivaRun(task, env, registry, faults, backend, config or OrchestratorConfig(), on_history).run()


def verifier_step(run: RivaRun) -> list[VerifierAction]:
    return run.verifier_step()


def toolgen_step(run: RivaRun, goal: str) -> ToolExecutionRecord | None:
    return run.toolgen_step(goal)


def dump_messages(messages: list[ChatMessage]) -> str:
    return json.dumps([m.to_json() for m in messages], indent=2)
