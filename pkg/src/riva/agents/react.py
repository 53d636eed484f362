"""Single-agent ReAct baseline: one conversation alternating thoughts and actions."""

from __future__ import annotations

import logging

from riva.agents import prompts
from riva.agents.orchestrator import RunResult, _task_type
from riva.agents.protocol import ParseFailure, Solution, parse_react_reply
from riva.agents.trajectory import Actor, Step, StepKind, Termination, Trajectory
from riva.env import Environment
from riva.llm import BackendError, ChatBackend, assistant, system, user
from riva.toolkit import NO_FAULTS, ToolFaultConfig, ToolRegistry

log = logging.getLogger(__name__)


def run_react(
    task,
    env: Environment,
    registry: ToolRegistry,
    faults: ToolFaultConfig | None,
    backend: ChatBackend,
    max_steps: int = 45,
) -> RunResult:
    if max_steps < 1:
        raise ValueError("max_steps must be ≥ 1")
    task_type = _task_type(task)
    faults = NO_FAULTS if faults is None else faults
    messages = [
        system(prompts.react_system(env.spec, task_type, registry.manifest_json())),
        user("Begin. Check the specification against the live infrastructure and answer the task."),
    ]
    trajectory = Trajectory()
    solution = None
    try:
        while trajectory.steps_used < max_steps:
            reply, usage = backend.chat(messages)
            step = trajectory.add(Step(Actor.REACT, StepKind.REASONING, {"reply": reply}, usage, counted=True))
            messages.append(assistant(reply))
            try:
                turn = parse_react_reply(reply)
            except ParseFailure as exc:
                step.payload["parse_error"] = str(exc)
                messages.append(user(f"Observation: protocol error: {exc}. Reply with one fenced json block."))
                continue
            if turn.answer is not None:
                solution = Solution(task_type, turn.answer)
                trajectory.add(Step(Actor.REACT, StepKind.SUBMISSION, solution.to_json()))
                trajectory.terminated_by = Termination.SUBMIT
                break
            outcome = registry.invoke(turn.call, env, faults)
            trajectory.add(
                Step(
                    Actor.REACT,
                    StepKind.TOOL_INVOCATION,
                    {"call": turn.call.to_json(), "status": outcome.status, "output": outcome.output, "error": outcome.error},
                )
            )
            messages.append(
                user(
                    "Observation:\n"
                    + (outcome.output if outcome.ok else f"InterfaceError: {outcome.error}")
                    + "\n"
                    + prompts.context_block(
                        {"outcome": outcome.status, "tool": turn.call.tool_name, "output": outcome.output, "error": outcome.error}
                    )
                )
            )
        else:
            trajectory.terminated_by = Termination.STEP_CAP
    except BackendError as exc:
        log.warning("backend failure: %s", exc)
        trajectory.terminated_by = Termination.BACKEND_ERROR
        trajectory.error = f"{type(exc).__name__}: {exc}"
    return RunResult(trajectory, solution)
