"""Verifier / tool-generation agents, the ReAct baseline, and scripted policies."""

from riva.agents.orchestrator import (
    BudgetExhausted,
    GenerationStarved,
    OrchestratorConfig,
    ProtocolViolation,
    RivaRun,
    RunResult,
    run_riva,
)
from riva.agents.protocol import ParseFailure, Solution, TaskType
from riva.agents.react import run_react
from riva.agents.trajectory import Actor, Step, StepKind, Termination, Trajectory

__all__ = [
    "Actor",
    "BudgetExhausted",
    "GenerationStarved",
    "OrchestratorConfig",
    "ParseFailure",
    "ProtocolViolation",
    "RivaRun",
    "RunResult",
    "Solution",
    "Step",
    "StepKind",
    "TaskType",
    "Termination",
    "Trajectory",
    "run_react",
    "run_riva",
]
