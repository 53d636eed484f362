"""Tasks, scoring, the repetition protocol, and report export.

A suite file names scenarios, agents, tool-fault conditions, repetitions and
seeds. ``evaluate`` runs the full cross-product, writing each run's
trajectory, history snapshot and report as soon as it finishes, and merges
the results into an ``AggregateReport`` keyed deterministically so the
worker count never changes the output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from statistics import fmean
from typing import Any, Callable, Iterable, Sequence

from riva.agents import prompts
from riva.agents.orchestrator import OrchestratorConfig, RunResult, run_riva
from riva.agents.protocol import Solution, TaskType
from riva.agents.react import run_react
from riva.agents.scripted import default_backend, load_script
from riva.agents.trajectory import Termination, Trajectory
from riva.env import FAULT_KINDS, GroundTruth, Scenario, load_scenario
from riva.llm import ChatBackend, ChatMessage, HttpChatBackend, TokenUsage, cumulative_usage, estimate_usage
from riva.toolkit import FAULT_CONDITIONS, default_registry, fault_condition

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_CONDITIONS = ("none", "get_logs", "read_metrics", "both")
DEFAULT_REPETITIONS = 5
DEFAULT_MAX_STEPS = 45
RUN_ERROR = "run_error"


def corpus_path(*parts: str) -> Path:
    """Path inside the bundled scenario corpus."""
    return Path(str(resources.files("riva").joinpath("corpus", *parts)))


# --------------------------------------------------------------------------
# tasks and scoring


@dataclass(frozen=True)
class Task:
    id: str
    type: TaskType
    scenario: Scenario
    expected: str

    @classmethod
    def from_scenario(cls, scenario: Scenario, task_type: str | TaskType | None = None) -> Task:
        ttype = TaskType(task_type or scenario.task_type)
        return cls(scenario.name, ttype, scenario, expected_answer(ttype, scenario.ground_truth()))


def expected_answer(task_type: TaskType, truth: GroundTruth) -> str:
    task_type = TaskType(task_type)
    if task_type is TaskType.DETECTION:
        return "yes" if truth.violated_properties else "no"
    if task_type is TaskType.LOCALIZATION:
        return ", ".join(truth.faulty_components) if truth.faulty_components else "none"
    if truth.faulty_component is None:
        return "component=none; fault=none"
    return f"component={truth.faulty_component}; fault={truth.root_cause}"


# words that may surround a component name without changing which one is meant
FILLER = frozenset({"a", "an", "the", "service", "component", "resource", "instance", "host", "is", "faulty", "at", "in", "on"})
NONE_WORDS = frozenset({"none", "nothing", "no fault", "no faults", "healthy", "n/a"})


def normalize_component(text: str) -> str:
    """Lowercase, drop punctuation and filler words, collapse whitespace.

    ``"The Web service."`` and ``"web"`` both normalize to ``"web"``;
    hyphens and underscores inside a name are kept.
    """
    tokens = re.findall(r"[a-z0-9]+(?:[-_][a-z0-9]+)*", text.lower())
    return " ".join(t for t in tokens if t not in FILLER)


def _canonical(name: str, aliases: dict[str, list[str]]) -> str:
    norm = normalize_component(name)
    for canonical, names in aliases.items():
        if norm in {normalize_component(canonical), *(normalize_component(n) for n in names)}:
            return normalize_component(canonical)
    return norm


def _named_components(answer: str, aliases: dict[str, list[str]]) -> set[str]:
    parts = re.split(r",|;|\band\b|&|/", answer)
    names = {_canonical(p, aliases) for p in parts}
    return {n for n in names if n and n not in NONE_WORDS}


def _says_none(answer: str) -> bool:
    return normalize_component(answer) in NONE_WORDS or answer.strip().lower() in NONE_WORDS


def _fault_kind(answer: str) -> str | None:
    m = re.search(r"fault\s*=\s*([A-Za-z]+)", answer)
    squashed = re.sub(r"[\s_-]", "", answer.lower())
    if m:
        squashed = m.group(1).lower()
    for kind in FAULT_KINDS:
        if kind.lower() in squashed:
            return kind
    if squashed in ("none", "nofault"):
        return "none"
    return None


def score(task: Task, solution: Solution | None, truth: GroundTruth) -> bool:
    """Pure scoring of one submitted answer against the ground truth."""
    if solution is None:
        return False
    answer = solution.answer.strip()
    aliases = task.scenario.aliases
    if task.type is TaskType.DETECTION:
        m = re.match(r"\W*(yes|no)\b", answer.lower())
        return m is not None and (m.group(1) == "yes") == bool(truth.violated_properties)
    if task.type is TaskType.LOCALIZATION:
        if not truth.faulty_components:
            return _says_none(answer)
        want = {_canonical(c, aliases) for c in truth.faulty_components}
        return _named_components(answer, aliases) == want
    kind = _fault_kind(answer)
    m = re.search(r"component\s*=\s*([^;]+)", answer)
    component = m.group(1) if m else answer
    if truth.faulty_component is None:
        return kind == "none" or _says_none(component)
    if kind != truth.root_cause:
        return False
    named = _named_components(component, aliases) if m else {
        c for c in map(normalize_component, [truth.faulty_component, *aliases.get(truth.faulty_component, [])])
        if re.search(rf"\b{re.escape(c)}\b", normalize_component(answer))
    }
    return _canonical(truth.faulty_component, aliases) in {_canonical(n, aliases) for n in named}


# --------------------------------------------------------------------------
# agents and backends


@dataclass(frozen=True)
class AgentSpec:
    kind: str  # riva | react
    k: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("riva", "react"):
            raise ValueError(f"unknown agent {self.kind!r}; choose riva or react")
        if self.kind == "riva" and (self.k is None or self.k < 1):
            raise ValueError("k must be ≥ 1")

    @property
    def label(self) -> str:
        return f"riva:{self.k}" if self.kind == "riva" else "react"

    @property
    def dirname(self) -> str:
        return f"riva-k{self.k}" if self.kind == "riva" else "react"


def parse_agent(text: str, default_k: int = 2) -> AgentSpec:
    """``riva``, ``riva:3`` or ``react``."""
    kind, _, k = text.partition(":")
    if kind == "react":
        return AgentSpec("react")
    try:
        return AgentSpec(kind, int(k) if k else default_k)
    except ValueError as exc:
        if "invalid literal" in str(exc):
            raise ValueError(f"bad agent {text!r}: k must be an integer") from None
        raise


BackendFactory = Callable[[Task], ChatBackend]


def scripted_factory(script: str | Path | None = None) -> BackendFactory:
    """Per-task scripted backend: an explicit script, else the scenario's own, else the default."""

    def make(task: Task) -> ChatBackend:
        path = script or task.scenario.script
        return load_script(path) if path else default_backend()

    return make


def http_factory(base_url: str, model: str, api_key_env: str = "OPENAI_API_KEY", temperature: float = 0.0) -> BackendFactory:
    def make(task: Task) -> ChatBackend:
        return HttpChatBackend(base_url, model, temperature=temperature, api_key_env=api_key_env)

    return make


class ReplayBackend:
    """Returns the replies recorded in a trajectory, in order."""

    def __init__(self, trajectory: Trajectory, name: str = "replay"):
        self.replies = [s.payload["reply"] for s in trajectory.steps if s.token_usage is not None]
        self.name = name
        self.temperature = 0.0
        self._next = 0

    def chat(self, messages: Sequence[ChatMessage]) -> tuple[str, TokenUsage]:
        if self._next >= len(self.replies):
            raise IndexError("replay exhausted: the run asked for more replies than were recorded")
        reply = self.replies[self._next]
        self._next += 1
        return reply, estimate_usage(messages, reply)


# --------------------------------------------------------------------------
# single runs


@dataclass
class RunReport:
    task_id: str
    task_type: str
    agent: str
    k: int | None
    condition: str
    rep: int
    seed: int
    success: bool
    steps: int
    max_context_tokens: int
    total_tokens: int
    tokens_estimated: bool
    terminated_by: str
    prompt_hash: str
    backend: str
    temperature: float
    answer: str | None
    expected: str
    verdicts: dict[str, str] = field(default_factory=dict)
    error: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> RunReport:
        problems = validate_report(data)
        if problems:
            raise ValueError("invalid run report: " + "; ".join(problems))
        return cls(**data)


_REPORT_TYPES: dict[str, tuple[type, ...]] = {
    "task_id": (str,),
    "task_type": (str,),
    "agent": (str,),
    "k": (int, type(None)),
    "condition": (str,),
    "rep": (int,),
    "seed": (int,),
    "success": (bool,),
    "steps": (int,),
    "max_context_tokens": (int,),
    "total_tokens": (int,),
    "tokens_estimated": (bool,),
    "terminated_by": (str,),
    "prompt_hash": (str,),
    "backend": (str,),
    "temperature": (int, float),
    "answer": (str, type(None)),
    "expected": (str,),
    "verdicts": (dict,),
    "error": (str, type(None)),
    "schema_version": (int,),
}


def validate_report(data: Any) -> list[str]:
    """Schema problems in a RunReport JSON object (empty when valid)."""
    if not isinstance(data, dict):
        return ["not an object"]
    problems = []
    for key, types in _REPORT_TYPES.items():
        if key not in data:
            problems.append(f"missing {key}")
        elif not isinstance(data[key], types) or (bool not in types and isinstance(data[key], bool)):
            problems.append(f"{key} has type {type(data[key]).__name__}")
    extra = sorted(set(data) - set(_REPORT_TYPES))
    if extra:
        problems.append(f"unexpected keys {extra}")
    if not problems:
        if data["task_type"] not in {t.value for t in TaskType}:
            problems.append(f"bad task_type {data['task_type']!r}")
        if data["terminated_by"] not in {t.value for t in Termination} | {RUN_ERROR}:
            problems.append(f"bad terminated_by {data['terminated_by']!r}")
        if data["terminated_by"] == Termination.STEP_CAP.value and data["success"]:
            problems.append("success with step cap reached")
    return problems


def run_dir(out_dir: Path, task_id: str, agent: AgentSpec, condition: str, rep: int) -> Path:
    return Path(out_dir) / "runs" / task_id / agent.dirname / condition / str(rep)


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_task(
    task: Task,
    agent: AgentSpec,
    condition: str,
    rep: int = 0,
    seed: int = 0,
    backend: ChatBackend | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    record_exploratory: bool = False,
    out_dir: str | Path | None = None,
) -> tuple[RunReport, RunResult | None]:
    """Run one (task, agent, condition, repetition) and optionally write its artifacts."""
    backend = backend or scripted_factory()(task)
    env_seed = task.scenario.seed + seed
    result: RunResult | None = None
    error = None
    try:
        env = task.scenario.build(env_seed)
        truth = task.scenario.ground_truth(env)
        registry = default_registry()
        faults = fault_condition(condition)
        if agent.kind == "riva":
            config = OrchestratorConfig(k=agent.k, max_steps=max_steps, record_exploratory=record_exploratory)
            result = run_riva(task.type, env, registry, faults, backend, config)
        else:
            result = run_react(task.type, env, registry, faults, backend, max_steps=max_steps)
    except Exception as exc:  # a broken run is recorded, never fatal to the suite
        log.exception("run %s/%s/%s/%d failed", task.id, agent.label, condition, rep)
        error = f"{type(exc).__name__}: {exc}"

    if result is not None:
        traj = result.trajectory
        usage, max_context = cumulative_usage(traj)
        terminated = traj.terminated_by.value if traj.terminated_by else RUN_ERROR
        success = terminated == Termination.SUBMIT.value and score(task, result.solution, truth)
        error = traj.error
    else:
        traj, usage, max_context, terminated, success = Trajectory(), TokenUsage(), 0, RUN_ERROR, False
    report = RunReport(
        task_id=task.id,
        task_type=task.type.value,
        agent=agent.label,
        k=agent.k,
        condition=condition,
        rep=rep,
        seed=seed,
        success=success,
        steps=traj.steps_used,
        max_context_tokens=max_context,
        total_tokens=usage.total_tokens,
        tokens_estimated=usage.estimated,
        terminated_by=terminated,
        prompt_hash=prompts.prompt_hash(),
        backend=str(getattr(backend, "name", type(backend).__name__)),
        temperature=float(getattr(backend, "temperature", 0.0)),
        answer=result.solution.answer if result is not None and result.solution else None,
        expected=task.expected,
        verdicts={g: v.value.value for g, v in sorted(result.verdicts.items())} if result is not None else {},
        error=error,
    )
    if out_dir is not None:
        d = run_dir(Path(out_dir), task.id, agent, condition, rep)
        _write_json(d / "trajectory.json", traj.to_json())
        history = result.history.snapshot() if result is not None and result.history is not None else {"k": None, "goals": {}}
        _write_json(d / "history.json", history)
        _write_json(d / "report.json", report.to_json())
    return report, result


# --------------------------------------------------------------------------
# suites


@dataclass
class Suite:
    name: str
    tasks: list[Task]
    agents: list[AgentSpec]
    conditions: list[str]
    repetitions: int = DEFAULT_REPETITIONS
    seeds: list[int] = field(default_factory=list)
    max_steps: int = DEFAULT_MAX_STEPS
    record_exploratory: bool = False

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be ≥ 1")
        if not self.seeds:
            self.seeds = list(range(self.repetitions))
        if len(self.seeds) != self.repetitions:
            raise ValueError(f"need {self.repetitions} seeds, got {len(self.seeds)}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct per repetition")
        for cond in self.conditions:
            if cond not in FAULT_CONDITIONS:
                raise ValueError(f"unknown fault condition {cond!r}; choose from {sorted(FAULT_CONDITIONS)}")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("task ids must be unique within a suite")


def load_suite(path: str | Path) -> Suite:
    """Suite file: ``{name, tasks: [scenario path | {scenario, type}], agents, conditions, repetitions, seeds, max_steps}``."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    tasks = []
    for item in data["tasks"]:
        if isinstance(item, str):
            item = {"scenario": item}
        scenario = load_scenario(path.parent / item["scenario"])
        tasks.append(Task.from_scenario(scenario, item.get("type")))
    return Suite(
        name=data.get("name", path.stem),
        tasks=tasks,
        agents=[parse_agent(a) for a in data.get("agents", ["riva:2", "react"])],
        conditions=list(data.get("conditions", DEFAULT_CONDITIONS)),
        repetitions=int(data.get("repetitions", DEFAULT_REPETITIONS)),
        seeds=[int(s) for s in data.get("seeds", [])],
        max_steps=int(data.get("max_steps", DEFAULT_MAX_STEPS)),
        record_exploratory=bool(data.get("record_exploratory", False)),
    )


def resolve_suite(name_or_path: str) -> Path:
    """A suite file path, or the name of a bundled suite such as ``protocol``."""
    path = Path(name_or_path)
    if path.exists():
        return path
    bundled = corpus_path("suites", f"{name_or_path}.json")
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no suite file {name_or_path!r} (bundled suites: {', '.join(bundled_suites())})")


def bundled_suites() -> list[str]:
    return sorted(p.stem for p in corpus_path("suites").glob("*.json"))


def bundled_scenarios() -> list[Path]:
    return sorted(corpus_path("scenarios").glob("*.json"))


# --------------------------------------------------------------------------
# aggregation


def empirical_cdf(values: Iterable[float]) -> list[tuple[float, float]]:
    """(value, fraction of samples ≤ value) for each distinct value, ascending."""
    values = sorted(values)
    n = len(values)
    points: list[tuple[float, float]] = []
    for i, v in enumerate(values, start=1):
        if i < n and values[i] == v:
            continue
        points.append((v, round(i / n, 6)))
    return points


@dataclass
class GroupStats:
    agent: str
    condition: str
    task_type: str
    runs: int
    successes: int
    success_rate: float
    task_mean_success_rate: float
    steps_cdf: list[tuple[float, float]]
    tokens_cdf: list[tuple[float, float]]
    max_context_cdf: list[tuple[float, float]]
    step_cap_runs: int

    def to_json(self) -> dict:
        data = asdict(self)
        for key in ("steps_cdf", "tokens_cdf", "max_context_cdf"):
            data[key] = [list(p) for p in data[key]]
        return data

    @classmethod
    def from_json(cls, data: dict) -> GroupStats:
        data = dict(data)
        for key in ("steps_cdf", "tokens_cdf", "max_context_cdf"):
            data[key] = [tuple(p) for p in data[key]]
        return cls(**data)


@dataclass
class AggregateReport:
    suite: str
    repetitions: int
    seeds: list[int]
    groups: list[GroupStats]
    runs: list[RunReport]
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "suite": self.suite,
            "repetitions": self.repetitions,
            "seeds": self.seeds,
            "groups": [g.to_json() for g in self.groups],
            "runs": [r.to_json() for r in self.runs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str | dict) -> AggregateReport:
        data = json.loads(text) if isinstance(text, str) else text
        return cls(
            suite=data["suite"],
            repetitions=data["repetitions"],
            seeds=list(data["seeds"]),
            groups=[GroupStats.from_json(g) for g in data["groups"]],
            runs=[RunReport.from_json(r) for r in data["runs"]],
            schema_version=data.get("schema_version", SCHEMA_VERSION),
        )


def _run_key(r: RunReport) -> tuple:
    return (r.task_id, r.agent, r.condition, r.rep)


def aggregate(suite_name: str, repetitions: int, seeds: list[int], runs: Iterable[RunReport]) -> AggregateReport:
    runs = sorted(runs, key=_run_key)
    buckets: dict[tuple[str, str, str], list[RunReport]] = {}
    for r in runs:
        buckets.setdefault((r.agent, r.condition, r.task_type), []).append(r)
    groups = []
    for (agent, condition, task_type), items in sorted(buckets.items()):
        per_task: dict[str, list[bool]] = {}
        for r in items:
            per_task.setdefault(r.task_id, []).append(r.success)
        successes = sum(r.success for r in items)
        groups.append(
            GroupStats(
                agent=agent,
                condition=condition,
                task_type=task_type,
                runs=len(items),
                successes=successes,
                success_rate=round(successes / len(items), 6),
                task_mean_success_rate=round(fmean(sum(v) / len(v) for v in per_task.values()), 6),
                steps_cdf=empirical_cdf(r.steps for r in items),
                tokens_cdf=empirical_cdf(r.total_tokens for r in items),
                max_context_cdf=empirical_cdf(r.max_context_tokens for r in items),
                step_cap_runs=sum(r.terminated_by == Termination.STEP_CAP.value for r in items),
            )
        )
    return AggregateReport(suite_name, repetitions, list(seeds), groups, runs)


def evaluate(
    suite: Suite,
    agents: Sequence[AgentSpec] | None = None,
    conditions: Sequence[str] | None = None,
    repetitions: int | None = None,
    seeds: Sequence[int] | None = None,
    workers: int = 1,
    out_dir: str | Path | None = None,
    backend_factory: BackendFactory | None = None,
    max_steps: int | None = None,
    on_report: Callable[[RunReport], None] | None = None,
) -> AggregateReport:
    """Run every (task, agent, condition, repetition) of ``suite``."""
    agents = list(agents or suite.agents)
    conditions = list(conditions or suite.conditions)
    if repetitions is not None or seeds is not None:
        reps = repetitions if repetitions is not None else len(seeds)
        suite = Suite(suite.name, suite.tasks, agents, conditions, reps, list(seeds or []), suite.max_steps, suite.record_exploratory)
    for cond in conditions:
        fault_condition(cond)
    factory = backend_factory or scripted_factory()
    steps = max_steps or suite.max_steps
    jobs = [
        (task, agent, cond, rep, seed)
        for task in suite.tasks
        for agent in agents
        for cond in conditions
        for rep, seed in enumerate(suite.seeds)
    ]

    def one(job) -> RunReport:
        task, agent, cond, rep, seed = job
        report, _ = run_task(task, agent, cond, rep, seed, factory(task), steps, suite.record_exploratory, out_dir)
        if on_report is not None:
            on_report(report)
        return report

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, jobs))
    else:
        reports = [one(job) for job in jobs]
    report = aggregate(suite.name, suite.repetitions, suite.seeds, reports)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "aggregate.json").write_text(report.to_json(), encoding="utf-8")
        export(report, "csv", out / "aggregate.csv")
        export(report, "cdf-csv", out / "cdf.csv")
    return report


# --------------------------------------------------------------------------
# export

EXPORT_FORMATS = ("json", "csv", "cdf-csv")
CSV_COLUMNS = (
    "agent",
    "condition",
    "task_type",
    "runs",
    "successes",
    "success_rate",
    "task_mean_success_rate",
    "step_cap_runs",
)
CDF_COLUMNS = ("agent", "condition", "task_type", "metric", "value", "cumulative_fraction")
CDF_METRICS = (("steps", "steps_cdf"), ("total_tokens", "tokens_cdf"), ("max_context_tokens", "max_context_cdf"))


def render_export(report: AggregateReport, fmt: str) -> str:
    if fmt == "json":
        return report.to_json()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if fmt == "csv":
        writer.writerow(CSV_COLUMNS)
        for g in report.groups:
            writer.writerow([getattr(g, c) for c in CSV_COLUMNS])
    elif fmt == "cdf-csv":
        writer.writerow(CDF_COLUMNS)
        for g in report.groups:
            for metric, attr in CDF_METRICS:
                for value, frac in getattr(g, attr):
                    writer.writerow([g.agent, g.condition, g.task_type, metric, value, frac])
    else:
        raise ValueError(f"unknown export format {fmt!r}; choose from {', '.join(EXPORT_FORMATS)}")
    return buf.getvalue()


def export(report: AggregateReport, fmt: str, path: str | Path) -> Path:
    text = render_export(report, fmt)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
