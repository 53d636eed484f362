"""Command-line entry point: run one task, run a suite, inspect and export results."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from riva import __version__
from riva.agents.trajectory import Trajectory
from riva.env import load_scenario
from riva.harness import (
    DEFAULT_MAX_STEPS,
    EXPORT_FORMATS,
    AggregateReport,
    AgentSpec,
    ReplayBackend,
    Task,
    bundled_scenarios,
    evaluate,
    export,
    http_factory,
    load_suite,
    parse_agent,
    resolve_suite,
    run_task,
    scripted_factory,
)
from riva.llm import parse_backend_url
from riva.toolkit import FAULT_CONDITIONS

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _integer(name: str):
    def check(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        return value

    return check


def _backend_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend")
    g.add_argument(
        "--backend",
        default="scripted",
        help="scripted, scripted:<script.json>, or a chat-completions base URL (default: scripted)",
    )
    g.add_argument("--model", help="model name for an HTTP backend")
    g.add_argument(
        "--api-key-env",
        default="OPENAI_API_KEY",
        help="environment variable holding the API key (default: OPENAI_API_KEY)",
    )
    g.add_argument("--temperature", type=float, default=0.0, help="sampling temperature (default: 0)")


def _agent_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=_integer("k"), default=2, help="distinct tool calls per property (default: 2)")
    p.add_argument(
        "--max-steps",
        type=_integer("max-steps"),
        default=DEFAULT_MAX_STEPS,
        help=f"step budget shared by all agents in one run (default: {DEFAULT_MAX_STEPS})",
    )
    p.add_argument(
        "--record-exploratory",
        action="store_true",
        help="keep failed correction attempts in the history (never counted toward k)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riva",
        description="Verify infrastructure specifications with cross-validated tool calls.",
    )
    parser.add_argument("--version", action="version", version=f"riva {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    run = sub.add_parser("run", help="run one scenario with one agent")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--agent", default="riva", help="riva, riva:<k> or react (default: riva)")
    _agent_args(run)
    run.add_argument(
        "--fault",
        default="none",
        choices=sorted(FAULT_CONDITIONS),
        help="tool-fault condition (default: none)",
    )
    _backend_args(run)
    run.add_argument("--replay", help="trajectory.json whose recorded replies drive the run")
    run.add_argument("--seed", type=int, default=0, help="seed offset added to the scenario seed (default: 0)")
    run.add_argument("--rep", type=int, default=0, help="repetition index used in the output path (default: 0)")
    run.add_argument("--out", default="out", help="output directory (default: out)")
    run.add_argument("--strict", action="store_true", help="exit 1 when the run is scored as a failure")

    ev = sub.add_parser("eval", help="run a suite and write aggregate reports")
    ev.add_argument("--suite", required=True, help="suite JSON file or bundled suite name")
    ev.add_argument("--agent", action="append", help="override the suite's agents (repeatable)")
    ev.add_argument("--fault", action="append", choices=sorted(FAULT_CONDITIONS), help="override conditions (repeatable)")
    ev.add_argument("--repetitions", type=int, help="override the repetition count")
    ev.add_argument("--seed", type=int, action="append", help="override seeds, one per repetition (repeatable)")
    ev.add_argument("--max-steps", type=_integer("max-steps"), help="override the suite's step budget")
    _backend_args(ev)
    ev.add_argument("--workers", type=int, default=1, help="parallel runs (default: 1)")
    ev.add_argument("--out", default="out", help="output directory (default: out)")
    ev.add_argument("--strict", action="store_true", help="exit 1 when any run is scored as a failure")

    ins = sub.add_parser("inspect", help="summarise a run directory or history/trajectory file")
    ins.add_argument("path", help="run directory, history.json, trajectory.json or report.json")

    exp = sub.add_parser("export", help="convert an aggregate report")
    exp.add_argument("--report", required=True, help="aggregate.json written by eval")
    exp.add_argument("--format", required=True, choices=EXPORT_FORMATS, help="output format")
    exp.add_argument("--output", required=True, help="file to write")

    ls = sub.add_parser("list-tasks", help="list the tasks of a suite or the bundled scenarios")
    ls.add_argument("--suite", help="suite JSON file or bundled suite name (default: all bundled scenarios)")
    return parser


def _factory(args):
    kind, location = parse_backend_url(args.backend)
    if kind == "scripted":
        return scripted_factory(location)
    if not args.model:
        raise ConfigError("--model is required with an HTTP backend")
    return http_factory(location, args.model, args.api_key_env, args.temperature)


def cmd_run(args) -> int:
    if args.k < 1:
        raise ConfigError("k must be ≥ 1")
    if args.max_steps < 1:
        raise ConfigError("max-steps must be ≥ 1")
    agent = parse_agent(args.agent, default_k=args.k)
    if agent.kind == "riva" and ":" not in args.agent:
        agent = AgentSpec("riva", args.k)
    task = Task.from_scenario(load_scenario(args.scenario))
    if args.replay:
        backend = ReplayBackend(Trajectory.from_json(json.loads(Path(args.replay).read_text(encoding="utf-8"))))
    else:
        backend = _factory(args)(task)
    report, _ = run_task(
        task, agent, args.fault, args.rep, args.seed, backend, args.max_steps, args.record_exploratory, args.out
    )
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return EXIT_FAILED if args.strict and not report.success else EXIT_OK


def cmd_eval(args) -> int:
    suite = load_suite(resolve_suite(args.suite))
    agents = [parse_agent(a) for a in args.agent] if args.agent else None
    if args.workers < 1:
        raise ConfigError("workers must be ≥ 1")

    def progress(r) -> None:
        logging.getLogger("riva").info("%s %s %s rep=%d success=%s steps=%d", r.task_id, r.agent, r.condition, r.rep, r.success, r.steps)

    report = evaluate(
        suite,
        agents=agents,
        conditions=args.fault,
        repetitions=args.repetitions,
        seeds=args.seed,
        workers=args.workers,
        out_dir=args.out,
        backend_factory=_factory(args),
        max_steps=args.max_steps,
        on_report=progress,
    )
    print(f"{'agent':<10} {'condition':<13} {'task type':<13} {'success':>9} {'rate':>6}")
    for g in report.groups:
        print(f"{g.agent:<10} {g.condition:<13} {g.task_type:<13} {g.successes:>4}/{g.runs:<4} {g.success_rate:>6.2f}")
    print(f"wrote {Path(args.out) / 'aggregate.json'}")
    failed = any(not r.success for r in report.runs)
    return EXIT_FAILED if args.strict and failed else EXIT_OK


def _inspect_history(data: dict) -> list[str]:
    lines = [f"k = {data.get('k')}"]
    for goal, entry in data.get("goals", {}).items():
        lines.append(f"{goal} [{entry['status']}, {entry['origin']}] {len(entry['records'])} record(s)")
        for i, rec in enumerate(entry["records"]):
            result = rec["result"].strip().splitlines()
            first = result[0] if result else "(empty output)"
            lines.append(f"  #{i} {rec['tool']}({json.dumps(rec['args'], sort_keys=True)}) -> {first[:70]}")
            lines.append(f"     {rec['analysis']}")
        for rec in entry.get("exploratory", []):
            lines.append(f"  (exploratory) {rec['tool']} -> {rec['result'][:70]}")
    return lines


def _inspect_trajectory(data: dict) -> list[str]:
    lines = [f"terminated by {data.get('terminated_by')} after {data.get('steps_used')} step(s)"]
    for step in data["steps"]:
        payload = step["payload"]
        mark = "*" if step["counted"] else " "
        detail = payload.get("event") or payload.get("call", {}).get("tool") or payload.get("answer") or payload.get("goal") or ""
        lines.append(f"{mark} {step['actor']:<8} {step['kind']:<16} {detail}")
    return lines


def cmd_inspect(args) -> int:
    path = Path(args.path)
    files = [path / n for n in ("report.json", "history.json", "trajectory.json")] if path.is_dir() else [path]
    found = False
    for f in files:
        if not f.exists():
            continue
        found = True
        data = json.loads(f.read_text(encoding="utf-8"))
        print(f"== {f.name}")
        if "task_id" in data:
            out = [f"{key}: {json.dumps(value, sort_keys=True)}" for key, value in sorted(data.items())]
        elif "goals" in data:
            out = _inspect_history(data)
        elif isinstance(data.get("steps"), list):
            out = _inspect_trajectory(data)
        else:
            out = [f"{key}: {json.dumps(value, sort_keys=True)}" for key, value in sorted(data.items())]
        print("\n".join(out))
    if not found:
        raise ConfigError(f"nothing to inspect at {path}")
    return EXIT_OK


def cmd_export(args) -> int:
    report = AggregateReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    print(export(report, args.format, args.output))
    return EXIT_OK


def cmd_list_tasks(args) -> int:
    if args.suite:
        tasks = load_suite(resolve_suite(args.suite)).tasks
    else:
        tasks = [Task.from_scenario(load_scenario(p)) for p in bundled_scenarios()]
    for task in tasks:
        faults = ", ".join(f.kind for f in task.scenario.faults) or "no faults"
        print(f"{task.id:<28} {task.type.value:<13} {faults:<28} expected: {task.expected}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "eval": cmd_eval, "inspect": cmd_inspect, "export": cmd_export, "list-tasks": cmd_list_tasks}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"riva: error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
