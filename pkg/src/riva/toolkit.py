"""Tool registry over environment observations, plus silent tool faults.

Argument validation always runs first, then the observation. A faulted tool
replaces a *successful* observation with the empty string; interface errors
and execution failures surface unchanged whether or not a fault is active.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from riva.env import EnvError, Environment, ObservationRequest, Surface


class RegistryError(Exception):
    pass


class DuplicateName(RegistryError):
    pass


class UnknownTool(RegistryError):
    pass


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "arguments", dict(self.arguments))

    def __hash__(self) -> int:
        return hash((self.tool_name, json.dumps(self.arguments, sort_keys=True, default=str)))

    def render(self) -> str:
        args = ", ".join(f"{k}={json.dumps(v)}" for k, v in self.arguments.items())
        return f"{self.tool_name}({args})"

    def to_json(self) -> dict:
        return {"tool": self.tool_name, "args": dict(self.arguments)}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> ToolCall:
        return cls(data["tool"], data.get("args", {}))


@dataclass(frozen=True)
class ToolOutcome:
    ok: bool
    output: str = ""
    error: str | None = None

    @classmethod
    def success(cls, output: str) -> ToolOutcome:
        return cls(True, output)

    @classmethod
    def interface_error(cls, message: str) -> ToolOutcome:
        return cls(False, "", message)

    @property
    def status(self) -> str:
        return "success" if self.ok else "interface_error"

    def text(self) -> str:
        return self.output if self.ok else f"InterfaceError: {self.error}"


_TYPE_NAMES = {str: "string", int: "integer", float: "number", bool: "boolean"}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    types: tuple[type, ...]
    required: bool = True
    description: str = ""

    def accepts(self, value: Any) -> bool:
        if isinstance(value, bool) and bool not in self.types:
            return False
        return isinstance(value, self.types)

    @property
    def type_name(self) -> str:
        return "|".join(_TYPE_NAMES[t] for t in self.types)


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    params: tuple[ParamSpec, ...]
    description: str
    surface: Surface
    bind: Callable[[Mapping[str, Any]], ObservationRequest]

    def validate(self, arguments: Any) -> str | None:
        """Return an error message, or None when ``arguments`` fit the schema."""
        if not isinstance(arguments, Mapping):
            return f"{self.name}: arguments must be an object"
        known = {p.name: p for p in self.params}
        for key in arguments:
            if key not in known:
                return f"{self.name}() got an unexpected argument {key!r}"
        for p in self.params:
            if p.name not in arguments:
                if p.required:
                    return f"{self.name}() missing required argument {p.name!r}"
                continue
            if not p.accepts(arguments[p.name]):
                return f"{self.name}(): argument {p.name!r} must be {p.type_name}"
        return None

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": [
                {"name": p.name, "type": p.type_name, "required": p.required, "description": p.description}
                for p in self.params
            ],
        }


@dataclass(frozen=True)
class ToolFaultConfig:
    faulted_tools: frozenset[str] = frozenset()
    mode: str = "empty_string"

    def __post_init__(self) -> None:
        object.__setattr__(self, "faulted_tools", frozenset(self.faulted_tools))
        if self.mode != "empty_string":
            raise ValueError(f"unsupported fault mode {self.mode!r}")


NO_FAULTS = ToolFaultConfig()

# named tool-reliability conditions used by the harness
FAULT_CONDITIONS: dict[str, frozenset[str]] = {
    "none": frozenset(),
    "get_logs": frozenset({"get_logs"}),
    "read_metrics": frozenset({"read_metrics"}),
    "both": frozenset({"get_logs", "read_metrics"}),
    "read_traces": frozenset({"read_traces"}),
}


def fault_condition(name: str) -> ToolFaultConfig:
    try:
        return ToolFaultConfig(FAULT_CONDITIONS[name])
    except KeyError:
        raise ValueError(f"unknown fault condition {name!r}; choose from {sorted(FAULT_CONDITIONS)}") from None


class ToolRegistry:
    def __init__(self, tools: Iterable[ToolDescriptor] = ()):
        self._tools: dict[str, ToolDescriptor] = {}
        self.faults = NO_FAULTS
        for tool in tools:
            self.register(tool)

    def register(self, descriptor: ToolDescriptor) -> None:
        if descriptor.name in self._tools:
            raise DuplicateName(f"tool {descriptor.name!r} already registered")
        self._tools[descriptor.name] = descriptor

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def __getitem__(self, name: str) -> ToolDescriptor:
        return self._tools[name]

    def list_tools(self) -> list[str]:
        return list(self._tools)

    def apply_fault(self, config: ToolFaultConfig) -> None:
        unknown = sorted(set(config.faulted_tools) - set(self._tools))
        if unknown:
            raise UnknownTool(f"cannot fault unregistered tool(s): {', '.join(unknown)}")
        self.faults = config

    def manifest(self) -> dict:
        return {"tools": [t.manifest() for t in self._tools.values()]}

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2)

    def invoke(self, call: ToolCall, env: Environment, faults: ToolFaultConfig | None = None) -> ToolOutcome:
        faults = self.faults if faults is None else faults
        tool = self._tools.get(call.tool_name)
        if tool is None:
            return ToolOutcome.interface_error(
                f"unknown tool {call.tool_name!r}; available: {', '.join(self._tools)}"
            )
        problem = tool.validate(call.arguments)
        if problem:
            return ToolOutcome.interface_error(problem)
        try:
            output = env.observe(tool.bind(call.arguments))
        except EnvError as exc:
            return ToolOutcome.interface_error(f"{call.tool_name}: {exc}")
        if call.tool_name in faults.faulted_tools:
            return ToolOutcome.success("")
        return ToolOutcome.success(output)


def register(registry: ToolRegistry, descriptor: ToolDescriptor) -> ToolRegistry:
    registry.register(descriptor)
    return registry


def invoke(registry: ToolRegistry, call: ToolCall, env: Environment, faults: ToolFaultConfig | None = None) -> ToolOutcome:
    return registry.invoke(call, env, faults)


def apply_fault(registry: ToolRegistry, config: ToolFaultConfig) -> ToolRegistry:
    registry.apply_fault(config)
    return registry


_SERVICE = ParamSpec("service", (str,), description="resource or service name")


def default_tools() -> list[ToolDescriptor]:
    return [
        ToolDescriptor(
            "get_logs",
            (_SERVICE, ParamSpec("lines", (int,), required=False, description="only the last N lines")),
            "Fetch recent log lines of a service.",
            Surface.LOGS,
            lambda a: ObservationRequest(Surface.LOGS, a["service"], params={"lines": a.get("lines")}),
        ),
        ToolDescriptor(
            "read_metrics",
            (_SERVICE, ParamSpec("metric", (str,), required=False, description="one metric name")),
            "Read the metric series of a service (up, latency_ms, request_rate, cpu_pct).",
            Surface.METRICS,
            lambda a: ObservationRequest(Surface.METRICS, a["service"], params={"metric": a.get("metric")}),
        ),
        ToolDescriptor(
            "read_traces",
            (_SERVICE,),
            "Read recent request spans recorded for a service.",
            Surface.TRACES,
            lambda a: ObservationRequest(Surface.TRACES, a["service"]),
        ),
        ToolDescriptor(
            "exec",
            (
                ParamSpec("target", (str,), description="resource to run the command on"),
                ParamSpec(
                    "command",
                    (str,),
                    description="one of: hostname, ip addr, ps, stats, cat /var/log/<name>.log, cat /etc/riva/attributes",
                ),
            ),
            "Run a whitelisted shell command directly on a resource.",
            Surface.EXEC,
            lambda a: ObservationRequest(Surface.EXEC, a["target"], command=a["command"]),
        ),
        ToolDescriptor(
            "ping_node",
            (ParamSpec("id", (str, int), description="logical node id"),),
            "Ping a node through the node-id to IP mapping.",
            Surface.PING,
            lambda a: ObservationRequest(Surface.PING, str(a["id"]), command="icmp"),
        ),
        ToolDescriptor(
            "send_message",
            (
                ParamSpec("id", (str, int), description="logical node id"),
                ParamSpec("message", (str,), required=False, description="payload text"),
            ),
            "Send a message to a node through the node-id to IP mapping and wait for its acknowledgement.",
            Surface.PING,
            lambda a: ObservationRequest(
                Surface.PING, str(a["id"]), command="message", params={"message": a.get("message", "ping")}
            ),
        ),
    ]


def default_registry() -> ToolRegistry:
    return ToolRegistry(default_tools())
