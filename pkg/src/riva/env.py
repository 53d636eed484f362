"""Deterministic simulated infrastructure with injectable configuration drift.

An :class:`Environment` is deployed from a :class:`~riva.spec.Specification`
and answers observations on five surfaces (logs, metrics, traces, exec,
ping). All telemetry is generated from the seed; the logical clock only
stamps observations, so predicates never depend on when one looks.
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Any, Mapping

from riva.spec import PredicateKind, Property, Specification, format_value, load_spec

BASELINES = {"up": 1.0, "latency_ms": 50.0, "request_rate": 100.0, "cpu_pct": 30.0}
SAMPLES = 8
NOISE = 0.10
BURST_LINES = 3
REQUEST_OPS = ("GET /api/items", "GET /health", "POST /api/orders", "GET /api/cart")
ATTRIBUTES_PATH = "/etc/riva/attributes"


class Surface(str, enum.Enum):
    LOGS = "logs"
    METRICS = "metrics"
    TRACES = "traces"
    EXEC = "exec"
    PING = "ping"


ALL_SURFACES = frozenset(Surface)


class EnvError(Exception):
    pass


class UnknownTarget(EnvError):
    pass


class UnsupportedCommand(EnvError):
    pass


class SurfaceUnavailable(EnvError):
    def __init__(self, surface: Surface):
        super().__init__(f"the {surface.value} surface is not available in this environment")
        self.surface = surface


class Phase(str, enum.Enum):
    PROVISIONING = "provisioning"
    POST_DEPLOYMENT = "post_deployment"


# --------------------------------------------------------------------------
# drift faults


@dataclass(frozen=True)
class DriftFault:
    phase: Phase = field(default=Phase.POST_DEPLOYMENT, kw_only=True)

    kind = "DriftFault"

    @property
    def component(self) -> str:
        raise NotImplementedError

    def to_json(self) -> dict:
        data = {k: v for k, v in self.__dict__.items() if k != "phase"}
        return {"kind": self.kind, **data, "phase": Phase(self.phase).value}


@dataclass(frozen=True)
class AttributeDrift(DriftFault):
    resource: str
    attr: str
    new_value: Any

    kind = "AttributeDrift"

    @property
    def component(self) -> str:
        return self.resource


@dataclass(frozen=True)
class ServiceDown(DriftFault):
    resource: str
    service: str

    kind = "ServiceDown"

    @property
    def component(self) -> str:
        return self.resource


@dataclass(frozen=True)
class StaleMapping(DriftFault):
    """The address of logical node ``logical_id`` now reaches node ``wrong_target``."""

    logical_id: str
    wrong_target: str

    kind = "StaleMapping"

    @property
    def component(self) -> str:
        # resolved against the declared mapping by the environment
        return self.logical_id


@dataclass(frozen=True)
class MetricAnomaly(DriftFault):
    resource: str
    metric: str
    multiplier: float

    kind = "MetricAnomaly"

    @property
    def component(self) -> str:
        return self.resource


@dataclass(frozen=True)
class LogErrorBurst(DriftFault):
    resource: str
    pattern: str

    kind = "LogErrorBurst"

    @property
    def component(self) -> str:
        return self.resource


FAULT_KINDS: dict[str, type[DriftFault]] = {
    cls.kind: cls for cls in (AttributeDrift, ServiceDown, StaleMapping, MetricAnomaly, LogErrorBurst)
}


def fault_from_json(data: Mapping[str, Any]) -> DriftFault:
    data = dict(data)
    try:
        cls = FAULT_KINDS[data.pop("kind")]
    except KeyError as exc:
        raise ValueError(f"unknown fault kind {exc.args[0]!r}") from None
    phase = Phase(data.pop("phase", Phase.POST_DEPLOYMENT))
    return cls(**data, phase=phase)


# --------------------------------------------------------------------------
# live state


@dataclass
class Span:
    trace_id: str
    op: str
    duration_ms: float
    status: str = "OK"
    error: str | None = None


@dataclass
class Resource:
    name: str
    attributes: dict[str, Any]
    services: list[str]
    processes: list[str]
    log_lines: list[str]
    metrics: dict[str, list[float]]
    traces: list[Span]


@dataclass(frozen=True)
class ObservationRequest:
    surface: Surface
    target: str
    command: str | None = None
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class GroundTruth:
    violated_properties: frozenset[str]
    faulty_component: str | None
    root_cause: str | None
    faulty_components: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "violated_properties": sorted(self.violated_properties),
            "faulty_component": self.faulty_component,
            "root_cause": self.root_cause,
            "faulty_components": list(self.faulty_components),
        }


def _rng(*parts: Any) -> random.Random:
    return random.Random("/".join(str(p) for p in parts))


def _hexid(*parts: Any, n: int = 8) -> str:
    return hashlib.sha256("/".join(str(p) for p in parts).encode()).hexdigest()[:n]


def _render_config(attributes: Mapping[str, Any]) -> str:
    return " ".join(f"{k}={format_value(v)}" for k, v in sorted(attributes.items()))


def scalar_equal(a: Any, b: Any) -> bool:
    """Equality that keeps ``True`` distinct from ``1``."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return a == b
    return type(a) is type(b) and a == b


class Environment:
    def __init__(self, spec: Specification, seed: int, surfaces=ALL_SURFACES):
        self.spec = spec
        self.seed = int(seed)
        self.surfaces = frozenset(Surface(s) for s in surfaces)
        self.clock = 0
        self.injected: list[DriftFault] = []
        self.resources: dict[str, Resource] = {}
        # live routing table: address -> resource name
        self.addresses: dict[str, str] = {}
        for decl in spec.resources:
            self.resources[decl.name] = self._provision(decl.name, dict(decl.attributes))
            ip = decl.attributes.get("ip")
            if isinstance(ip, str):
                self.addresses[ip] = decl.name

    def _provision(self, name: str, attributes: dict[str, Any]) -> Resource:
        process = attributes.get("process", name)
        metrics = {}
        for metric, base in BASELINES.items():
            if metric == "up":
                metrics[metric] = [1.0] * SAMPLES
                continue
            rng = _rng(self.seed, name, metric)
            metrics[metric] = [round(base * (1 + rng.uniform(-NOISE, NOISE)), 2) for _ in range(SAMPLES)]
        rng = _rng(self.seed, name, "ops")
        spans = [
            Span(_hexid(self.seed, name, "span", i), rng.choice(REQUEST_OPS), d)
            for i, d in enumerate(metrics["latency_ms"])
        ]
        lines = [f"INFO {name}: started process={process} config {_render_config(attributes)}"]
        lines += [f"INFO {name}: {s.op} 200 {s.duration_ms:.0f}ms" for s in spans[:6]]
        return Resource(name, attributes, [process], [process], lines, metrics, spans)

    # -- lookup helpers

    def _resource(self, name: str) -> Resource:
        try:
            return self.resources[name]
        except KeyError:
            raise UnknownTarget(f"no resource named {name!r}") from None

    def node_by_logical_id(self, logical_id: Any) -> str:
        """Name of the declared resource whose ``node_id`` is ``logical_id``."""
        for decl in self.spec.resources:
            if str(decl.attributes.get("node_id")) == str(logical_id) and "node_id" in decl.attributes:
                return decl.name
        raise UnknownTarget(f"no node with id {logical_id!r}")

    def declared_address(self, name: str) -> str | None:
        ip = self.spec.resource(name).attributes.get("ip")
        return ip if isinstance(ip, str) else None

    def _fresh_address(self, base: str) -> str:
        prefix, _, last = base.rpartition(".")
        octet = 100 + (int(last) if last.isdigit() else 0) % 100
        while f"{prefix}.{octet}" in self.addresses:
            octet += 1
        return f"{prefix}.{octet}"

    # -- drift

    def inject_drift(self, fault: DriftFault) -> None:
        if isinstance(fault, AttributeDrift):
            res = self._resource(fault.resource)
            self._set_attribute(res, fault.attr, fault.new_value, Phase(fault.phase))
        elif isinstance(fault, ServiceDown):
            res = self._resource(fault.resource)
            if fault.service not in res.services:
                raise UnknownTarget(f"{fault.resource} runs no service {fault.service!r}")
            if fault.service in res.processes:
                res.processes.remove(fault.service)
            res.log_lines += [
                f"ERROR {res.name}: process {fault.service} exited with code 137 (OOMKilled)",
                f"WARN {res.name}: back-off restarting failed process {fault.service}",
            ]
            res.metrics["up"] = [0.0] * SAMPLES
            res.metrics["request_rate"] = [0.0] * SAMPLES
            res.metrics["latency_ms"] = []
            res.metrics["cpu_pct"] = [round(v * 0.05, 2) for v in res.metrics["cpu_pct"]]
            res.traces = []
        elif isinstance(fault, StaleMapping):
            node = self._resource(self.node_by_logical_id(fault.logical_id))
            other = self._resource(self.node_by_logical_id(fault.wrong_target))
            old = self.declared_address(node.name)
            if old is None:
                raise UnknownTarget(f"{node.name} declares no ip")
            new = self._fresh_address(old)
            self._set_attribute(node, "ip", new, Phase(fault.phase))
            self.addresses[old] = other.name
        elif isinstance(fault, MetricAnomaly):
            res = self._resource(fault.resource)
            if fault.metric not in res.metrics:
                raise UnknownTarget(f"{fault.resource} has no metric {fault.metric!r}")
            res.metrics[fault.metric] = [round(v * fault.multiplier, 2) for v in res.metrics[fault.metric]]
            if fault.metric == "latency_ms":
                for span, d in zip(res.traces, res.metrics["latency_ms"]):
                    span.duration_ms = d
        elif isinstance(fault, LogErrorBurst):
            res = self._resource(fault.resource)
            res.log_lines += [f"ERROR {res.name}: {fault.pattern}"] * BURST_LINES
            for span in res.traces[-BURST_LINES:]:
                span.status = "ERROR"
                span.error = fault.pattern
        else:
            raise TypeError(f"not a drift fault: {fault!r}")
        self.injected.append(fault)

    def _set_attribute(self, res: Resource, attr: str, value: Any, phase: Phase) -> None:
        old = res.attributes.get(attr)
        res.attributes[attr] = value
        if attr == "ip":
            if isinstance(old, str) and self.addresses.get(old) == res.name:
                del self.addresses[old]
            if isinstance(value, str):
                self.addresses[value] = res.name
        if phase is Phase.PROVISIONING:
            # created that way: the startup line already shows the drifted value
            res.log_lines[0] = re.sub(r"config .*$", "config " + _render_config(res.attributes), res.log_lines[0])
        else:
            res.log_lines.append(f"INFO {res.name}: config changed {attr}={format_value(value)}")

    def fault_component(self, fault: DriftFault) -> str:
        if isinstance(fault, StaleMapping):
            return self.node_by_logical_id(fault.logical_id)
        return fault.component

    # -- predicates

    def holds(self, prop: Property) -> bool:
        """Evaluate ``prop`` directly against live state."""
        res = self._resource(prop.subject)
        pred = prop.predicate
        if pred.kind is PredicateKind.REACHABLE:
            ip = self.declared_address(res.name)
            return ip is not None and self.addresses.get(ip) == res.name
        if pred.kind is PredicateKind.SERVICE_RUNNING:
            return all(s in res.processes for s in res.services)
        if pred.kind is PredicateKind.ATTRIBUTE_EQUALS:
            name, expected = pred.args
            return name in res.attributes and scalar_equal(res.attributes[name], expected)
        if pred.kind is PredicateKind.LOGS_CLEAN:
            return not any(re.search(pred.args[0], line) for line in res.log_lines)
        name, lo, hi = pred.args
        series = res.metrics.get(name, [])
        return bool(series) and lo <= fmean(series) <= hi

    def ground_truth(self) -> GroundTruth:
        violated = frozenset(p.id for p in self.spec.properties if not self.holds(p))
        components = tuple(dict.fromkeys(self.fault_component(f) for f in self.injected))
        first = self.injected[0] if self.injected else None
        return GroundTruth(
            violated,
            components[0] if components else None,
            first.kind if first else None,
            components,
        )

    # -- observation

    def observe(self, request: ObservationRequest) -> str:
        surface = Surface(request.surface)
        if surface not in self.surfaces:
            raise SurfaceUnavailable(surface)
        handler = {
            Surface.LOGS: self._observe_logs,
            Surface.METRICS: self._observe_metrics,
            Surface.TRACES: self._observe_traces,
            Surface.EXEC: self._observe_exec,
            Surface.PING: self._observe_ping,
        }[surface]
        out = handler(request)
        self.clock += 1
        return out

    def _stamp(self) -> str:
        return f"t={self.clock:05d}"

    def _render_logs(self, res: Resource, lines: int | None = None) -> str:
        body = res.log_lines if not lines else res.log_lines[-lines:]
        return "\n".join(f"[{self._stamp()}.{i:02d}] {line}" for i, line in enumerate(body))

    def _observe_logs(self, req: ObservationRequest) -> str:
        res = self._resource(req.target)
        lines = req.params.get("lines")
        if lines is not None and lines < 1:
            raise UnsupportedCommand("lines must be positive")
        return self._render_logs(res, lines)

    def _observe_metrics(self, req: ObservationRequest) -> str:
        res = self._resource(req.target)
        metric = req.params.get("metric")
        if metric is not None and metric not in res.metrics:
            raise UnknownTarget(f"{res.name} exports no metric {metric!r}")
        names = [metric] if metric else list(res.metrics)
        out = [f"# metrics {res.name} @{self._stamp()} window={SAMPLES}"]
        for name in names:
            series = res.metrics[name]
            if series:
                out.append(f"{name} " + " ".join(f"{v:.2f}" for v in series))
            else:
                out.append(f"{name} (no samples)")
        return "\n".join(out)

    def _observe_traces(self, req: ObservationRequest) -> str:
        res = self._resource(req.target)
        out = [f"# traces {res.name} @{self._stamp()}: {len(res.traces)} spans"]
        if not res.traces:
            out.append("(no spans recorded in window)")
        for span in res.traces:
            line = f"span {span.trace_id} op={span.op} duration_ms={span.duration_ms:.2f} status={span.status}"
            if span.error:
                line += f" error={json.dumps(span.error)}"
            out.append(line)
        return "\n".join(out)

    def _observe_exec(self, req: ObservationRequest) -> str:
        res = self._resource(req.target)
        command = " ".join((req.command or "").split())
        if command == "hostname":
            return res.name
        if command == "ip addr":
            out = ["1: lo: inet 127.0.0.1/8"]
            ip = res.attributes.get("ip")
            if isinstance(ip, str):
                out.append(f"2: eth0: inet {ip}/24")
            return "\n".join(out)
        if command == "ps":
            out = ["PID   CMD", "1     init"]
            for proc in res.processes:
                out.append(f"{int(_hexid(self.seed, res.name, proc, n=4), 16) % 30000 + 100:<5} {proc}")
            return "\n".join(out)
        if command == f"cat /var/log/{res.name}.log":
            return self._render_logs(res)
        if command == f"cat {ATTRIBUTES_PATH}":
            return "\n".join(f"{k} = {format_value(v)}" for k, v in sorted(res.attributes.items()))
        if command == "stats":
            out = []
            for name, series in res.metrics.items():
                out.append(f"{name}={fmean(series):.2f}" if series else f"{name}=n/a")
            return "\n".join(out)
        if command.startswith("cat "):
            raise UnknownTarget(f"cat: {command[4:]}: No such file or directory")
        raise UnsupportedCommand(f"command {command!r} is not allowed")

    def _observe_ping(self, req: ObservationRequest) -> str:
        node = self.node_by_logical_id(req.target)
        ip = self.declared_address(node)
        if ip is None:
            raise UnknownTarget(f"node {req.target!r} has no address in the mapping")
        device = self.addresses.get(ip)
        if req.command == "message":
            text = req.params.get("message", "ping")
            head = f"sent {text!r} to node {req.target} ({ip})"
            if device is None:
                return head + "\nno ack (timeout)"
            return head + f"\nack from {device} ({ip})"
        if device is None:
            return (
                f"PING {ip}: Destination Host Unreachable\n"
                "1 packets transmitted, 0 received, 100% packet loss"
            )
        rtt = 0.2 + _rng(self.seed, "rtt", ip).random()
        return (
            f"PING {ip}: 64 bytes from {ip}: icmp_seq=1 ttl=64 time={rtt:.2f} ms\n"
            "1 packets transmitted, 1 received, 0% packet loss"
        )


def deploy(spec: Specification, seed: int, surfaces=ALL_SURFACES) -> Environment:
    return Environment(spec, seed, surfaces)


def inject_drift(env: Environment, fault: DriftFault) -> Environment:
    env.inject_drift(fault)
    return env


def observe(env: Environment, request: ObservationRequest) -> str:
    return env.observe(request)


def ground_truth(env: Environment) -> GroundTruth:
    return env.ground_truth()


# --------------------------------------------------------------------------
# scenario files


@dataclass
class Scenario:
    name: str
    spec: Specification
    seed: int
    faults: list[DriftFault]
    surfaces: frozenset[Surface]
    surfaces_per_property: int
    task_type: str
    aliases: dict[str, list[str]] = field(default_factory=dict)
    ground_truth_overrides: dict[str, Any] = field(default_factory=dict)
    script: Path | None = None
    description: str = ""
    path: Path | None = None

    def build(self, seed: int | None = None) -> Environment:
        env = deploy(self.spec, self.seed if seed is None else seed, self.surfaces)
        for fault in self.faults:
            env.inject_drift(fault)
        return env

    def ground_truth(self, env: Environment | None = None) -> GroundTruth:
        truth = (env or self.build()).ground_truth()
        if self.ground_truth_overrides:
            data = truth.to_json()
            data.update(self.ground_truth_overrides)
            truth = GroundTruth(
                frozenset(data["violated_properties"]),
                data["faulty_component"],
                data["root_cause"],
                tuple(data["faulty_components"]),
            )
        return truth


def load_scenario(path) -> Scenario:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    spec = load_spec(base / data["spec_path"])
    script = base / data["script"] if data.get("script") else None
    return Scenario(
        name=data.get("name", path.stem),
        spec=spec,
        seed=int(data.get("seed", 0)),
        faults=[fault_from_json(f) for f in data.get("faults", [])],
        surfaces=frozenset(Surface(s) for s in data.get("surfaces", [s.value for s in Surface])),
        surfaces_per_property=int(data["surfaces_per_property"]),
        task_type=data.get("task_type", "detection"),
        aliases=dict(data.get("aliases", {})),
        ground_truth_overrides=dict(data.get("ground_truth_overrides", {})),
        script=script,
        description=data.get("description", ""),
        path=path,
    )
