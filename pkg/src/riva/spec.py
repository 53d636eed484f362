"""Infrastructure specification documents: resources, properties, verdicts.

The on-disk format is line oriented::

    specification ping-node
    meta source = "router remap"

    resource node1 {
      node_id = "1"
      ip = "172.17.0.6"
    }

    property node1-reach: reachable on node1 -- node 1 answers at its address
    property: logs_clean("ERROR") on web

A property without an explicit id gets ``L<line number>``. Values are JSON
scalars (strings in double quotes, numbers, ``true``/``false``/``null``).
``#`` starts a comment outside of quoted strings.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

Scalar = Any  # str | int | float | bool | None

_IDENT = r"[A-Za-z_][A-Za-z0-9_.\-]*"
_PROP_ID = r"[A-Za-z0-9_.\-]+"


class SpecError(ValueError):
    """Base class for specification errors."""


class SpecSyntaxError(SpecError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicatePropertyId(SpecError):
    def __init__(self, property_id: str):
        super().__init__(f"duplicate property id {property_id!r}")
        self.property_id = property_id


class UnknownSubject(SpecError):
    def __init__(self, name: str):
        super().__init__(f"property subject {name!r} is not a declared resource")
        self.name = name


class PredicateKind(str, enum.Enum):
    REACHABLE = "reachable"
    SERVICE_RUNNING = "service_running"
    ATTRIBUTE_EQUALS = "attribute_equals"
    LOGS_CLEAN = "logs_clean"
    METRIC_IN_RANGE = "metric_in_range"


_ARITY = {
    PredicateKind.REACHABLE: 0,
    PredicateKind.SERVICE_RUNNING: 0,
    PredicateKind.ATTRIBUTE_EQUALS: 2,
    PredicateKind.LOGS_CLEAN: 1,
    PredicateKind.METRIC_IN_RANGE: 3,
}


def _is_scalar(value: Any) -> bool:
    return value is None or isinstance(value, (str, int, float, bool))


@dataclass(frozen=True)
class Predicate:
    kind: PredicateKind
    args: tuple = ()

    def __post_init__(self) -> None:
        kind = PredicateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) != _ARITY[kind]:
            raise SpecError(f"{kind.value} takes {_ARITY[kind]} argument(s), got {len(self.args)}")
        if kind is PredicateKind.ATTRIBUTE_EQUALS:
            name, expected = self.args
            if not isinstance(name, str):
                raise SpecError("attribute_equals: attribute name must be a string")
            if not _is_scalar(expected):
                raise SpecError("attribute_equals: expected value must be a scalar")
        elif kind is PredicateKind.LOGS_CLEAN:
            if not isinstance(self.args[0], str):
                raise SpecError("logs_clean: pattern must be a string")
            try:
                re.compile(self.args[0])
            except re.error as exc:
                raise SpecError(f"logs_clean: bad pattern: {exc}") from None
        elif kind is PredicateKind.METRIC_IN_RANGE:
            name, lo, hi = self.args
            if not isinstance(name, str):
                raise SpecError("metric_in_range: metric name must be a string")
            for bound in (lo, hi):
                if isinstance(bound, bool) or not isinstance(bound, (int, float)):
                    raise SpecError("metric_in_range: bounds must be numbers")
            if lo > hi:
                raise SpecError(f"metric_in_range: lo {lo} > hi {hi}")

    @classmethod
    def reachable(cls) -> Predicate:
        return cls(PredicateKind.REACHABLE)

    @classmethod
    def service_running(cls) -> Predicate:
        return cls(PredicateKind.SERVICE_RUNNING)

    @classmethod
    def attribute_equals(cls, name: str, expected: Scalar) -> Predicate:
        return cls(PredicateKind.ATTRIBUTE_EQUALS, (name, expected))

    @classmethod
    def logs_clean(cls, pattern: str) -> Predicate:
        return cls(PredicateKind.LOGS_CLEAN, (pattern,))

    @classmethod
    def metric_in_range(cls, name: str, lo: float, hi: float) -> Predicate:
        return cls(PredicateKind.METRIC_IN_RANGE, (name, lo, hi))

    def render(self) -> str:
        if not self.args:
            return self.kind.value
        return f"{self.kind.value}({', '.join(format_value(a) for a in self.args)})"

    def describe(self, subject: str) -> str:
        k = self.kind
        if k is PredicateKind.REACHABLE:
            return f"{subject} is reachable at its declared address"
        if k is PredicateKind.SERVICE_RUNNING:
            return f"{subject} has its service process running"
        if k is PredicateKind.ATTRIBUTE_EQUALS:
            return f"{subject}.{self.args[0]} equals {format_value(self.args[1])}"
        if k is PredicateKind.LOGS_CLEAN:
            return f"{subject} logs contain no line matching {self.args[0]!r}"
        name, lo, hi = self.args
        return f"{subject} metric {name} stays within [{lo}, {hi}]"


@dataclass(frozen=True)
class Property:
    id: str
    subject: str
    predicate: Predicate
    description: str = ""

    def __post_init__(self) -> None:
        if not self.description:
            object.__setattr__(self, "description", self.predicate.describe(self.subject))


@dataclass(frozen=True)
class ResourceDecl:
    name: str
    attributes: Mapping[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class Specification:
    id: str
    resources: tuple[ResourceDecl, ...]
    properties: tuple[Property, ...]
    metadata: Mapping[str, Scalar] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "resources", tuple(self.resources))
        object.__setattr__(self, "properties", tuple(self.properties))
        if not self.properties:
            raise SpecError("a specification needs at least one property")
        names = set()
        for res in self.resources:
            if res.name in names:
                raise SpecError(f"duplicate resource {res.name!r}")
            names.add(res.name)
        seen = set()
        for prop in self.properties:
            if prop.id in seen:
                raise DuplicatePropertyId(prop.id)
            seen.add(prop.id)
            if prop.subject not in names:
                raise UnknownSubject(prop.subject)

    @property
    def property_ids(self) -> list[str]:
        return [p.id for p in self.properties]

    def resource(self, name: str) -> ResourceDecl:
        for res in self.resources:
            if res.name == name:
                return res
        raise KeyError(name)

    def property(self, property_id: str) -> Property:
        for prop in self.properties:
            if prop.id == property_id:
                return prop
        raise KeyError(property_id)


class VerdictValue(str, enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Verdict:
    """A conclusion about one property.

    ``evidence`` holds indices into the goal's records in the tool history.
    Satisfied and Violated verdicts must cite exactly ``k`` records.
    """

    value: VerdictValue
    rationale: str = ""
    evidence: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", VerdictValue(self.value))
        object.__setattr__(self, "evidence", tuple(self.evidence))

    @property
    def conclusive(self) -> bool:
        return self.value is not VerdictValue.INCONCLUSIVE

    def check(self, k: int) -> None:
        if self.conclusive and sorted(self.evidence) != list(range(k)):
            raise SpecError(
                f"a {self.value.value} verdict must cite exactly the {k} records, got {list(self.evidence)}"
            )

    def to_json(self) -> dict:
        return {"value": self.value.value, "rationale": self.rationale, "evidence": list(self.evidence)}


# --------------------------------------------------------------------------
# text format


def format_value(value: Scalar) -> str:
    return json.dumps(value)


def _strip_comment(line: str) -> str:
    in_str = False
    escaped = False
    for i, ch in enumerate(line):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return line[:i]
    return line


def _parse_value(token: str, lineno: int) -> Scalar:
    try:
        value = json.loads(token)
    except json.JSONDecodeError:
        raise SpecSyntaxError(lineno, f"bad value {token!r}") from None
    if not _is_scalar(value):
        raise SpecSyntaxError(lineno, f"value {token!r} is not a scalar")
    return value


_ARG_TOKEN = re.compile(r'\s*("(?:[^"\\]|\\.)*"|[^,\s()"]+)\s*')


def _parse_args(text: str, lineno: int) -> list[Scalar]:
    args: list[Scalar] = []
    if not text.strip():
        return args
    pos = 0
    while True:
        m = _ARG_TOKEN.match(text, pos)
        if not m:
            raise SpecSyntaxError(lineno, f"cannot parse predicate arguments {text!r}")
        args.append(_parse_value(m.group(1), lineno))
        pos = m.end()
        if pos == len(text):
            return args
        if text[pos] != ",":
            raise SpecSyntaxError(lineno, f"expected ',' in predicate arguments {text!r}")
        pos += 1


def _split_predicate(rest: str, lineno: int) -> tuple[str, str]:
    """Split ``name(args) on subject ...`` at the closing parenthesis."""
    m = re.match(r"\s*([a-z_]+)", rest)
    if not m:
        raise SpecSyntaxError(lineno, "expected a predicate name")
    pos = m.end()
    if pos < len(rest) and rest[pos] == "(":
        in_str = escaped = False
        for i in range(pos + 1, len(rest)):
            ch = rest[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == ")":
                return rest[: i + 1], rest[i + 1 :]
        raise SpecSyntaxError(lineno, "unterminated predicate argument list")
    return rest[:pos], rest[pos:]


def _parse_predicate(text: str, lineno: int) -> Predicate:
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", text, re.S)
    if not m:
        raise SpecSyntaxError(lineno, f"bad predicate {text!r}")
    try:
        kind = PredicateKind(m.group(1))
    except ValueError:
        raise SpecSyntaxError(lineno, f"unknown predicate {m.group(1)!r}") from None
    args = _parse_args(m.group(2) or "", lineno)
    try:
        return Predicate(kind, tuple(args))
    except SpecError as exc:
        raise SpecSyntaxError(lineno, str(exc)) from None


_SPEC_RE = re.compile(rf"specification\s+({_IDENT})")
_META_RE = re.compile(rf"meta\s+({_IDENT})\s*=\s*(.+)")
_RES_OPEN_RE = re.compile(rf"resource\s+({_IDENT})\s*\{{\s*(\}})?")
_ATTR_RE = re.compile(rf"({_IDENT})\s*=\s*(.+)")
_PROP_HEAD_RE = re.compile(rf"property(?:\s+({_PROP_ID}))?\s*:(.*)")
_ON_RE = re.compile(rf"\s+on\s+({_IDENT})(?:\s+--\s*(.*))?\s*$")


def parse_spec(text: str, default_id: str = "spec") -> Specification:
    """Parse a specification document."""
    spec_id = default_id
    metadata: dict[str, Scalar] = {}
    resources: list[ResourceDecl] = []
    properties: list[Property] = []
    open_res: tuple[str, dict, int] | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if open_res is not None:
            if line == "}":
                resources.append(ResourceDecl(open_res[0], open_res[1]))
                open_res = None
                continue
            m = _ATTR_RE.fullmatch(line)
            if not m:
                raise SpecSyntaxError(lineno, f"expected 'name = value' or '}}', got {line!r}")
            if m.group(1) in open_res[1]:
                raise SpecSyntaxError(lineno, f"attribute {m.group(1)!r} set twice")
            open_res[1][m.group(1)] = _parse_value(m.group(2).strip(), lineno)
            continue
        if m := _SPEC_RE.fullmatch(line):
            spec_id = m.group(1)
        elif m := _META_RE.fullmatch(line):
            metadata[m.group(1)] = _parse_value(m.group(2).strip(), lineno)
        elif m := _RES_OPEN_RE.fullmatch(line):
            if m.group(2):
                resources.append(ResourceDecl(m.group(1), {}))
            else:
                open_res = (m.group(1), {}, lineno)
        elif m := _PROP_HEAD_RE.fullmatch(line):
            pid = m.group(1) or f"L{lineno}"
            pred_text, tail = _split_predicate(m.group(2), lineno)
            on = _ON_RE.fullmatch(tail)
            if not on:
                raise SpecSyntaxError(lineno, "expected 'on <subject>' after the predicate")
            if any(p.id == pid for p in properties):
                raise DuplicatePropertyId(pid)
            properties.append(
                Property(pid, on.group(1), _parse_predicate(pred_text, lineno), (on.group(2) or "").strip())
            )
        else:
            raise SpecSyntaxError(lineno, f"unrecognised statement {line!r}")

    if open_res is not None:
        raise SpecSyntaxError(open_res[2], f"resource {open_res[0]!r} is never closed")
    if not properties:
        raise SpecSyntaxError(max(1, len(text.splitlines())), "no properties declared")
    return Specification(spec_id, tuple(resources), tuple(properties), metadata)


def serialize_spec(spec: Specification) -> str:
    lines = [f"specification {spec.id}"]
    for key, value in spec.metadata.items():
        lines.append(f"meta {key} = {format_value(value)}")
    for res in spec.resources:
        lines.append("")
        if not res.attributes:
            lines.append(f"resource {res.name} {{}}")
            continue
        lines.append(f"resource {res.name} {{")
        for key, value in res.attributes.items():
            lines.append(f"  {key} = {format_value(value)}")
        lines.append("}")
    lines.append("")
    for prop in spec.properties:
        lines.append(f"property {prop.id}: {prop.predicate.render()} on {prop.subject} -- {prop.description}")
    return "\n".join(lines) + "\n"


def load_spec(path) -> Specification:
    from pathlib import Path

    path = Path(path)
    return parse_spec(path.read_text(encoding="utf-8"), default_id=path.stem)
