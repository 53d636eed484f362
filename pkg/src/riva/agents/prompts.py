"""Prompt templates and the machine-readable context blocks embedded in them."""

from __future__ import annotations

import hashlib
import json
import re
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Any

from riva.agents.protocol import TaskType
from riva.spec import Property, Specification, serialize_spec

TEMPLATE_NAMES = ("verifier", "toolgen", "react")
RESULT_PREVIEW = 800

TASK_INSTRUCTIONS = {
    TaskType.DETECTION: 'Decide whether any property is violated. Answer "yes" or "no".',
    TaskType.LOCALIZATION: "Name the faulty component by its resource name. If nothing is faulty answer \"none\".",
    TaskType.ANALYSIS: (
        'Name the faulty component and the kind of drift as "component=<name>; fault=<Kind>", where Kind is '
        "one of AttributeDrift, ServiceDown, StaleMapping, MetricAnomaly, LogErrorBurst."
    ),
}


@lru_cache(maxsize=None)
def template_text(name: str) -> str:
    return resources.files("riva.agents").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def prompt_hash() -> str:
    h = hashlib.sha256()
    for name in TEMPLATE_NAMES:
        h.update(name.encode())
        h.update(template_text(name).encode())
    return h.hexdigest()[:16]


def context_block(data: Any) -> str:
    return "```context\n" + json.dumps(data, sort_keys=True) + "\n```"


_CONTEXT = re.compile(r"```context\n(.*?)\n```", re.S)


def read_context(text: str) -> dict | None:
    found = _CONTEXT.findall(text)
    return json.loads(found[-1]) if found else None


def property_json(spec: Specification, prop: Property) -> dict:
    return {
        "id": prop.id,
        "subject": prop.subject,
        "predicate": prop.predicate.kind.value,
        "args": list(prop.predicate.args),
        "description": prop.description,
        "resource": dict(spec.resource(prop.subject).attributes),
    }


def preview(text: str, limit: int = RESULT_PREVIEW) -> str:
    return text if len(text) <= limit else text[:limit] + f"\n...[truncated {len(text) - limit} chars]"


def verifier_system(spec: Specification, task_type: TaskType, k: int) -> str:
    return Template(template_text("verifier")).substitute(
        k=k,
        task_type=task_type.value,
        task_instructions=TASK_INSTRUCTIONS[task_type],
        spec_text=serialize_spec(spec),
    )


def toolgen_system(manifest_json: str) -> str:
    return Template(template_text("toolgen")).substitute(manifest=manifest_json)


def react_system(spec: Specification, task_type: TaskType, manifest_json: str) -> str:
    text = Template(template_text("react")).substitute(
        task_type=task_type.value,
        task_instructions=TASK_INSTRUCTIONS[task_type],
        manifest=manifest_json,
        spec_text=serialize_spec(spec),
    )
    ctx = {"task_type": task_type.value, "properties": [property_json(spec, p) for p in spec.properties]}
    return text + "\n" + context_block(ctx)
