"""Chat backends: a deterministic scripted one and an HTTP chat-completions client."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence, Union

import httpx

log = logging.getLogger(__name__)


class BackendError(Exception):
    pass


class BackendUnavailable(BackendError):
    pass


class MalformedProviderResponse(BackendError):
    pass


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        if self.content is None:
            raise ValueError("message content must not be None")

    def to_json(self) -> dict:
        return {"role": self.role.value, "content": self.content}


def system(content: str) -> ChatMessage:
    return ChatMessage(Role.SYSTEM, content)


def user(content: str) -> ChatMessage:
    return ChatMessage(Role.USER, content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage(Role.ASSISTANT, content)


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    estimated: bool = False

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.estimated or other.estimated,
        )

    def to_json(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "estimated": self.estimated,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> TokenUsage:
        return cls(data["prompt_tokens"], data["completion_tokens"], data.get("estimated", False))


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def estimate_usage(messages: Sequence[ChatMessage], reply: str) -> TokenUsage:
    prompt = sum(estimate_tokens(m.content) for m in messages)
    return TokenUsage(prompt, estimate_tokens(reply), estimated=True)


class ChatBackend(Protocol):
    name: str
    temperature: float

    def chat(self, messages: Sequence[ChatMessage]) -> tuple[str, TokenUsage]: ...


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("chat needs at least one message")
    if messages[0].role is not Role.SYSTEM:
        raise ValueError("the first message must be the system prompt")


# --------------------------------------------------------------------------
# scripted backend

Responder = Union[str, Callable[[Sequence[ChatMessage]], str]]


@dataclass(frozen=True)
class Rule:
    """Reply with ``response`` when ``pattern`` matches the selected message.

    ``on`` selects the message the pattern runs against: ``latest`` (the last
    message), ``system`` (the system prompt) or ``all`` (every message joined).
    """

    pattern: str
    response: Responder
    on: str = "latest"

    def matches(self, messages: Sequence[ChatMessage]) -> bool:
        if self.on == "latest":
            text = messages[-1].content
        elif self.on == "system":
            text = messages[0].content
        elif self.on == "all":
            text = "\n".join(m.content for m in messages)
        else:
            raise ValueError(f"bad rule target {self.on!r}")
        return re.search(self.pattern, text, re.S) is not None


@dataclass
class ScriptedBackend:
    rules: list[Rule] = field(default_factory=list)
    default: Responder = ""
    name: str = "scripted"
    temperature: float = 0.0

    def reply(self, messages: Sequence[ChatMessage]) -> str:
        for rule in self.rules:
            if rule.matches(messages):
                return _respond(rule.response, messages)
        return _respond(self.default, messages)

    def chat(self, messages: Sequence[ChatMessage]) -> tuple[str, TokenUsage]:
        _check_messages(messages)
        text = self.reply(messages)
        return text, estimate_usage(messages, text)


def _respond(responder: Responder, messages: Sequence[ChatMessage]) -> str:
    return responder(messages) if callable(responder) else responder


def load_script(path, policies: Mapping[str, Responder] | None = None) -> ScriptedBackend:
    """Load a JSON script file.

    Format: ``{"include": "other.script.json", "rules": [{"match": regex,
    "on": "latest", "reply": text} | {"match": regex, "policy": name}],
    "default": text | {"policy": name}}``. Rules from an included script
    are tried after the including file's own rules.
    """
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    policies = policies or {}

    def responder(item) -> Responder:
        if isinstance(item, str):
            return item
        if "reply" in item:
            return item["reply"]
        try:
            return policies[item["policy"]]
        except KeyError:
            raise ValueError(f"{path}: unknown policy {item.get('policy')!r}") from None

    rules = [Rule(r["match"], responder(r), r.get("on", "latest")) for r in data.get("rules", [])]
    default: Responder = responder(data["default"]) if "default" in data else ""
    if data.get("include"):
        base = load_script(path.parent / data["include"], policies)
        rules += base.rules
        if "default" not in data:
            default = base.default
    return ScriptedBackend(rules, default, name=f"scripted:{path.name}")


# --------------------------------------------------------------------------
# HTTP chat-completions backend


@dataclass
class HttpChatBackend:
    base_url: str
    model: str
    temperature: float = 0.0
    api_key_env: str | None = "OPENAI_API_KEY"
    max_retries: int = 3
    backoff: float = 1.0
    timeout: float = 120.0
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep

    @property
    def name(self) -> str:
        return f"http:{self.model}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "") if self.api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, messages: Sequence[ChatMessage]) -> tuple[str, TokenUsage]:
        _check_messages(messages)
        payload = {
            "model": self.model,
            "messages": [m.to_json() for m in messages],
            "temperature": self.temperature,
        }
        url = self.base_url.rstrip("/") + "/chat/completions"
        last_error = "no attempt made"
        with httpx.Client(transport=self.transport, timeout=self.timeout) as client:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = client.post(url, json=payload, headers=self._headers())
                except httpx.TransportError as exc:
                    last_error = f"transport error: {exc}"
                    log.warning("chat attempt %d failed: %s", attempt + 1, last_error)
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                    log.warning("chat attempt %d failed: %s", attempt + 1, last_error)
                    continue
                if resp.status_code >= 400:
                    raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return self._parse(resp, messages)
        raise BackendUnavailable(f"gave up after {self.max_retries + 1} attempts ({last_error})")

    def _parse(self, resp: httpx.Response, messages: Sequence[ChatMessage]) -> tuple[str, TokenUsage]:
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedProviderResponse(f"unexpected response body: {exc!r}") from None
        if content is None:
            content = ""
        if not isinstance(content, str):
            raise MalformedProviderResponse("message content is not a string")
        usage = data.get("usage") or {}
        try:
            prompt = int(usage["prompt_tokens"])
            completion = int(usage["completion_tokens"])
        except (KeyError, TypeError, ValueError):
            return content, estimate_usage(messages, content)
        return content, TokenUsage(prompt, completion)


def parse_backend_url(spec: str) -> tuple[str, str | None]:
    """Split ``scripted[:path]`` / ``http(s)://...`` into (kind, location)."""
    if spec == "scripted":
        return "scripted", None
    if spec.startswith("scripted:"):
        return "scripted", spec[len("scripted:") :]
    if spec.startswith(("http://", "https://")):
        return "http", spec
    raise ValueError(f"backend must be 'scripted', 'scripted:<script>' or an http(s) URL, got {spec!r}")


# --------------------------------------------------------------------------
# accounting


def cumulative_usage(steps: Iterable) -> tuple[TokenUsage, int]:
    """Total usage over ``steps`` and the largest prompt seen by any one step.

    Accepts a trajectory or any iterable of objects with a ``token_usage``
    attribute (``None`` for steps that made no backend call).
    """
    steps = getattr(steps, "steps", steps)
    total = TokenUsage()
    max_context = 0
    for step in steps:
        usage = step.token_usage
        if usage is None:
            continue
        total = total + usage
        max_context = max(max_context, usage.prompt_tokens)
    return total, max_context
