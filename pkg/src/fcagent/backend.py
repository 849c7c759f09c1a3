"""LLM backends: an OpenAI-compatible HTTP client and a scripted mock.

Both expose ``complete(request) -> LLMResponse`` and never raise for model or
transport failures; those come back as ``finish_reason == "error"``.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence, Union

import httpx

from .errors import ConfigError, ParameterError

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
FINISH_REASONS = ("stop", "length", "error")
SESSION_MAIN = "main"
SESSION_READER = "reader"
SESSION_CONSOLIDATION = "consolidation"


def estimate_size(text: str) -> int:
    """Size of ``text`` in budget units (characters)."""
    return len(text)


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class LLMRequest:
    messages: tuple[Message, ...]
    max_response: int = 2048
    session_tag: str = SESSION_MAIN

    def __post_init__(self):
        msgs = tuple(m if isinstance(m, Message) else Message(*m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise ParameterError("request needs at least one message")
        for m in msgs:
            if m.role not in ROLES:
                raise ParameterError(f"unknown role {m.role!r}")

    @property
    def latest_user(self) -> str:
        for m in reversed(self.messages):
            if m.role == "user":
                return m.content
        return ""

    def total_size(self, size_fn: Callable[[str], int] = estimate_size) -> int:
        return sum(size_fn(m.content) for m in self.messages)

    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class LLMResponse:
    content: str
    finish_reason: str = "stop"
    usage: dict = field(default_factory=dict)
    error: str = ""

    def __post_init__(self):
        if self.finish_reason not in FINISH_REASONS:
            raise ParameterError(f"unknown finish_reason {self.finish_reason!r}")
        if (self.finish_reason == "error") != (self.content == ""):
            raise ParameterError("finish_reason 'error' iff content is empty")

    @property
    def ok(self) -> bool:
        return self.finish_reason != "error"

    @classmethod
    def failure(cls, reason: str, usage: dict | None = None) -> LLMResponse:
        return cls("", "error", usage or {}, reason)


class LLMBackend(Protocol):
    def complete(self, request: LLMRequest) -> LLMResponse: ...


def complete(request: LLMRequest, backend: LLMBackend) -> LLMResponse:
    return backend.complete(request)


# -- mock --------------------------------------------------------------------

Reply = Union[str, Callable[[LLMRequest], str]]


@dataclass
class MockRule:
    """First-hit rule: fires when ``pattern`` is a substring of the latest user message."""

    pattern: str
    reply: Reply
    repeat_limit: int | None = None
    session: str | None = None
    hits: int = 0

    def matches(self, request: LLMRequest) -> bool:
        if self.session is not None and request.session_tag != self.session:
            return False
        if self.repeat_limit is not None and self.hits >= self.repeat_limit:
            return False
        return self.pattern in request.latest_user


DEFAULT_REPLY = '```json\n{"action": "finish", "final_answer": "no scripted reply"}\n```'


@dataclass
class MockPolicy:
    context_limit: int = 1_000_000
    rules: list[MockRule] = field(default_factory=list)
    on_overflow: str = "error"
    default: Reply = DEFAULT_REPLY

    def __post_init__(self):
        if self.on_overflow not in ("error", "truncate_head"):
            raise ConfigError(f"on_overflow must be 'error' or 'truncate_head', not {self.on_overflow!r}")
        if self.context_limit < 1:
            raise ConfigError("context_limit must be positive")


class MockBackend:
    """Deterministic scripted backend with a hard context limit.

    Requests larger than ``context_limit`` characters either fail with
    ``context_overflow`` or lose their oldest content (``truncate_head``)
    before the rules see them.
    """

    def __init__(self, policy: MockPolicy | None = None, **kwargs):
        self.policy = policy or MockPolicy(**kwargs)
        self.calls = 0
        self.overflows = 0
        self.transcript: list[tuple[LLMRequest, LLMResponse]] = []
        self.keep_transcript = False

    @property
    def context_limit(self) -> int:
        return self.policy.context_limit

    def complete(self, request: LLMRequest) -> LLMResponse:
        self.calls += 1
        size = request.total_size()
        usage = {"prompt_chars": size}
        if size > self.policy.context_limit:
            self.overflows += 1
            if self.policy.on_overflow == "error":
                resp = LLMResponse.failure("context_overflow", usage)
                self._keep(request, resp)
                return resp
            request = truncate_head(request, self.policy.context_limit)
            usage["truncated_to"] = request.total_size()
        reply = self._reply_for(request)
        resp = LLMResponse(reply, "stop", {**usage, "completion_chars": len(reply)}) if reply \
            else LLMResponse.failure("empty scripted reply", usage)
        self._keep(request, resp)
        return resp

    def _reply_for(self, request: LLMRequest) -> str:
        for rule in self.policy.rules:
            if rule.matches(request):
                rule.hits += 1
                return _render(rule.reply, request)
        return _render(self.policy.default, request)

    def _keep(self, request: LLMRequest, resp: LLMResponse) -> None:
        if self.keep_transcript:
            self.transcript.append((request, resp))


def _render(reply: Reply, request: LLMRequest) -> str:
    return reply(request) if callable(reply) else reply


def truncate_head(request: LLMRequest, limit: int) -> LLMRequest:
    """Drop the oldest messages (then leading characters) until ``request`` fits."""
    msgs = list(request.messages)
    total = sum(len(m.content) for m in msgs)
    while len(msgs) > 1 and total > limit:
        total -= len(msgs.pop(0).content)
    if total > limit:
        m = msgs[0]
        msgs[0] = Message(m.role, m.content[len(m.content) - limit:] if limit > 0 else "")
    return LLMRequest(tuple(msgs), request.max_response, request.session_tag)


def load_mock_policy(path: str | os.PathLike) -> MockPolicy:
    """Read a mock policy file.

    Format: ``{"context_limit": int, "on_overflow": "error"|"truncate_head",
    "rules": [{"pattern", "reply", "repeat_limit"?, "session"?}], "default"?}``.
    A bare JSON list is accepted as the rules array.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read mock policy {path}: {exc}") from exc
    if isinstance(data, list):
        data = {"rules": data}
    try:
        rules = [
            MockRule(r["pattern"], r["reply"], r.get("repeat_limit"), r.get("session"))
            for r in data.get("rules", [])
        ]
        return MockPolicy(
            context_limit=int(data.get("context_limit", 1_000_000)),
            rules=rules,
            on_overflow=data.get("on_overflow", "error"),
            default=data.get("default", DEFAULT_REPLY),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"malformed mock policy {path}: {exc}") from exc


def scripted(replies: Sequence[str], **policy_kwargs) -> MockBackend:
    """Mock that returns ``replies`` in order, then the default reply."""
    rules = [MockRule("", r, repeat_limit=1, session=SESSION_MAIN) for r in replies]
    return MockBackend(MockPolicy(rules=rules, **policy_kwargs))


# -- HTTP --------------------------------------------------------------------

_TRANSIENT_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


@dataclass
class HTTPBackend:
    """OpenAI-compatible ``/chat/completions`` client."""

    endpoint: str
    model: str
    api_key: str | None = None
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0
    temperature: float = 0.0
    transport: httpx.BaseTransport | None = None

    @classmethod
    def from_env(cls, endpoint: str, model: str, api_key_env: str | None = "OPENAI_API_KEY",
                 **kwargs) -> HTTPBackend:
        key = os.environ.get(api_key_env) if api_key_env else None
        return cls(endpoint=endpoint, model=model, api_key=key, **kwargs)

    @property
    def url(self) -> str:
        base = self.endpoint.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"

    def body(self, request: LLMRequest) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "max_tokens": request.max_response,
            "temperature": self.temperature,
        }

    def complete(self, request: LLMRequest) -> LLMResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = "no attempt made"
        with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
            for attempt in range(max(1, self.retries)):
                if attempt:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    r = client.post(self.url, json=self.body(request), headers=headers)
                except httpx.TransportError as exc:
                    last_error = f"transport: {exc}"
                    logger.warning("attempt %d: %s", attempt + 1, last_error)
                    continue
                if r.status_code in _TRANSIENT_STATUS:
                    last_error = f"HTTP {r.status_code}"
                    logger.warning("attempt %d: %s", attempt + 1, last_error)
                    continue
                if r.status_code >= 400:
                    return LLMResponse.failure(f"HTTP {r.status_code}: {r.text[:200]}")
                return _parse_completion(r)
        return LLMResponse.failure(f"retries exhausted: {last_error}")


def _parse_completion(r: httpx.Response) -> LLMResponse:
    try:
        data = r.json()
        choice = data["choices"][0]
        content = choice["message"].get("content") or ""
        reason = choice.get("finish_reason") or "stop"
    except (ValueError, KeyError, IndexError, TypeError, AttributeError) as exc:
        return LLMResponse.failure(f"malformed completion: {exc}")
    usage = data.get("usage") or {}
    if not content:
        return LLMResponse.failure("empty completion", usage)
    if reason not in ("stop", "length"):
        reason = "stop"
    return LLMResponse(content, reason, usage)
