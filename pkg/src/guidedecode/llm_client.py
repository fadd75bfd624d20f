"""Minimal OpenAI-compatible chat-completions client (no streaming)."""

from __future__ import annotations

import json
import logging
import os
import socket
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Sequence

from .errors import ClientError, HttpError, SchemaRejected, Timeout, ValidationError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_HINT_FIELD = "guided_decoding_backend"
DEFAULT_API_KEY_ENV = "GUIDEDECODE_API_KEY"


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValidationError(f"message role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completions call.

    ``response_schema`` is sent as an OpenAI ``json_schema`` response format.
    ``backend_hint`` goes into the extension field named ``hint_field``,
    which differs between servers.
    """

    model: str
    messages: tuple[Message, ...]
    response_schema: dict | None = None
    backend_hint: str | None = None
    temperature: float = 0.0
    max_tokens: int = 512
    timeout: float = 60.0
    hint_field: str = DEFAULT_HINT_FIELD
    schema_name: str = "response"

    def __post_init__(self) -> None:
        msgs = tuple(m if isinstance(m, Message) else Message(*m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise ValidationError("a chat request needs at least one message")
        if any(m.role == "system" for m in msgs[1:]):
            raise ValidationError("a system message may only appear first")

    @property
    def guided(self) -> bool:
        return self.response_schema is not None or self.backend_hint is not None

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.response_schema is not None:
            payload["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": self.schema_name, "schema": self.response_schema,
                                "strict": True},
            }
        if self.backend_hint is not None:
            payload[self.hint_field] = self.backend_hint
        return payload

    def serialize(self) -> bytes:
        """Canonical wire bytes: compact JSON, UTF-8, keys in insertion order."""
        return json.dumps(self.to_payload(), ensure_ascii=False, separators=(",", ":")).encode("utf-8")


@dataclass
class ChatResponse:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    latency: float = 0.0
    raw: dict[str, Any] = field(default_factory=dict, repr=False)


def _is_timeout(exc: BaseException) -> bool:
    if isinstance(exc, (TimeoutError, socket.timeout)):
        return True
    return isinstance(exc, urllib.error.URLError) and isinstance(exc.reason, (TimeoutError, socket.timeout))


class ChatClient:
    """Shareable client with bounded retries and an in-flight request cap.

    Timeouts, connection failures and 5xx responses are retried up to
    ``max_retries`` times; 4xx responses never are. The API key is read from
    the environment variable ``api_key_env`` at call time.
    """

    def __init__(self, endpoint: str, *, api_key_env: str = DEFAULT_API_KEY_ENV,
                 max_retries: int = 2, max_in_flight: int = 4, backoff: float = 0.5) -> None:
        if max_retries < 0 or max_in_flight < 1:
            raise ValidationError("max_retries must be >= 0 and max_in_flight >= 1")
        endpoint = endpoint.rstrip("/")
        if not endpoint.endswith("/chat/completions"):
            endpoint += "/chat/completions"
        self.url = endpoint
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _once(self, req: ChatRequest, body: bytes) -> dict[str, Any]:
        http_req = urllib.request.Request(self.url, data=body, headers=self._headers(), method="POST")
        with urllib.request.urlopen(http_req, timeout=req.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def chat(self, req: ChatRequest) -> ChatResponse:
        body = req.serialize()
        start = time.perf_counter()
        attempt = 0
        with self._slots:
            while True:
                try:
                    data = self._once(req, body)
                    break
                except urllib.error.HTTPError as exc:
                    text = exc.read().decode("utf-8", "replace")
                    if exc.code < 500:
                        if req.guided and exc.code in (400, 422):
                            raise SchemaRejected(exc.code, text) from None
                        raise HttpError(exc.code, text) from None
                    err: Exception = HttpError(exc.code, text)
                except Exception as exc:  # network-level failure
                    if _is_timeout(exc):
                        err = Timeout(f"request to {self.url} timed out after {req.timeout}s")
                    elif isinstance(exc, (urllib.error.URLError, ConnectionError)):
                        err = ClientError(f"cannot reach {self.url}: {exc}")
                    elif isinstance(exc, ValueError):
                        raise ClientError(f"malformed response from {self.url}: {exc}") from None
                    else:
                        raise
                if attempt >= self.max_retries:
                    raise err
                attempt += 1
                log.warning("retrying %s (%d/%d): %s", self.url, attempt, self.max_retries, err)
                if self.backoff:
                    time.sleep(self.backoff * attempt)
        latency = time.perf_counter() - start
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ClientError(f"response has no choices[0].message.content: {data!r:.300}") from None
        usage = {k: int(v) for k, v in (data.get("usage") or {}).items() if isinstance(v, int)}
        return ChatResponse(text if text is not None else "", usage, latency, data)


def chat(req: ChatRequest, endpoint: str, api_key_env: str = DEFAULT_API_KEY_ENV,
         **kwargs: Any) -> ChatResponse:
    return ChatClient(endpoint, api_key_env=api_key_env, **kwargs).chat(req)


def messages_from_pairs(pairs: Sequence[tuple[str, str]]) -> tuple[Message, ...]:
    return tuple(Message(role, content) for role, content in pairs)
