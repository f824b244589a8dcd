"""Chat-completion endpoints: an OpenAI-compatible HTTP client plus in-process stand-ins.

Anything with a ``chat(messages, **overrides) -> Completion`` method can
serve as an agent model, prober, verifier or oracle.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import httpx

from .errors import EndpointError

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.6
DEFAULT_TOP_P = 0.95


@dataclass(frozen=True)
class Completion:
    text: str
    usage: dict = field(default_factory=dict)
    retries: int = 0


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 1.0  # seconds before the first retry, doubled each time

    def delays(self):
        for i in range(self.attempts - 1):
            yield self.backoff * (2 ** i)


class ChatEndpoint:
    """OpenAI-compatible ``/chat/completions`` client with retry and transcript log."""

    def __init__(
        self,
        base_url: str,
        model: str,
        temperature: float = DEFAULT_TEMPERATURE,
        top_p: float = DEFAULT_TOP_P,
        max_tokens: int | None = None,
        timeout: float = 120.0,
        retry: RetryPolicy = RetryPolicy(),
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.params: dict[str, Any] = {"temperature": temperature, "top_p": top_p}
        if max_tokens is not None:
            self.params["max_tokens"] = max_tokens
        self.timeout = timeout
        self.retry = retry
        self.api_key = api_key if api_key is not None else os.getenv("OPENAI_API_KEY", "")
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._sleep = sleep or time.sleep
        self._lock = threading.Lock()
        self.transcripts: list[dict] = []

    def config(self) -> dict:
        return {"base_url": self.base_url, "model": self.model, "params": dict(self.params),
                "timeout": self.timeout, "retry": {"attempts": self.retry.attempts, "backoff": self.retry.backoff}}

    def request_body(self, messages: Sequence[dict], **overrides: Any) -> dict:
        return {"model": self.model, "messages": list(messages), **self.params, **overrides}

    def chat(self, messages: Sequence[dict], **overrides: Any) -> Completion:
        body = self.request_body(messages, **overrides)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        delays = list(self.retry.delays())
        retries = 0
        while True:
            try:
                resp = self._client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                data = resp.json()
                text = data["choices"][0]["message"].get("content") or ""
                usage = data.get("usage") or {}
                break
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                retryable = not isinstance(exc, httpx.HTTPStatusError) or exc.response.status_code == 429 or exc.response.status_code >= 500
                if not retryable or retries >= len(delays):
                    raise EndpointError(f"{self.base_url}: {exc}") from exc
                log.warning("chat call failed (%s); retry %d in %.1fs", exc, retries + 1, delays[retries])
                self._sleep(delays[retries])
                retries += 1
        with self._lock:
            self.transcripts.append({"request": body, "completion": text, "usage": usage, "retries": retries})
        return Completion(text, usage, retries)


class FunctionEndpoint:
    """Wrap ``fn(messages) -> str`` as an endpoint. Exceptions become ``EndpointError``."""

    def __init__(self, fn: Callable[[list[dict]], str], name: str = "function"):
        self.fn = fn
        self.name = name
        self.transcripts: list[dict] = []
        self._lock = threading.Lock()

    def config(self) -> dict:
        return {"endpoint": self.name}

    def chat(self, messages: Sequence[dict], **overrides: Any) -> Completion:
        try:
            text = self.fn(list(messages))
        except EndpointError:
            raise
        except Exception as exc:
            raise EndpointError(f"{self.name}: {exc}") from exc
        with self._lock:
            self.transcripts.append({"messages": list(messages), "overrides": overrides, "completion": text})
        return Completion(text)


class ScriptedEndpoint(FunctionEndpoint):
    """Replays a fixed list of completions in order."""

    def __init__(self, replies: Sequence[str], name: str = "scripted"):
        self._replies = list(replies)
        self._i = 0
        super().__init__(self._next, name)

    def _next(self, messages):
        if self._i >= len(self._replies):
            raise EndpointError(f"{self.name}: script exhausted")
        reply = self._replies[self._i]
        self._i += 1
        return reply
