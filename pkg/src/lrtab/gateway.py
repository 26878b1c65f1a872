"""Model access layer: HTTP chat/embedding clients and scripted mocks.

Chat traffic uses the OpenAI-style chat-completions wire shape. Transient
failures (429, 408, 5xx, network timeouts) are retried with capped
exponential backoff and full jitter; auth failures and malformed payloads
are surfaced immediately.

The scripted mock replays a JSONL fixture. Each entry is
{"match": ..., "response": ..., "consume_once": false} where match is
either "sha256:<hex>" (digest of the rendered conversation) or a regular
expression searched against the rendered conversation. Entries are tried
in file order; the first live match wins.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import httpx

from .errors import AuthFailure, EndpointError, GatewayTimeout, RateLimited

Message = dict[str, str]


@dataclass
class BackendRef:
    """Where model calls go. kind is "http" or "mock"."""

    kind: str = "mock"
    base_url: str | None = None
    api_key_env: str = "LRTAB_API_KEY"
    model: str = "gpt-4o-mini"
    embed_model: str = "text-embedding-3-small"
    fixture: str | None = None
    embed_dimension: int = 256
    embed_seed: int = 0
    concurrency: int = 4
    temperature: float = 0.0
    timeout_s: float = 60.0
    max_tokens: int = 2048

    def resolved_base_url(self) -> str:
        url = self.base_url or os.environ.get("LRTAB_API_BASE")
        if not url:
            raise EndpointError(
                "http backend needs base_url or the LRTAB_API_BASE variable"
            )
        return url.rstrip("/")


@dataclass
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0
    multiplier: float = 4.0


class ChatClient(Protocol):
    def complete(self, messages: list[Message]) -> str: ...


class EmbedClient(Protocol):
    def embed(self, text: str) -> list[float]: ...


def render_messages(messages: list[Message]) -> str:
    return "\n\n".join(f"[{m['role']}]\n{m['content']}" for m in messages)


def conversation_digest(messages: list[Message]) -> str:
    return hashlib.sha256(render_messages(messages).encode("utf-8")).hexdigest()


class UsageStats:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls = 0
        self.total_tokens = 0

    def record(self, tokens: int) -> None:
        with self._lock:
            self.calls += 1
            self.total_tokens += tokens


def _transient(exc: Exception) -> bool:
    if isinstance(exc, AuthFailure):
        return False
    if isinstance(exc, (RateLimited, GatewayTimeout)):
        return True
    return bool(getattr(exc, "transient", False))


def _error_for_status(status: int, body: str) -> EndpointError:
    snippet = body[:200]
    if status in (401, 403):
        return AuthFailure(f"endpoint rejected credentials (HTTP {status})")
    if status == 429:
        return RateLimited(f"endpoint rate limited the request: {snippet}")
    err = EndpointError(f"endpoint returned HTTP {status}: {snippet}")
    if status == 408 or status >= 500:
        err.transient = True
    return err


class _RetryingHttpClient:
    def __init__(
        self,
        ref: BackendRef,
        policy: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ) -> None:
        self.ref = ref
        self.policy = policy or RetryPolicy()
        self.usage = UsageStats()
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._sem = threading.BoundedSemaphore(max(1, ref.concurrency))
        self._client = httpx.Client(
            timeout=ref.timeout_s, transport=transport
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.ref.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, url: str, payload: dict) -> dict:
        try:
            with self._sem:
                response = self._client.post(
                    url, json=payload, headers=self._headers()
                )
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(f"request to {url} timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            err = EndpointError(f"request to {url} failed: {exc}")
            err.transient = True
            raise err from exc
        if response.status_code != 200:
            raise _error_for_status(response.status_code, response.text)
        try:
            return response.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise EndpointError(f"endpoint returned non-JSON body: {exc}") from exc

    def _with_retries(self, fn: Callable[[], dict]) -> dict:
        last: Exception | None = None
        for attempt in range(1, self.policy.attempts + 1):
            try:
                return fn()
            except EndpointError as exc:
                last = exc
                if not _transient(exc) or attempt == self.policy.attempts:
                    raise
                cap = self.policy.base_delay * self.policy.multiplier ** (attempt - 1)
                self._sleep(self._rng.uniform(0.0, cap))
        raise last  # pragma: no cover - loop always returns or raises

    def close(self) -> None:
        self._client.close()


class HttpChatClient(_RetryingHttpClient):
    def complete(self, messages: list[Message]) -> str:
        url = self.ref.resolved_base_url() + "/chat/completions"
        payload: dict = {
            "model": self.ref.model,
            "messages": messages,
            "temperature": self.ref.temperature,
        }
        payload["max_tokens"] = self.ref.max_tokens
        data = self._with_retries(lambda: self._post(url, payload))
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed chat completion payload: {exc}") from exc
        if not isinstance(content, str):
            raise EndpointError("chat completion content is not a string")
        usage = data.get("usage") or {}
        self.usage.record(int(usage.get("total_tokens", 0) or 0))
        return content


class HttpEmbedClient(_RetryingHttpClient):
    def embed(self, text: str) -> list[float]:
        url = self.ref.resolved_base_url() + "/embeddings"
        payload = {"model": self.ref.embed_model, "input": [text]}
        data = self._with_retries(lambda: self._post(url, payload))
        try:
            vector = data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed embedding payload: {exc}") from exc
        if not isinstance(vector, list) or not vector:
            raise EndpointError("embedding payload has no vector")
        usage = data.get("usage") or {}
        self.usage.record(int(usage.get("total_tokens", 0) or 0))
        return [float(v) for v in vector]


@dataclass
class _FixtureEntry:
    matcher: str
    response: str
    consume_once: bool = False
    consumed: bool = False
    pattern: re.Pattern | None = None

    def matches(self, rendered: str, digest: str) -> bool:
        if self.matcher.startswith("sha256:"):
            return self.matcher[len("sha256:"):] == digest
        assert self.pattern is not None
        return self.pattern.search(rendered) is not None


class ScriptedMockChatClient:
    """Replays canned responses from a JSONL fixture, first match wins."""

    def __init__(self, fixture_path: str) -> None:
        self.fixture_path = fixture_path
        self.usage = UsageStats()
        self._lock = threading.Lock()
        self._entries: list[_FixtureEntry] = []
        with open(fixture_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise EndpointError(
                        f"fixture {fixture_path} line {lineno} is not JSON: {exc}"
                    ) from exc
                if "match" not in obj or "response" not in obj:
                    raise EndpointError(
                        f"fixture {fixture_path} line {lineno} needs match and response"
                    )
                entry = _FixtureEntry(
                    matcher=str(obj["match"]),
                    response=str(obj["response"]),
                    consume_once=bool(obj.get("consume_once", False)),
                )
                if not entry.matcher.startswith("sha256:"):
                    try:
                        entry.pattern = re.compile(entry.matcher)
                    except re.error as exc:
                        raise EndpointError(
                            f"fixture {fixture_path} line {lineno} has a bad regex: {exc}"
                        ) from exc
                self._entries.append(entry)

    def complete(self, messages: list[Message]) -> str:
        rendered = render_messages(messages)
        digest = hashlib.sha256(rendered.encode("utf-8")).hexdigest()
        with self._lock:
            for entry in self._entries:
                if entry.consumed:
                    continue
                if entry.matches(rendered, digest):
                    if entry.consume_once:
                        entry.consumed = True
                    self.usage.record(0)
                    return entry.response
        raise EndpointError("fixture exhausted")


class HashedEmbedClient:
    """Deterministic bag-of-words embedding: each token hashes to a signed slot."""

    def __init__(self, dimension: int = 256, seed: int = 0) -> None:
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self.usage = UsageStats()

    def embed(self, text: str) -> list[float]:
        vector = [0.0] * self.dimension
        for token in text.lower().split():
            digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
            slot = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vector[slot] += sign
        self.usage.record(0)
        return vector


def make_chat_client(ref: BackendRef, **kwargs) -> ChatClient:
    if ref.kind == "mock":
        if not ref.fixture:
            raise EndpointError("mock chat backend needs a fixture path")
        return ScriptedMockChatClient(ref.fixture)
    if ref.kind == "http":
        return HttpChatClient(ref, **kwargs)
    raise EndpointError(f"unknown backend kind {ref.kind!r}")


def make_embed_client(ref: BackendRef, **kwargs) -> EmbedClient:
    if ref.kind == "mock":
        return HashedEmbedClient(dimension=ref.embed_dimension, seed=ref.embed_seed)
    if ref.kind == "http":
        return HttpEmbedClient(ref, **kwargs)
    raise EndpointError(f"unknown backend kind {ref.kind!r}")
