"""Uniform completion interface over chat-completion HTTP APIs and a
deterministic mock, with a content-addressed disk cache, bounded retries with
exponential backoff, and call accounting.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol

import requests

from .core import TripleSet
from .prompting import TABLE_HEADER, PromptFormat, serialize_triples

API_KEY_ENV = "TRIPLEFORGE_API_KEY"
RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class GatewayError(RuntimeError):
    """Completion failed for good (bad configuration or exhausted retries)."""

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class TransientProviderError(RuntimeError):
    """A retryable provider failure (rate limit, 5xx, connection trouble)."""

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class LlmRequest:
    model_id: str
    prompt: str
    temperature: float = 0.0
    max_output_chars_hint: int = 2048
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class LlmResponse:
    text: str
    from_cache: bool
    latency_ms: int
    provider: str


class CompletionProvider(Protocol):
    name: str

    def generate(self, request: LlmRequest) -> str: ...


class MockEchoGoldProvider:
    """Pure-function provider for offline runs: answers any prompt with the
    serialized gold triples of the sentence being queried.

    The query sentence is recovered positionally: the last prompt line, or
    the one above it when the prompt ends with the table header.  Unknown
    sentences and empty gold produce an empty completion.
    """

    name = "mock"

    def __init__(self, gold_by_text: Mapping[str, TripleSet],
                 fmt: PromptFormat = PromptFormat.TABLEIE):
        self._gold = dict(gold_by_text)
        self._fmt = fmt

    def generate(self, request: LlmRequest) -> str:
        lines = request.prompt.split("\n")
        if lines[-1] == TABLE_HEADER and len(lines) >= 2:
            # a header-terminated prompt asks for table rows whatever the
            # few-shot format configured for this provider
            sentence, fmt = lines[-2], PromptFormat.TABLEIE
        else:
            sentence, fmt = lines[-1], self._fmt
        gold = self._gold.get(sentence)
        if gold is None or len(gold) == 0:
            return ""
        return serialize_triples(fmt, gold)


class HttpChatProvider:
    """Chat-completions provider: POSTs ``{model, messages, temperature}``
    and reads ``choices[0].message.content``."""

    def __init__(self, endpoint_url: str, api_key: Optional[str] = None,
                 api_key_env: str = API_KEY_ENV, timeout: float = 60.0,
                 post: Callable = requests.post, name: str = "http"):
        if not endpoint_url:
            raise GatewayError("http provider requires an endpoint URL")
        key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        if not key:
            raise GatewayError(f"missing API key: set the {api_key_env} environment variable")
        self.name = name
        self._endpoint = endpoint_url
        self._key = key
        self._timeout = timeout
        self._post = post

    def generate(self, request: LlmRequest) -> str:
        payload = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        try:
            response = self._post(
                self._endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {self._key}"},
                timeout=self._timeout,
            )
        except requests.RequestException as exc:
            raise TransientProviderError(f"connection failure: {exc}") from exc
        if response.status_code in RETRYABLE_STATUSES:
            raise TransientProviderError(f"HTTP {response.status_code}", status=response.status_code)
        if response.status_code != 200:
            raise GatewayError(f"HTTP {response.status_code}: {response.text[:200]}",
                               status=response.status_code)
        body = response.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc


@dataclass
class GatewayStats:
    provider_calls: int = 0
    cache_hits: int = 0
    retries: int = 0


class LlmGateway:
    """Caching, retrying front end over a completion provider.

    Responses are cached one file per content key; writes are atomic
    (temp file + rename) so concurrent workers never observe a torn entry.
    At most ``concurrency`` provider calls are in flight at once.
    """

    def __init__(self, provider: CompletionProvider, cache_dir: str | Path,
                 max_attempts: int = 3, backoff_base: float = 0.5,
                 concurrency: int = 4, sleep: Callable[[float], None] = time.sleep):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.provider = provider
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._slots = threading.Semaphore(concurrency)
        self._lock = threading.Lock()
        self.stats = GatewayStats()

    def cache_key(self, request: LlmRequest) -> str:
        """SHA-256 over the response-determining request content; stable
        across runs and platforms."""
        material = json.dumps(
            {
                "provider": self.provider.name,
                "model_id": request.model_id,
                "prompt": request.prompt,
                "temperature": request.temperature,
                "stop_sequences": list(request.stop_sequences),
            },
            sort_keys=True,
            ensure_ascii=True,
        )
        return hashlib.sha256(material.encode("utf-8")).hexdigest()

    def _cache_path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def _read_cache(self, key: str) -> Optional[str]:
        path = self._cache_path(key)
        if not path.exists():
            return None
        with path.open(encoding="utf-8") as fh:
            return json.load(fh)["text"]

    def _write_cache(self, key: str, request: LlmRequest, text: str) -> None:
        entry = {
            "text": text,
            "provider": self.provider.name,
            "model_id": request.model_id,
            "prompt_sha256": hashlib.sha256(request.prompt.encode("utf-8")).hexdigest(),
        }
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, self._cache_path(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def complete(self, request: LlmRequest) -> LlmResponse:
        key = self.cache_key(request)
        cached = self._read_cache(key)
        if cached is not None:
            with self._lock:
                self.stats.cache_hits += 1
            return LlmResponse(text=cached, from_cache=True, latency_ms=0,
                               provider=self.provider.name)

        last_error: Optional[TransientProviderError] = None
        started = time.monotonic()
        for attempt in range(self.max_attempts):
            if attempt > 0:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
                with self._lock:
                    self.stats.retries += 1
            try:
                with self._slots:
                    with self._lock:
                        self.stats.provider_calls += 1
                    text = self.provider.generate(request)
            except TransientProviderError as exc:
                last_error = exc
                continue
            self._write_cache(key, request, text)
            latency = int((time.monotonic() - started) * 1000)
            return LlmResponse(text=text, from_cache=False, latency_ms=latency,
                               provider=self.provider.name)
        assert last_error is not None
        raise GatewayError(
            f"provider failed after {self.max_attempts} attempts: {last_error}",
            status=last_error.status,
        )
