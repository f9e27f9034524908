"""Completion backends: HTTP chat-completion endpoint, scripted mock, transcript replay.

Every backend exposes ``complete(request) -> CompletionResult`` and is safe to
call from several worker threads at once.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path

import httpx

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo-1106"
DEFAULT_MAX_OUTPUT_TOKENS = 2048
TRANSCRIPT_FIELDS = ("request_digest", "response_text", "prompt_tokens", "completion_tokens")


class BackendError(RuntimeError):
    """Base class for failures that abort a problem instead of consuming an attempt."""


class BackendUnavailable(BackendError):
    pass


class ReplayExhausted(BackendError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str
    user_text: str
    model_name: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    problem_id: str | None = None

    def __post_init__(self) -> None:
        if not self.system_text or not self.user_text:
            raise ValueError("system_text and user_text must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def digest(self) -> str:
        payload = json.dumps(
            [self.model_name, self.temperature, self.max_output_tokens, self.system_text, self.user_text],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int
    completion_tokens: int
    token_source: str = "heuristic"

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.token_source not in ("backend_reported", "heuristic"):
            raise ValueError(f"unknown token source {self.token_source!r}")


def heuristic_tokens(text: str) -> int:
    """Roughly four bytes per token."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def heuristic_result(request: CompletionRequest, text: str) -> CompletionResult:
    return CompletionResult(
        text=text,
        prompt_tokens=heuristic_tokens(request.system_text + request.user_text),
        completion_tokens=heuristic_tokens(text),
        token_source="heuristic",
    )


class MockBackend:
    """Canned completions, scripted per problem id.

    Script layout (JSON)::

        {"default": ["...", "..."], "problems": {"<id>": ["bad", "bad", "good"]}}

    Each problem walks its own list; once exhausted the last entry repeats.
    """

    def __init__(self, problems: dict[str, list[str]] | None = None, default: list[str] | None = None) -> None:
        self.problems = {k: list(v) for k, v in (problems or {}).items()}
        self.default = list(default or [])
        self._cursor: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()
        self.requests: list[CompletionRequest] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            return cls(default=data)
        return cls(problems=data.get("problems", {}), default=data.get("default", []))

    def complete(self, request: CompletionRequest) -> CompletionResult:
        key = request.problem_id or ""
        with self._lock:
            self.requests.append(request)
            script = self.problems.get(key, self.default)
            if not script:
                raise BackendUnavailable(f"mock script has no completions for problem {key!r}")
            idx = self._cursor[key]
            self._cursor[key] = idx + 1
        return heuristic_result(request, script[min(idx, len(script) - 1)])


class ReplayBackend:
    """Serve completions recorded in a transcript, matched by request digest.

    Entries with the same digest are served in their recorded order, so the
    interleaving of workers during recording does not matter.
    """

    def __init__(self, entries: list[dict]) -> None:
        self._queues: dict[str, deque[dict]] = defaultdict(deque)
        for entry in entries:
            self._queues[entry["request_digest"]].append(entry)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        return cls(load_transcript(path))

    def complete(self, request: CompletionRequest) -> CompletionResult:
        digest = request.digest()
        with self._lock:
            queue = self._queues.get(digest)
            if not queue:
                raise ReplayExhausted(f"transcript has no entry for request {digest[:12]}")
            entry = queue.popleft()
        return CompletionResult(
            text=entry["response_text"],
            prompt_tokens=int(entry["prompt_tokens"]),
            completion_tokens=int(entry["completion_tokens"]),
            token_source=entry.get("token_source", "backend_reported"),
        )


def load_transcript(path: str | Path) -> list[dict]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            entry = json.loads(line)
            missing = [k for k in TRANSCRIPT_FIELDS if k not in entry]
            if missing:
                raise ValueError(f"{path}:{lineno}: transcript entry lacks {missing}")
            entries.append(entry)
    return entries


class RecordingBackend:
    """Wrap another backend and append every call to a JSONL transcript."""

    def __init__(self, inner, path: str | Path) -> None:
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write transcript {self.path}: {exc}") from exc

    def complete(self, request: CompletionRequest) -> CompletionResult:
        result = self.inner.complete(request)
        entry = {
            "request_digest": request.digest(),
            "response_text": result.text,
            "prompt_tokens": result.prompt_tokens,
            "completion_tokens": result.completion_tokens,
            "token_source": result.token_source,
        }
        with self._lock:
            self._fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
            self._fh.flush()
        return result

    def close(self) -> None:
        with self._lock:
            self._fh.close()


class HTTPBackend:
    """OpenAI-style ``/chat/completions`` client with retries and a concurrency cap."""

    RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        *,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        max_concurrency: int = 4,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ) -> None:
        self.base_url = (base_url or os.environ.get("CAPSULE_API_BASE") or "").rstrip("/")
        if not self.base_url:
            raise BackendUnavailable("no endpoint configured; set CAPSULE_API_BASE")
        self.api_key = api_key if api_key is not None else os.environ.get("CAPSULE_API_KEY", "")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep

    def _payload(self, request: CompletionRequest) -> dict:
        return {
            "model": request.model_name,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def _delay(self, attempt: int, retry_after: str | None) -> float:
        if retry_after:
            try:
                return min(float(retry_after), self.backoff_cap)
            except ValueError:
                pass
        delay = min(self.backoff_cap, self.backoff_base * 2**attempt)
        return delay * (0.5 + random.random() / 2)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"
        last_error = "no attempt made"
        with self._slots:
            for attempt in range(self.max_retries + 1):
                retry_after = None
                try:
                    response = self._client.post(url, json=self._payload(request), headers=headers)
                except httpx.TransportError as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                else:
                    if response.status_code == 200:
                        return self._parse(request, response.json())
                    last_error = f"HTTP {response.status_code}: {response.text[:200]}"
                    if response.status_code not in self.RETRY_STATUS:
                        raise BackendUnavailable(last_error)
                    retry_after = response.headers.get("retry-after")
                if attempt < self.max_retries:
                    delay = self._delay(attempt, retry_after)
                    logger.warning("completion failed (%s); retrying in %.1fs", last_error, delay)
                    self._sleep(delay)
        raise BackendUnavailable(f"giving up after {self.max_retries + 1} tries: {last_error}")

    @staticmethod
    def _parse(request: CompletionRequest, body: dict) -> CompletionResult:
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed completion response: {exc!r}") from exc
        usage = body.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return CompletionResult(
                text=text,
                prompt_tokens=int(usage["prompt_tokens"]),
                completion_tokens=int(usage["completion_tokens"]),
                token_source="backend_reported",
            )
        return heuristic_result(request, text)


def make_backend(kind: str, *, mock_script: str | Path | None = None,
                 transcript: str | Path | None = None, **http_kwargs):
    if kind == "mock":
        if mock_script is None:
            raise ValueError("mock backend needs a script file")
        return MockBackend.from_file(mock_script)
    if kind == "replay":
        if transcript is None:
            raise ValueError("replay backend needs a transcript file")
        return ReplayBackend.from_file(transcript)
    if kind == "http":
        return HTTPBackend(**http_kwargs)
    raise ValueError(f"unknown backend {kind!r}")
