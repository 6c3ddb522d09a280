"""Single chokepoint for all chat-completion calls.

Every agent, judge, refinement, and pairwise-similarity call routes
through `Gateway.complete`, which layers caching, retries with backoff,
budget guards, and call accounting over a pluggable backend.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import requests


class GatewayError(Exception):
    pass


class BackendUnavailable(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class BudgetExceeded(GatewayError):
    pass


class UnparseableAfterRepair(GatewayError):
    pass


class TransientBackendError(Exception):
    """Raised by backends for failures worth retrying."""


class ResponseFormat(str, Enum):
    FREE_TEXT = "free_text"
    JSON_OBJECT = "json_object"


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 2048
    response_format: ResponseFormat = ResponseFormat.FREE_TEXT
    # routing hint for the deterministic mock and call accounting;
    # deliberately excluded from the cache key
    purpose: str = ""

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: FinishReason = FinishReason.STOP
    usage: Usage = Usage()


def cache_key(req: ChatRequest) -> str:
    """Stable hash over the semantic request fields, order-insensitive
    in serialization but sensitive to message order."""
    payload = {
        "model_id": req.model_id,
        "messages": [[m.role, m.content] for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "response_format": req.response_format.value,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


Backend = Callable[[ChatRequest], ChatResponse]


class HttpBackend:
    """OpenAI-style chat-completions endpoint."""

    def __init__(self, base_url: str, api_key: str = "", timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key or os.environ.get("LIMGEN_API_KEY", "")
        self.timeout = timeout

    def __call__(self, req: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": req.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(str(exc)) from exc
        if resp.status_code >= 500:
            raise TransientBackendError(f"server error {resp.status_code}")
        if resp.status_code != 200:
            raise BackendUnavailable(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            content = choice["message"]["content"]
            usage = data.get("usage", {})
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response body: {exc}") from exc
        finish = choice.get("finish_reason", "stop")
        reason = FinishReason.LENGTH if finish == "length" else FinishReason.STOP
        return ChatResponse(
            content=content,
            finish_reason=reason,
            usage=Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
        )


class FixtureBackend:
    """Serves fixture files named by cache_key; zero network."""

    def __init__(self, fixture_dir: Path):
        self.fixture_dir = Path(fixture_dir)

    def __call__(self, req: ChatRequest) -> ChatResponse:
        path = self.fixture_dir / f"{cache_key(req)}.txt"
        if not path.exists():
            raise BackendUnavailable(f"no fixture for request key {cache_key(req)}")
        return ChatResponse(content=path.read_text(encoding="utf-8"))


@dataclass
class Budget:
    max_requests: Optional[int] = None
    max_total_tokens: Optional[int] = None


class Gateway:
    """Caching, retrying, budgeted front-end over a backend callable."""

    def __init__(
        self,
        backend: Backend,
        cache_dir: Optional[Path] = None,
        max_attempts: int = 3,
        backoff_base: float = 0.2,
        budget: Optional[Budget] = None,
        max_in_flight: int = 4,
        record_calls: bool = False,
        sleep: Callable[[float], None] = time.sleep,
        log: Optional[Callable[[dict], None]] = None,
    ):
        self.backend = backend
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.budget = budget or Budget()
        self.record_calls = record_calls
        self._sleep = sleep
        self._log = log
        self._lock = threading.Lock()
        self._throttle = threading.Semaphore(max_in_flight)
        self.backend_calls = 0
        self.cache_hits = 0
        self.total_tokens = 0
        self.calls_by_purpose: dict[str, int] = {}
        self.call_log: list[ChatRequest] = []

    # -- cache ---------------------------------------------------------

    def _cache_path(self, key: str) -> Optional[Path]:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{key}.json"

    def _cache_read(self, key: str) -> Optional[ChatResponse]:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        return ChatResponse(
            content=data["content"],
            finish_reason=FinishReason(data["finish_reason"]),
            usage=Usage(**data["usage"]),
        )

    def _cache_write(self, key: str, resp: ChatResponse) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "content": resp.content,
            "finish_reason": resp.finish_reason.value,
            "usage": {
                "prompt_tokens": resp.usage.prompt_tokens,
                "completion_tokens": resp.usage.completion_tokens,
            },
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    # -- core call -----------------------------------------------------

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            if self.record_calls:
                self.call_log.append(req)
            self.calls_by_purpose[req.purpose] = self.calls_by_purpose.get(req.purpose, 0) + 1

        cacheable = req.temperature == 0.0
        key = cache_key(req)
        if cacheable:
            with self._lock:
                cached = self._cache_read(key)
                if cached is not None:
                    self.cache_hits += 1
                    self._emit_log(req, cached, cache_hit=True)
                    return cached

        with self._lock:
            if (
                self.budget.max_requests is not None
                and self.backend_calls >= self.budget.max_requests
            ):
                raise BudgetExceeded(f"request budget {self.budget.max_requests} exhausted")
            if (
                self.budget.max_total_tokens is not None
                and self.total_tokens >= self.budget.max_total_tokens
            ):
                raise BudgetExceeded(f"token budget {self.budget.max_total_tokens} exhausted")

        last_error: Optional[Exception] = None
        with self._throttle:
            for attempt in range(self.max_attempts):
                try:
                    resp = self.backend(req)
                    break
                except TransientBackendError as exc:
                    last_error = exc
                    if attempt + 1 < self.max_attempts:
                        self._sleep(self.backoff_base * (2**attempt))
            else:
                raise BackendUnavailable(
                    f"backend failed after {self.max_attempts} attempts: {last_error}"
                )

        with self._lock:
            self.backend_calls += 1
            self.total_tokens += resp.usage.prompt_tokens + resp.usage.completion_tokens
            if cacheable:
                self._cache_write(key, resp)
        self._emit_log(req, resp, cache_hit=False)
        return resp

    def _emit_log(self, req: ChatRequest, resp: ChatResponse, cache_hit: bool) -> None:
        if self._log is None:
            return
        self._log(
            {
                "purpose": req.purpose,
                "model": req.model_id,
                "cache_hit": cache_hit,
                "prompt_tokens": resp.usage.prompt_tokens,
                "completion_tokens": resp.usage.completion_tokens,
            }
        )

    # -- structured calls ----------------------------------------------

    def complete_structured(self, req: ChatRequest, parser: Callable[[str], object]):
        """Call, parse; on parse failure re-prompt once with a repair note.

        Returns (parsed_value, raw_text).
        """
        if req.response_format is not ResponseFormat.JSON_OBJECT:
            raise ValueError("complete_structured requires response_format JSON_OBJECT")
        resp = self.complete(req)
        try:
            return parser(resp.content), resp.content
        except (ValueError, KeyError, TypeError):
            pass
        repair_req = replace(
            req,
            messages=req.messages
            + (
                Message("assistant", resp.content),
                Message(
                    "user",
                    "Your previous reply was not valid JSON matching the requested "
                    "schema. Reply again with only the JSON object, no prose.",
                ),
            ),
        )
        repair_resp = self.complete(repair_req)
        try:
            return parser(repair_resp.content), repair_resp.content
        except (ValueError, KeyError, TypeError) as exc:
            raise UnparseableAfterRepair(f"both attempts unparseable: {exc}") from exc


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json_object(text: str) -> dict:
    """Pull the first JSON object out of possibly-fenced, prose-wrapped text."""
    candidates = _FENCE_RE.findall(text)
    candidates.append(text)
    start = text.find("{")
    if start != -1:
        candidates.append(text[start : text.rfind("}") + 1])
    for candidate in candidates:
        candidate = candidate.strip()
        if not candidate.startswith("{"):
            continue
        try:
            value = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value
    raise ValueError("no JSON object found in text")
