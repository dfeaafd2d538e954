"""Chat-completion transport with a content-addressed response cache.

Requests go to any OpenAI-compatible endpoint. Every response is cached
under a digest of the canonicalized request, so a run can later be replayed
bit-exactly with no network at all (cache-only mode).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import requests

DEFAULT_TIMEOUT = 60.0
_TRANSIENT_STATUS = (429, 500, 502, 503, 504)


class CacheMiss(LookupError):
    """Cache-only mode saw a request with no cached response."""


class EndpointError(RuntimeError):
    """All retry attempts against the endpoint failed."""


class MalformedResponse(RuntimeError):
    """Endpoint answered with something that is not a chat completion."""


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]  # (role, content) pairs
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("chat request needs at least one message")

    def canonical_json(self) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": role, "content": content} for role, content in self.messages
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_digest(request: ChatRequest) -> str:
    return hashlib.sha256(request.canonical_json().encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per request digest; writes are atomic, reads lock-free."""

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def _path(self, digest: str) -> str:
        return os.path.join(self.directory, f"{digest}.json")

    def get(self, digest: str) -> Optional[str]:
        try:
            with open(self._path(digest), "r", encoding="utf-8") as fh:
                return json.load(fh)["response"]
        except FileNotFoundError:
            return None

    def put(self, digest: str, request_json: str, response: str, endpoint: str) -> None:
        record = {
            "digest": digest,
            "request": request_json,
            "response": response,
            "timestamp": time.time(),
            "endpoint": endpoint,
        }
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".cache-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, sort_keys=True)
            os.replace(tmp, self._path(digest))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


Transport = Callable[[str, dict, dict, float], tuple[int, str]]


def _requests_transport(url: str, headers: dict, payload: dict,
                        timeout: float) -> tuple[int, str]:
    response = requests.post(url, headers=headers, json=payload, timeout=timeout)
    return response.status_code, response.text


class LLMClient:
    """Cached chat-completion client.

    mode="online" calls the endpoint on cache misses (with bounded retries
    and bounded concurrency); mode="cache-only" never touches the network
    and raises CacheMiss instead.
    """

    def __init__(self, model: str, endpoint: Optional[str] = None,
                 api_key: Optional[str] = None, cache_dir: Optional[str] = None,
                 mode: str = "online", max_attempts: int = 3,
                 backoff: float = 0.5, max_concurrency: int = 4,
                 timeout: float = DEFAULT_TIMEOUT,
                 transport: Optional[Transport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        if mode not in ("online", "cache-only"):
            raise ValueError(f"unknown client mode {mode!r}")
        if mode == "online" and endpoint is None and transport is None:
            raise ValueError("online mode needs an endpoint URL")
        self.model = model
        self.endpoint = endpoint
        self.api_key = api_key
        self.mode = mode
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(max_concurrency)
        self.network_calls = 0

    def complete(self, request: ChatRequest) -> str:
        digest = request_digest(request)
        if self.cache is not None:
            cached = self.cache.get(digest)
            if cached is not None:
                return cached
        if self.mode == "cache-only":
            raise CacheMiss(f"no cached response for request {digest}")
        response = self._call_endpoint(request)
        if self.cache is not None:
            self.cache.put(digest, request.canonical_json(), response,
                           f"{self.endpoint or 'custom-transport'}::{self.model}")
        return response

    def _call_endpoint(self, request: ChatRequest) -> str:
        url = (self.endpoint or "").rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = json.loads(request.canonical_json())
        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    self.network_calls += 1
                    status, body = self._transport(url, headers, payload, self.timeout)
            except (requests.ConnectionError, requests.Timeout, OSError) as exc:
                last_error = f"transport failure: {exc}"
                continue
            if status in _TRANSIENT_STATUS:
                last_error = f"transient HTTP {status}"
                continue
            if status != 200:
                raise EndpointError(f"endpoint returned HTTP {status}: {body[:300]}")
            return self._extract_content(body)
        raise EndpointError(
            f"giving up after {self.max_attempts} attempts: {last_error}"
        )

    @staticmethod
    def _extract_content(body: str) -> str:
        try:
            parsed = json.loads(body)
            content = parsed["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected completion payload: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("completion content is not text")
        return content
