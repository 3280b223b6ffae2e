"""Mediated access to chat-completion and embedding backends.

All model traffic in the pipeline flows through :class:`LLMGateway`, which
adds response caching, retry with exponential backoff, and request rate
limiting on top of a pluggable backend. The :class:`MockBackend` replays
fixture files so the full pipeline can run hermetically; a
:class:`RecordingBackend` wrapper captures any backend's responses into the
same fixture format.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests


class GatewayError(Exception):
    """Base class for gateway failures."""


class BackendUnavailableError(GatewayError):
    """All retry attempts against the backend failed."""


class MissingFixtureError(GatewayError):
    """The mock backend has no fixture for a request and refuses to invent one."""


class ShapeError(GatewayError):
    """Embedding vectors have incompatible dimensions."""


class TransientBackendError(GatewayError):
    """A failure worth retrying (timeouts, 429, 5xx)."""


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request. Temperature defaults to 0 everywhere."""

    model_name: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("ChatRequest requires at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def payload(self) -> dict:
        return {
            "kind": "chat",
            "model": self.model_name,
            "messages": [[role, content] for role, content in self.messages],
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length embedding with the model that produced it."""

    values: tuple[float, ...]
    model_name: str

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must be non-empty")
        if any(not math.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


def request_key(payload: dict) -> str:
    """Stable content hash of a request payload (backend-independent)."""
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:32]


def cache_key(backend_name: str, payload: dict) -> str:
    """Cache key: content hash of backend, model, and full request payload."""
    return hashlib.sha256(
        (backend_name + "\x00" + request_key(payload)).encode("utf-8")
    ).hexdigest()[:32]


def embed_payload(model_name: str, text: str) -> dict:
    return {"kind": "embed", "model": model_name, "text": text}


def cosine_flagged(
    a: EmbeddingVector | Sequence[float], b: EmbeddingVector | Sequence[float]
) -> tuple[float, bool]:
    """Cosine similarity plus a degeneracy flag for zero-norm inputs."""
    va = a.values if isinstance(a, EmbeddingVector) else tuple(a)
    vb = b.values if isinstance(b, EmbeddingVector) else tuple(b)
    if len(va) != len(vb):
        raise ShapeError(f"dimension mismatch: {len(va)} vs {len(vb)}")
    dot = sum(x * y for x, y in zip(va, vb))
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(y * y for y in vb))
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    return dot / (na * nb), False


def cosine(a: EmbeddingVector | Sequence[float], b: EmbeddingVector | Sequence[float]) -> float:
    """Cosine similarity in [-1, 1]; 0 for zero-norm inputs."""
    return cosine_flagged(a, b)[0]


class Backend(Protocol):
    """Minimal surface a chat/embedding provider must offer."""

    name: str

    def chat(self, request: ChatRequest) -> str: ...

    def embed(self, texts: Sequence[str], model_name: str) -> list[list[float]]: ...


class OpenAICompatBackend:
    """HTTP backend speaking the standard chat-completions and embeddings wire."""

    name = "openai-compat"

    def __init__(
        self,
        api_base: str,
        api_key: str,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ) -> None:
        self.api_base = api_base.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()

    def _post(self, path: str, body: dict) -> dict:
        try:
            response = self.session.post(
                f"{self.api_base}{path}",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"request failed: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code >= 400:
            raise GatewayError(f"HTTP {response.status_code}: {response.text[:200]}")
        return response.json()

    def chat(self, request: ChatRequest) -> str:
        body = {
            "model": request.model_name,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        data = self._post("/chat/completions", body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError) as exc:
            raise GatewayError(f"malformed chat response: {data}") from exc

    def embed(self, texts: Sequence[str], model_name: str) -> list[list[float]]:
        data = self._post("/embeddings", {"model": model_name, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda row: row["index"])
            return [list(map(float, row["embedding"])) for row in rows]
        except (KeyError, TypeError) as exc:
            raise GatewayError(f"malformed embeddings response: {data}") from exc


def hashed_embedding(model_name: str, text: str, dim: int) -> list[float]:
    """Deterministic pseudo-embedding derived from a content hash.

    Bit-exact across platforms (no libm calls): digest bytes map to floats
    in [-1, 1). Used by the mock backend so hermetic runs need no per-text
    fixtures.
    """
    values: list[float] = []
    counter = 0
    seed = f"{model_name}\x00{text}".encode("utf-8")
    while len(values) < dim:
        digest = hashlib.sha256(seed + b"\x00" + str(counter).encode()).digest()
        for i in range(0, len(digest) - 3, 4):
            if len(values) >= dim:
                break
            raw = int.from_bytes(digest[i : i + 4], "big")
            values.append(raw / 2**31 - 1.0)
        counter += 1
    return values


class MockBackend:
    """Replays fixture files; never fabricates a chat response.

    Fixture layout under ``fixture_dir``:
      chat/<request-hash>.txt    response text for one chat request
      embed/<request-hash>.json  embedding values for one (model, text) pair

    ``embedding_mode`` is "fixture" (strict lookup) or "hashed"
    (deterministic synthetic vectors of ``embed_dim``, no files needed).
    """

    name = "mock"

    def __init__(
        self,
        fixture_dir: str | Path | None = None,
        embedding_mode: str = "fixture",
        embed_dim: int = 32,
    ) -> None:
        if embedding_mode not in ("fixture", "hashed"):
            raise ValueError(f"unknown embedding_mode: {embedding_mode}")
        self.fixture_dir = Path(fixture_dir) if fixture_dir is not None else None
        self.embedding_mode = embedding_mode
        self.embed_dim = embed_dim

    def _fixture_path(self, kind: str, key: str, suffix: str) -> Path:
        if self.fixture_dir is None:
            raise MissingFixtureError(f"no fixture directory configured ({kind} {key})")
        return self.fixture_dir / kind / f"{key}{suffix}"

    def chat(self, request: ChatRequest) -> str:
        key = request_key(request.payload())
        path = self._fixture_path("chat", key, ".txt")
        if not path.is_file():
            raise MissingFixtureError(f"no chat fixture for request {key}")
        return path.read_text(encoding="utf-8")

    def embed(self, texts: Sequence[str], model_name: str) -> list[list[float]]:
        out: list[list[float]] = []
        for text in texts:
            if self.embedding_mode == "hashed":
                out.append(hashed_embedding(model_name, text, self.embed_dim))
                continue
            key = request_key(embed_payload(model_name, text))
            path = self._fixture_path("embed", key, ".json")
            if not path.is_file():
                raise MissingFixtureError(f"no embed fixture for request {key}")
            out.append([float(v) for v in json.loads(path.read_text(encoding="utf-8"))])
        return out


class RecordingBackend:
    """Wraps a backend and captures every response into mock fixture files."""

    def __init__(self, inner: Backend, fixture_dir: str | Path) -> None:
        self.inner = inner
        self.name = inner.name
        self.fixture_dir = Path(fixture_dir)

    def _write(self, kind: str, key: str, suffix: str, content: str, request_repr: dict) -> None:
        directory = self.fixture_dir / kind
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{key}{suffix}").write_text(content, encoding="utf-8")
        (directory / f"{key}.request.json").write_text(
            json.dumps(request_repr, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    def chat(self, request: ChatRequest) -> str:
        response = self.inner.chat(request)
        payload = request.payload()
        self._write("chat", request_key(payload), ".txt", response, payload)
        return response

    def embed(self, texts: Sequence[str], model_name: str) -> list[list[float]]:
        vectors = self.inner.embed(texts, model_name)
        for text, vector in zip(texts, vectors):
            payload = embed_payload(model_name, text)
            self._write(
                "embed", request_key(payload), ".json", json.dumps(vector), payload
            )
        return vectors


class RateLimiter:
    """Token bucket: at most ``max_requests`` started per ``interval`` seconds."""

    def __init__(
        self,
        max_requests: int,
        interval: float = 1.0,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if max_requests < 1:
            raise ValueError("max_requests must be >= 1")
        self.max_requests = max_requests
        self.interval = interval
        self._clock = clock
        self._sleep = sleep
        self._starts: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._starts and now - self._starts[0] >= self.interval:
                    self._starts.popleft()
                if len(self._starts) < self.max_requests:
                    self._starts.append(now)
                    return
                wait = self.interval - (now - self._starts[0])
            self._sleep(max(wait, 1e-6))


@dataclass
class GatewayStats:
    chat_calls: int = 0
    embed_calls: int = 0
    cache_hits: int = 0
    backend_attempts: int = 0
    retries: int = 0


class LLMGateway:
    """Thread-safe front door for all chat and embedding traffic.

    Responses are cached by content hash of (backend, model, request); cache
    hits bypass the backend and the rate limiter entirely. Transient backend
    failures are retried with exponential backoff up to ``max_attempts``.
    """

    def __init__(
        self,
        backend: Backend,
        embed_model: str = "text-embedding-ada-002",
        embed_dim: int | None = None,
        cache_dir: str | Path | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        rate_limiter: RateLimiter | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.backend = backend
        self.embed_model = embed_model
        self.embed_dim = embed_dim
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.rate_limiter = rate_limiter
        self._sleep = sleep
        self._memory_cache: dict[str, str] = {}
        self._lock = threading.Lock()
        self.stats = GatewayStats()

    # -- cache ---------------------------------------------------------

    def _cache_get(self, key: str) -> str | None:
        with self._lock:
            if key in self._memory_cache:
                return self._memory_cache[key]
        if self.cache_dir is not None:
            path = self.cache_dir / f"{key}.txt"
            if path.is_file():
                value = path.read_text(encoding="utf-8")
                with self._lock:
                    self._memory_cache[key] = value
                return value
        return None

    def _cache_put(self, key: str, value: str) -> None:
        with self._lock:
            self._memory_cache[key] = value
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            (self.cache_dir / f"{key}.txt").write_text(value, encoding="utf-8")

    # -- retry loop ----------------------------------------------------

    def _with_retries(self, call: Callable[[], object]) -> object:
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            with self._lock:
                self.stats.backend_attempts += 1
            try:
                return call()
            except TransientBackendError as exc:
                last = exc
                if attempt < self.max_attempts:
                    with self._lock:
                        self.stats.retries += 1
                    self._sleep(self.backoff_base * 2 ** (attempt - 1))
        raise BackendUnavailableError(
            f"backend failed after {self.max_attempts} attempts: {last}"
        ) from last

    # -- public API ----------------------------------------------------

    def chat(self, request: ChatRequest) -> str:
        with self._lock:
            self.stats.chat_calls += 1
        key = cache_key(self.backend.name, request.payload())
        cached = self._cache_get(key)
        if cached is not None:
            with self._lock:
                self.stats.cache_hits += 1
            return cached
        response = self._with_retries(lambda: self.backend.chat(request))
        assert isinstance(response, str)
        self._cache_put(key, response)
        return response

    def embed(self, texts: Sequence[str], model_name: str | None = None) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed requires at least one text")
        model = model_name or self.embed_model
        with self._lock:
            self.stats.embed_calls += 1
        results: list[list[float] | None] = [None] * len(texts)
        misses: list[int] = []
        for i, text in enumerate(texts):
            key = cache_key(self.backend.name, embed_payload(model, text))
            cached = self._cache_get(key)
            if cached is not None:
                with self._lock:
                    self.stats.cache_hits += 1
                results[i] = json.loads(cached)
            else:
                misses.append(i)
        if misses:
            # One backend call per batch of misses; duplicates collapse.
            unique: dict[str, list[int]] = {}
            for i in misses:
                unique.setdefault(texts[i], []).append(i)
            ordered_texts = list(unique)
            vectors = self._with_retries(lambda: self.backend.embed(ordered_texts, model))
            assert isinstance(vectors, list)
            for text, vector in zip(ordered_texts, vectors):
                key = cache_key(self.backend.name, embed_payload(model, text))
                self._cache_put(key, json.dumps(vector))
                for i in unique[text]:
                    results[i] = vector
        out: list[EmbeddingVector] = []
        for values in results:
            assert values is not None
            if self.embed_dim is not None and len(values) != self.embed_dim:
                raise ShapeError(
                    f"embedding dimension {len(values)} != configured {self.embed_dim}"
                )
            out.append(EmbeddingVector(values=tuple(values), model_name=model))
        return out

    def embed_one(self, text: str, model_name: str | None = None) -> EmbeddingVector:
        return self.embed([text], model_name)[0]
