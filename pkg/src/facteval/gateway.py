"""Single choke-point for all LLM traffic.

Every chat or embedding call goes through ``LLMGateway``, which adds a
content-addressed on-disk cache, bounded retries with backoff, and an
in-flight concurrency cap. Backends are pluggable: an OpenAI-compatible
HTTP client for live runs and a deterministic scripted mock for tests
and offline fixtures.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from pathlib import Path
from typing import Optional, Protocol

import httpx
from pydantic import Field, model_validator

from .errors import (
    BackendRefusedError,
    DimensionMismatchError,
    GatewayError,
    NetworkError,
    RateLimitedError,
)
from .model import FrozenModel, canonical_dumps

logger = logging.getLogger(__name__)

API_KEY_ENV = "FACTEVAL_API_KEY"
BASE_URL_ENV = "FACTEVAL_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"


class RequestTag(str, enum.Enum):
    FACT_EXTRACT = "fact_extract"
    CLAIM_EXTRACT = "claim_extract"
    COVERAGE_JUDGE = "coverage_judge"
    PRECISION_JUDGE = "precision_judge"
    IMPORTANCE_JUDGE = "importance_judge"
    GENERATE = "generate"


class TokenUsage(FrozenModel):
    prompt_tokens: int = 0
    completion_tokens: int = 0
    total_tokens: int = 0


class ChatRequest(FrozenModel):
    model_name: str
    system_text: Optional[str] = None
    user_text: str
    temperature: float = Field(default=0.0, ge=0.0)
    max_tokens: int = Field(default=1024, gt=0)
    request_tag: RequestTag = RequestTag.GENERATE

    @model_validator(mode="after")
    def _check_user_text(self) -> "ChatRequest":
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        return self


class FinishReason(str, enum.Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


class ChatResponse(FrozenModel):
    text: str
    finish_reason: FinishReason = FinishReason.STOP
    usage: TokenUsage = TokenUsage()
    from_cache: bool = False


class EmbeddingVector(FrozenModel):
    values: tuple[float, ...]
    dim: int

    @model_validator(mode="after")
    def _check_dim(self) -> "EmbeddingVector":
        if len(self.values) != self.dim:
            raise ValueError("embedding length must equal dim")
        return self


def cache_key(req: ChatRequest) -> str:
    """Stable content hash; independent of request_tag and timing."""
    payload = canonical_dumps({
        "kind": "chat",
        "model_name": req.model_name,
        "system_text": req.system_text,
        "user_text": req.user_text,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def embed_cache_key(model_name: str, text: str) -> str:
    payload = canonical_dumps({"kind": "embed", "model_name": model_name, "text": text})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per key under {root}/{namespace}/{key[:2]}/{key}.json.

    Writes go through a temp file plus atomic rename, so concurrent
    misses on the same key converge to one stored value.
    """

    def __init__(self, root: Path | str, namespace: str):
        self.root = Path(root)
        self.namespace = namespace

    def _path(self, key: str) -> Path:
        return self.root / self.namespace / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[dict]:
        path = self._path(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("discarding unreadable cache entry %s", path)
            return None

    def put(self, key: str, payload: dict) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(canonical_dumps(payload))
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


class Backend(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...
    def embed(self, texts: list[str], model_name: str) -> list[EmbeddingVector]: ...


class OpenAICompatBackend:
    """Chat-completions and embeddings over an OpenAI-compatible HTTP API."""

    def __init__(self, base_url: Optional[str] = None, api_key: Optional[str] = None,
                 timeout: float = 60.0, transport: Optional[httpx.BaseTransport] = None):
        self.base_url = (base_url or os.getenv(BASE_URL_ENV)
                         or os.getenv("OPENAI_API_BASE") or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key or os.getenv(API_KEY_ENV) or os.getenv("OPENAI_API_KEY") or ""
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, body: dict) -> dict:
        try:
            resp = self._client.post(self.base_url + path, json=body, headers=self._headers())
        except httpx.HTTPError as exc:
            raise NetworkError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimitedError(f"429 from {path}")
        if resp.status_code >= 500:
            raise NetworkError(f"{resp.status_code} from {path}")
        if resp.status_code >= 400:
            raise BackendRefusedError(f"{resp.status_code} from {path}: {resp.text[:200]}")
        return resp.json()

    def complete(self, req: ChatRequest) -> ChatResponse:
        messages = []
        if req.system_text:
            messages.append({"role": "system", "content": req.system_text})
        messages.append({"role": "user", "content": req.user_text})
        data = self._post("/chat/completions", {
            "model": req.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
            finish = choice.get("finish_reason") or "stop"
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendRefusedError(f"malformed chat completion payload: {exc}") from exc
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            finish_reason=FinishReason.LENGTH if finish == "length" else FinishReason.STOP,
            usage=TokenUsage(
                prompt_tokens=usage.get("prompt_tokens", 0),
                completion_tokens=usage.get("completion_tokens", 0),
                total_tokens=usage.get("total_tokens", 0),
            ),
        )

    def embed(self, texts: list[str], model_name: str) -> list[EmbeddingVector]:
        data = self._post("/embeddings", {"model": model_name, "input": texts})
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            vectors = [tuple(float(x) for x in row["embedding"]) for row in rows]
        except (KeyError, TypeError) as exc:
            raise BackendRefusedError(f"malformed embeddings payload: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendRefusedError("embeddings payload cardinality mismatch")
        return [EmbeddingVector(values=v, dim=len(v)) for v in vectors]


_NUMBERED_LINE = re.compile(r"^(\d+)\.\s+(.*)$", re.MULTILINE)


class MockBackend:
    """Deterministic scripted backend.

    The script is a JSON document::

        {
          "chat": [
            {"tag": "fact_extract", "contains": "Brody", "reply": "Facts:\\n- ..."},
            {"tag": "precision_judge", "contains": ["claim", "evidence"],
             "reply": "{\\"label\\": ...}"},
            {"tag": "coverage_judge", "contains": "flaky", "error": "network"}
          ],
          "by_key": {"<cache_key hex>": "literal reply"},
          "embeddings": {"some exact text": [1.0, 0.0]},
          "embedding_dim": 64
        }

    Rule matching: ``by_key`` first, then the first ``chat`` rule whose tag
    matches (or is absent) and whose ``contains`` strings all appear in the
    request's user text. Unmatched requests fall back to a safe per-tag
    default so sparse scripts still yield a deterministic end-to-end run.
    """

    def __init__(self, script: Optional[dict] = None):
        script = script or {}
        self.rules: list[dict] = list(script.get("chat", []))
        self.by_key: dict[str, str] = dict(script.get("by_key", {}))
        self.embedding_overrides: dict[str, list[float]] = dict(script.get("embeddings", {}))
        self.embedding_dim: int = int(script.get("embedding_dim", 64))
        self.chat_calls = 0
        self.embed_calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path | str) -> "MockBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _match(self, req: ChatRequest) -> Optional[dict]:
        for rule in self.rules:
            tag = rule.get("tag")
            if tag is not None and tag != req.request_tag.value:
                continue
            needles = rule.get("contains", [])
            if isinstance(needles, str):
                needles = [needles]
            if all(n in req.user_text for n in needles):
                return rule
        return None

    def _default_reply(self, req: ChatRequest) -> str:
        tag = req.request_tag
        if tag is RequestTag.FACT_EXTRACT:
            return "Facts:\n"
        if tag is RequestTag.CLAIM_EXTRACT:
            return "Claims:\n"
        if tag is RequestTag.PRECISION_JUDGE:
            return json.dumps({"label": "NOT_SUPPORTED", "rationale": "mock default"})
        if tag is RequestTag.COVERAGE_JUDGE:
            return json.dumps({"label": "NOT_COVERED", "evidence_claim_ids": []})
        if tag is RequestTag.IMPORTANCE_JUDGE:
            sentences = _NUMBERED_LINE.findall(req.user_text.split("Sentences:", 1)[-1])
            return json.dumps([
                {"id": int(i), "sentence": s, "relevance": 3, "salience": 3}
                for i, s in sentences
            ])
        return "(mock response)"

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.chat_calls += 1
        key = cache_key(req)
        if key in self.by_key:
            return ChatResponse(text=self.by_key[key])
        rule = self._match(req)
        if rule is not None:
            error = rule.get("error")
            if error == "network":
                raise NetworkError("scripted network failure")
            if error == "rate_limited":
                raise RateLimitedError("scripted rate limit")
            if error == "refused":
                raise BackendRefusedError("scripted refusal")
            return ChatResponse(text=str(rule["reply"]))
        return ChatResponse(text=self._default_reply(req))

    def embed(self, texts: list[str], model_name: str) -> list[EmbeddingVector]:
        with self._lock:
            self.embed_calls += 1
        out = []
        for text in texts:
            if text in self.embedding_overrides:
                values = [float(x) for x in self.embedding_overrides[text]]
            else:
                values = self._seeded_unit_vector(text)
            out.append(EmbeddingVector(values=tuple(values), dim=len(values)))
        return out

    def _seeded_unit_vector(self, text: str) -> list[float]:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = random.Random(seed)
        raw = [rng.gauss(0.0, 1.0) for _ in range(self.embedding_dim)]
        norm = sum(x * x for x in raw) ** 0.5 or 1.0
        return [x / norm for x in raw]


class RetryPolicy(FrozenModel):
    attempts: int = Field(default=3, ge=1)
    base_delay: float = Field(default=0.5, ge=0.0)
    max_delay: float = Field(default=8.0, ge=0.0)
    jitter: float = Field(default=0.1, ge=0.0)


class LLMGateway:
    """Caching, retrying, concurrency-limited front of a backend."""

    def __init__(self, backend: Backend, cache: Optional[ResponseCache] = None,
                 max_in_flight: int = 4, retry: RetryPolicy = RetryPolicy()):
        self.backend = backend
        self.cache = cache
        self.retry = retry
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self._key_locks: dict[str, threading.Lock] = {}
        self._master = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._master:
            return self._key_locks.setdefault(key, threading.Lock())

    def _attempt(self, fn, *args):
        delay = self.retry.base_delay
        last: Optional[GatewayError] = None
        for attempt in range(self.retry.attempts):
            try:
                with self._sem:
                    return fn(*args)
            except (NetworkError, RateLimitedError) as exc:
                last = exc
                if attempt + 1 < self.retry.attempts:
                    sleep_for = min(delay, self.retry.max_delay)
                    sleep_for += random.uniform(0.0, self.retry.jitter) if self.retry.jitter else 0.0
                    logger.warning("backend error (%s), retry %d/%d in %.2fs",
                                   exc, attempt + 1, self.retry.attempts - 1, sleep_for)
                    time.sleep(sleep_for)
                    delay *= 2
        assert last is not None
        raise last

    @staticmethod
    def _from_cache_entry(hit: dict) -> ChatResponse:
        return ChatResponse(
            text=hit["text"],
            finish_reason=FinishReason(hit.get("finish_reason", "stop")),
            usage=TokenUsage(**hit.get("usage", {})),
            from_cache=True,
        )

    def chat(self, req: ChatRequest) -> ChatResponse:
        if self.cache is None:
            return self._attempt(self.backend.complete, req)
        key = cache_key(req)
        hit = self.cache.get(key)
        if hit is not None:
            return self._from_cache_entry(hit)
        # Single-flight per key: duplicate concurrent misses resolve to one
        # backend call and one stored value.
        with self._lock_for(key):
            hit = self.cache.get(key)
            if hit is not None:
                return self._from_cache_entry(hit)
            resp = self._attempt(self.backend.complete, req)
            self.cache.put(key, {
                "text": resp.text,
                "finish_reason": resp.finish_reason.value,
                "usage": resp.usage.model_dump(),
            })
            return resp

    def embed(self, texts: list[str], model_name: str) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed requires a non-empty list of texts")
        results: list[Optional[EmbeddingVector]] = [None] * len(texts)
        miss_idx: list[int] = []
        if self.cache is not None:
            for i, text in enumerate(texts):
                hit = self.cache.get(embed_cache_key(model_name, text))
                if hit is not None:
                    results[i] = EmbeddingVector(values=tuple(hit["values"]), dim=hit["dim"])
                else:
                    miss_idx.append(i)
        else:
            miss_idx = list(range(len(texts)))
        if miss_idx:
            fetched = self._attempt(self.backend.embed, [texts[i] for i in miss_idx], model_name)
            for i, vec in zip(miss_idx, fetched):
                results[i] = vec
                if self.cache is not None:
                    self.cache.put(embed_cache_key(model_name, texts[i]),
                                   {"values": list(vec.values), "dim": vec.dim})
        vectors = [v for v in results if v is not None]
        if len(vectors) != len(texts):
            raise GatewayError("embedding backend returned too few vectors")
        dims = {v.dim for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatchError(f"inconsistent embedding dims: {sorted(dims)}")
        return vectors
