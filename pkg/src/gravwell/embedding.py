"""Text-embedding providers and their persistent vector cache.

The deterministic mock hashes a bag of tokens into a fixed-dimension unit
vector, which keeps the whole pipeline hermetic; the remote provider talks
to an embeddings HTTP endpoint with the same retry/cache contract the
scorer uses.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Protocol

import numpy as np
import requests

from .scoring import API_KEY_ENV

DEFAULT_DIM = 64

_TOKEN = re.compile(r"[a-z0-9']+")


class EmbeddingError(Exception):
    """Embedding failed for good (configuration problem or retries exhausted)."""


class RetryableEmbeddingError(EmbeddingError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class EmbedderConfigError(EmbeddingError):
    pass


class Embedder(Protocol):
    provider_id: str
    calls: int
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class MockEmbedder:
    """Hashed bag-of-tokens vectors, unit-normalized.

    A pure function of the text: each token increments one of `dim` buckets
    chosen by its sha256 digest. Stable across runs and platforms; text with
    no tokens embeds to the zero vector, which callers treat as
    non-embeddable.
    """

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        if dim < 1:
            raise EmbedderConfigError("embedding dimension must be >= 1")
        self.dim = dim
        self.provider_id = f"mock-bag{dim}"
        self.calls = 0
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            self.calls += 1
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN.findall(text.lower()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            vec[int.from_bytes(digest[:8], "big") % self.dim] += 1.0
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm > 0.0 else vec


class RemoteEmbedder:
    """Embeddings HTTP backend; credential comes from GRAVWELL_API_KEY."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key: str | None = None,
        *,
        timeout: float = 30.0,
        session: Any = None,
    ) -> None:
        key = api_key or os.environ.get(API_KEY_ENV, "")
        if not key:
            raise EmbedderConfigError(f"remote embedder needs a credential; set {API_KEY_ENV}")
        if not base_url or not model:
            raise EmbedderConfigError("remote embedder needs base_url and model")
        if dim < 1:
            raise EmbedderConfigError("embedding dimension must be >= 1")
        self._key = key
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.timeout = timeout
        self.provider_id = f"remote:{model}"
        self.calls = 0
        self._lock = threading.Lock()
        self._session = session if session is not None else requests.Session()

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            self.calls += 1
        try:
            response = self._session.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": text},
                headers={"Authorization": f"Bearer {self._key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise RetryableEmbeddingError(f"embedding request failed: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise RetryableEmbeddingError(
                f"embedding endpoint returned {response.status_code}",
                retry_after=_retry_after_hint(response),
            )
        if response.status_code != 200:
            raise EmbeddingError(
                f"embedding endpoint returned {response.status_code}: {response.text[:200]}"
            )
        try:
            values = response.json()["data"][0]["embedding"]
            vec = np.asarray(values, dtype=np.float64)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RetryableEmbeddingError(f"malformed embedding response: {exc}") from exc
        if vec.ndim != 1 or vec.size != self.dim:
            raise EmbeddingError(
                f"embedding endpoint returned dim {vec.size}, expected {self.dim}"
            )
        return vec


def _retry_after_hint(response: Any) -> float | None:
    raw = response.headers.get("Retry-After") if hasattr(response, "headers") else None
    if raw is None:
        return None
    try:
        return max(0.0, float(raw))
    except (TypeError, ValueError):
        return None


def embedding_key(provider_id: str, text: str) -> str:
    return hashlib.sha256(f"{provider_id}\x1f{text}".encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Append-only JSON Lines vector store; last write for a key wins."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        with self.path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    key = str(record["key"])
                    values = np.asarray(record["values"], dtype=np.float64)
                except (ValueError, KeyError, TypeError):
                    continue
                self._entries[key] = values

    def get(self, key: str) -> np.ndarray | None:
        return self._entries.get(key)

    def put(self, key: str, values: np.ndarray, model_id: str) -> None:
        entry = {
            "key": key,
            "values": [float(v) for v in values],
            "model_id": model_id,
            "created_utc": int(time.time()),
        }
        with self._lock:
            self._entries[key] = np.asarray(values, dtype=np.float64)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(entry, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


def embed_text(
    text: str,
    embedder: Embedder,
    cache: EmbeddingCache | None = None,
    *,
    retries: int = 3,
    sleeper: Callable[[float], None] = time.sleep,
) -> np.ndarray:
    """Embed one text through the cache, retrying transient backend failures."""
    key = embedding_key(embedder.provider_id, text)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit

    delay = 0.5
    last: RetryableEmbeddingError | None = None
    vec: np.ndarray | None = None
    for attempt in range(retries + 1):
        if attempt:
            assert last is not None
            sleeper(last.retry_after if last.retry_after is not None else delay)
            delay *= 2
        try:
            vec = embedder.embed(text)
            break
        except RetryableEmbeddingError as exc:
            last = exc
    if vec is None:
        raise EmbeddingError(f"embedding failed after {retries} retries: {last}") from last

    if cache is not None:
        cache.put(key, vec, embedder.provider_id)
    return vec


def embed_many(
    texts: Sequence[str],
    embedder: Embedder,
    cache: EmbeddingCache | None = None,
    *,
    max_in_flight: int = 1,
    retries: int = 3,
    sleeper: Callable[[float], None] = time.sleep,
) -> list[np.ndarray | EmbeddingError]:
    """Embed a batch in request order; failures come back as values, not raises."""

    def one(text: str) -> np.ndarray | EmbeddingError:
        try:
            return embed_text(text, embedder, cache, retries=retries, sleeper=sleeper)
        except EmbeddingError as exc:
            return exc

    if max_in_flight <= 1 or len(texts) <= 1:
        return [one(t) for t in texts]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, texts))
