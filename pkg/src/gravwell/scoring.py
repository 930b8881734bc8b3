"""Five-level stance scoring.

Builds byte-stable support and alignment prompts, parses model replies onto
the five-level grid, and runs a pluggable scorer backend (remote HTTP or a
deterministic mock) behind a persistent append-only cache.
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
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

import requests

from .ingest import CommentContext, comment_payload

API_KEY_ENV = "GRAVWELL_API_KEY"

SCORE_LEVELS: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)


class ScoreLevel(float, Enum):
    """The five representable stance values; nothing off-grid is constructible."""

    STRONG_OPPOSE = -1.0
    OPPOSE = -0.5
    NEUTRAL = 0.0
    SUPPORT = 0.5
    STRONG_SUPPORT = 1.0


class ScoreKind(str, Enum):
    SUPPORT = "support"
    ALIGNMENT = "alignment"


class ScoringError(Exception):
    """Scoring failed for good (configuration problem or retries exhausted)."""


class RetryableScoringError(ScoringError):
    """Transient backend failure; the caller may retry."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class ScoreParseError(RetryableScoringError):
    """The model reply carried no numeric token."""

    def __init__(self, raw_text: str):
        super().__init__(f"no numeric score in model output: {raw_text!r}")
        self.raw_text = raw_text


class ScorerConfigError(ScoringError):
    """Backend misconfiguration detected at startup, e.g. missing credentials."""


@dataclass(frozen=True)
class ScoreRequest:
    """One scoring job: a single context for support, a context pair for alignment."""

    kind: ScoreKind
    primary: CommentContext
    secondary: CommentContext | None = None

    def __post_init__(self) -> None:
        if self.kind is ScoreKind.ALIGNMENT and self.secondary is None:
            raise ValueError("alignment requests need two contexts")
        if self.kind is ScoreKind.SUPPORT and self.secondary is not None:
            raise ValueError("support requests take exactly one context")


def _context_payload(ctx: CommentContext) -> dict[str, Any]:
    return {
        "message": comment_payload(ctx.message),
        "parent": comment_payload(ctx.parent),
        "ancestors": [comment_payload(a) for a in ctx.ancestors],
    }


def canonical_request_text(request: ScoreRequest) -> str:
    """Stable serialization of a request's content; the basis of cache keys."""
    payload: dict[str, Any] = {
        "kind": request.kind.value,
        "primary": _context_payload(request.primary),
    }
    if request.secondary is not None:
        payload["secondary"] = _context_payload(request.secondary)
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def cache_key(request: ScoreRequest) -> str:
    return hashlib.sha256(canonical_request_text(request).encode("utf-8")).hexdigest()


# The reply must be machine-checkable, so a bare numeric token is demanded;
# parse_model_output() snaps stray numbers back onto the grid.
_OUTPUT_CONTRACT = "Respond with exactly one of the five listed numbers as a bare token, and nothing else."

SUPPORT_SYSTEM_PROMPT = f"""You'll receive:

- message: a comment in a Reddit thread

- parent: message's direct parent

- ancestors: the thread's previous post/comments (in chronological order, may be incomplete)

Evaluate how much the message supports the parent message. Ancestors provide contextualization.

Output format:

-1: vehemently opposes parent

-0.5: opposes parent with restraint

0: neutral

0.5: supports parent with restraint

1: passionately supports parent

{_OUTPUT_CONTRACT}"""

ALIGNMENT_SYSTEM_PROMPT = f"""You'll receive two comment_contexts, each containing:

- message: comment in a Reddit thread

- parent: message's direct parent

- ancestors: the thread's previous post/comments (in chronological order, may be incomplete)

Evaluate how much the two messages' underlying opinions align, like an n-dimensional dot product.

Parents and ancestors provide contextualization.

Output format. The two messages' opinions...

-1: disagree

-0.5: might disagree

0: are independent, despite topic overlap

0.5: agree with restraint

1: ardently agree

Guidelines:

- Passionate opinions in similar topics may still be orthogonal: EVs make city streets way quieter. Mining for EV batteries wrecks ecosystems and exploits workers.

- Compare opinions, not facts. Opinions may be implicit, or expressed through tone.

{_OUTPUT_CONTRACT}"""


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str


def _user_payload(payload: dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False)


def build_support_prompt(ctx: CommentContext) -> Prompt:
    """Support prompt for one context; byte-stable for identical inputs."""
    return Prompt(system=SUPPORT_SYSTEM_PROMPT, user=_user_payload(_context_payload(ctx)))


def build_alignment_prompt(ctx_i: CommentContext, ctx_j: CommentContext) -> Prompt:
    """Alignment prompt for a context pair, serialized in the caller's (i, j) order."""
    payload = {"comment_contexts": [_context_payload(ctx_i), _context_payload(ctx_j)]}
    return Prompt(system=ALIGNMENT_SYSTEM_PROMPT, user=_user_payload(payload))


def build_prompt(request: ScoreRequest) -> Prompt:
    if request.kind is ScoreKind.SUPPORT:
        return build_support_prompt(request.primary)
    assert request.secondary is not None
    return build_alignment_prompt(request.primary, request.secondary)


_NUMBER = re.compile(r"-?(?:\d+\.?\d*|\.\d+)")


def snap_to_level(x: float) -> ScoreLevel:
    """Nearest of the five levels; exact-halfway ties resolve toward 0."""
    best = min(SCORE_LEVELS, key=lambda level: (abs(x - level), abs(level)))
    return ScoreLevel(best)


def parse_model_output(text: str) -> ScoreLevel:
    """Extract the first numeric token and snap it onto the five-level grid.

    Raises ScoreParseError (retryable) when the reply contains no number.
    """
    match = _NUMBER.search(text)
    if match is None:
        raise ScoreParseError(text)
    return snap_to_level(float(match.group()))


class ScorerBackend(Protocol):
    provider_id: str
    calls: int

    def score_request(self, request: ScoreRequest) -> ScoreLevel: ...


def mock_score(request: ScoreRequest) -> ScoreLevel:
    """Deterministic stand-in scorer: hash the canonical request text onto the grid.

    Pure function of request content, uniform over the five levels, stable
    across runs and platforms. The request kind participates in the hash, so
    support and alignment scores of the same text are independent.
    """
    digest = hashlib.sha256(canonical_request_text(request).encode("utf-8")).digest()
    index = int.from_bytes(digest[:8], "big") % len(SCORE_LEVELS)
    return ScoreLevel(SCORE_LEVELS[index])


class MockScorer:
    provider_id = "mock"

    def __init__(self) -> None:
        self.calls = 0
        self._lock = threading.Lock()

    def score_request(self, request: ScoreRequest) -> ScoreLevel:
        with self._lock:
            self.calls += 1
        return mock_score(request)


class RemoteScorer:
    """Chat-completion-style HTTP backend.

    The credential is taken from the GRAVWELL_API_KEY environment variable
    unless passed explicitly; a missing credential fails construction, not
    individual calls. Rate limits and 5xx replies surface as retryable
    errors carrying any server-provided retry hint.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 30.0,
        session: Any = None,
    ) -> None:
        key = api_key or os.environ.get(API_KEY_ENV, "")
        if not key:
            raise ScorerConfigError(f"remote scorer needs a credential; set {API_KEY_ENV}")
        if not base_url or not model:
            raise ScorerConfigError("remote scorer needs base_url and model")
        self._key = key
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.provider_id = f"remote:{model}"
        self.calls = 0
        self._lock = threading.Lock()
        self._session = session if session is not None else requests.Session()

    def score_request(self, request: ScoreRequest) -> ScoreLevel:
        prompt = build_prompt(request)
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        }
        with self._lock:
            self.calls += 1
        try:
            response = self._session.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self._key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise RetryableScoringError(f"scoring request failed: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise RetryableScoringError(
                f"scoring endpoint returned {response.status_code}",
                retry_after=_retry_after_hint(response),
            )
        if response.status_code != 200:
            raise ScoringError(
                f"scoring endpoint returned {response.status_code}: {response.text[:200]}"
            )
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RetryableScoringError(f"malformed scoring response: {exc}") from exc
        return parse_model_output(str(content))


def _retry_after_hint(response: Any) -> float | None:
    raw = response.headers.get("Retry-After") if hasattr(response, "headers") else None
    if raw is None:
        return None
    try:
        return max(0.0, float(raw))
    except (TypeError, ValueError):
        return None


@dataclass(frozen=True)
class CacheEntry:
    key: str
    value: ScoreLevel
    model_id: str
    created_utc: int


class ScoreCache:
    """Append-only JSON Lines score store; the last write for a key wins.

    With path=None the cache lives in memory only. Unreadable lines (e.g. a
    crash-torn tail) are skipped on load.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, ScoreLevel] = {}
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
                    value = ScoreLevel(float(record["value"]))
                except (ValueError, KeyError, TypeError):
                    continue
                self._entries[key] = value

    def get(self, key: str) -> ScoreLevel | None:
        return self._entries.get(key)

    def put(self, key: str, value: ScoreLevel, model_id: str) -> None:
        entry = {
            "key": key,
            "value": float(value),
            "model_id": model_id,
            "created_utc": int(time.time()),
        }
        with self._lock:
            self._entries[key] = value
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(entry, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries


def score(
    request: ScoreRequest,
    scorer: ScorerBackend,
    cache: ScoreCache | None = None,
    *,
    retries: int = 3,
    sleeper: Callable[[float], None] = time.sleep,
) -> ScoreLevel:
    """Score one request through the cache.

    A cache hit returns without touching the backend. On a miss the backend
    is invoked with up to `retries` retries on retryable errors (exponential
    backoff, honoring server retry hints), and the result is persisted.
    """
    key = cache_key(request)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit

    delay = 0.5
    last: RetryableScoringError | None = None
    value: ScoreLevel | None = None
    for attempt in range(retries + 1):
        if attempt:
            assert last is not None
            sleeper(last.retry_after if last.retry_after is not None else delay)
            delay *= 2
        try:
            value = scorer.score_request(request)
            break
        except RetryableScoringError as exc:
            last = exc
    if value is None:
        raise ScoringError(f"scoring failed after {retries} retries: {last}") from last

    if cache is not None:
        cache.put(key, value, scorer.provider_id)
    return value


def score_many(
    requests_: Sequence[ScoreRequest],
    scorer: ScorerBackend,
    cache: ScoreCache | None = None,
    *,
    max_in_flight: int = 1,
    retries: int = 3,
    sleeper: Callable[[float], None] = time.sleep,
) -> list[ScoreLevel | ScoringError]:
    """Score a batch, bounding in-flight backend calls.

    Results come back in request order; failed requests yield the
    ScoringError instead of raising, so callers can skip and count them.
    """

    def one(request: ScoreRequest) -> ScoreLevel | ScoringError:
        try:
            return score(request, scorer, cache, retries=retries, sleeper=sleeper)
        except ScoringError as exc:
            return exc

    if max_in_flight <= 1 or len(requests_) <= 1:
        return [one(r) for r in requests_]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, requests_))
