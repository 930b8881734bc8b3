"""Run configuration: one strict JSON document.

Unknown keys are rejected so typos fail loudly, and every numeric setting
is checked against its documented domain. The only thing that ever comes
from the environment is the API credential (GRAVWELL_API_KEY).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .gravity import EXIT_DIRECTIONS

BACKENDS = ("mock", "remote")


class ConfigError(Exception):
    pass


def _require_keys(section: str, data: dict[str, Any], allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(sorted(unknown))}")


def _positive(section: str, name: str, value: float) -> float:
    value = float(value)
    if value <= 0:
        raise ConfigError(f"{section}.{name} must be positive, got {value}")
    return value


@dataclass
class BackendSettings:
    """Shared shape of the scorer and embedder backend sections."""

    backend: str = "mock"
    base_url: str = ""
    model: str = ""
    max_in_flight: int = 1
    retries: int = 3
    dim: int = 64  # embedder only; ignored by the scorer

    @classmethod
    def from_dict(cls, section: str, data: dict[str, Any]) -> BackendSettings:
        _require_keys(section, data, {"backend", "base_url", "model", "max_in_flight", "retries", "dim"})
        settings = cls(
            backend=str(data.get("backend", "mock")),
            base_url=str(data.get("base_url", "")),
            model=str(data.get("model", "")),
            max_in_flight=int(data.get("max_in_flight", 1)),
            retries=int(data.get("retries", 3)),
            dim=int(data.get("dim", 64)),
        )
        if settings.backend not in BACKENDS:
            raise ConfigError(f"{section}.backend must be one of {BACKENDS}, got {settings.backend!r}")
        if settings.max_in_flight < 1:
            raise ConfigError(f"{section}.max_in_flight must be >= 1")
        if settings.retries < 0:
            raise ConfigError(f"{section}.retries must be >= 0")
        if settings.dim < 1:
            raise ConfigError(f"{section}.dim must be >= 1")
        if settings.backend == "remote" and (not settings.base_url or not settings.model):
            raise ConfigError(f"{section} remote backend needs base_url and model")
        return settings


_TOP_LEVEL_KEYS = {
    "input",
    "subreddits",
    "scorer",
    "embedder",
    "score_cache",
    "embedding_cache",
    "tm",
    "tsm",
    "tm_overrides",
    "tsm_overrides",
    "top_k",
    "max_ancestors",
    "pair_cap",
    "seed",
    "exit_direction",
    "out_dir",
}


@dataclass
class AnalysisConfig:
    """Everything one analysis run needs, resolvable from a single JSON file."""

    inputs: list[str] = field(default_factory=list)
    subreddits: list[str] = field(default_factory=list)
    scorer: BackendSettings = field(default_factory=BackendSettings)
    embedder: BackendSettings = field(default_factory=BackendSettings)
    score_cache: str | None = None
    embedding_cache: str | None = None
    tm: float = 1.0
    tsm: float = 1.0
    tm_overrides: dict[str, float] = field(default_factory=dict)
    tsm_overrides: dict[str, float] = field(default_factory=dict)
    top_k: int = 25
    max_ancestors: int = 10
    pair_cap: int | None = None
    seed: int = 0
    exit_direction: str = "ascending"
    out_dir: str = "out"

    def tm_for(self, subreddit: str) -> float:
        return self.tm_overrides.get(subreddit, self.tm)

    def tsm_for(self, subreddit: str) -> float:
        return self.tsm_overrides.get(subreddit, self.tsm)


def config_from_dict(data: dict[str, Any]) -> AnalysisConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _require_keys("config", data, _TOP_LEVEL_KEYS)

    raw_input = data.get("input", [])
    if isinstance(raw_input, str):
        inputs = [raw_input]
    elif isinstance(raw_input, list) and all(isinstance(p, str) for p in raw_input):
        inputs = list(raw_input)
    else:
        raise ConfigError("config.input must be a path or a list of paths")

    subreddits = data.get("subreddits", [])
    if not (isinstance(subreddits, list) and all(isinstance(s, str) for s in subreddits)):
        raise ConfigError("config.subreddits must be a list of names")

    scorer = BackendSettings.from_dict("scorer", dict(data.get("scorer", {})))
    embedder = BackendSettings.from_dict("embedder", dict(data.get("embedder", {})))

    def override_map(name: str) -> dict[str, float]:
        raw = dict(data.get(name, {}))
        return {str(k): _positive(name, k, v) for k, v in raw.items()}

    config = AnalysisConfig(
        inputs=inputs,
        subreddits=list(subreddits),
        scorer=scorer,
        embedder=embedder,
        score_cache=str(data["score_cache"]) if data.get("score_cache") else None,
        embedding_cache=str(data["embedding_cache"]) if data.get("embedding_cache") else None,
        tm=_positive("config", "tm", data.get("tm", 1.0)),
        tsm=_positive("config", "tsm", data.get("tsm", 1.0)),
        tm_overrides=override_map("tm_overrides"),
        tsm_overrides=override_map("tsm_overrides"),
        top_k=int(data.get("top_k", 25)),
        max_ancestors=int(data.get("max_ancestors", 10)),
        pair_cap=int(data["pair_cap"]) if data.get("pair_cap") is not None else None,
        seed=int(data.get("seed", 0)),
        exit_direction=str(data.get("exit_direction", "ascending")),
        out_dir=str(data.get("out_dir", "out")),
    )
    if config.top_k < 1:
        raise ConfigError("config.top_k must be >= 1")
    if config.max_ancestors < 0:
        raise ConfigError("config.max_ancestors must be >= 0")
    if config.pair_cap is not None and config.pair_cap < 1:
        raise ConfigError("config.pair_cap must be >= 1 when set")
    if config.exit_direction not in EXIT_DIRECTIONS:
        raise ConfigError(f"config.exit_direction must be one of {EXIT_DIRECTIONS}")
    return config


def load_config(path: str | Path) -> AnalysisConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
