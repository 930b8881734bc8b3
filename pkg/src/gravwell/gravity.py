"""Subgroup pull modeling.

A community is summarized by its mass (distinct active users) and the
centroid of its top-engagement content; a user's ideological distance to
that centroid feeds an inverse-square pull force, whose ordering over
users yields a simulated exit order.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .embedding import Embedder, EmbeddingCache, EmbeddingError, embed_many
from .ingest import Comment, UserHistory
from .ranking import rank_mapping

DISTANCE_FLOOR = 1e-6

EXIT_DIRECTIONS = ("ascending", "descending")


class AnalysisError(Exception):
    """A subreddit or user cannot be modeled (no users, no embeddable content)."""


@dataclass(frozen=True)
class SubgroupModel:
    """One community's mass, content centroid, and platform/topic modifiers."""

    subreddit: str
    mass: float
    centroid: np.ndarray
    tm: float = 1.0
    tsm: float = 1.0
    top_k: int = 25

    def __post_init__(self) -> None:
        if self.mass <= 0 or self.tm <= 0 or self.tsm <= 0:
            raise ValueError("mass, tm, and tsm must all be positive")


@dataclass(frozen=True)
class PullForce:
    user: str
    subreddit: str
    m_user: float
    d: float
    f_w: float


def subgroup_mass(comments: Sequence[Comment], subreddit: str) -> float:
    """Community mass: the count of distinct authors seen in the subreddit."""
    authors = {c.author for c in comments if c.subreddit == subreddit}
    if not authors:
        raise AnalysisError(f"no users observed in subreddit {subreddit!r}")
    return float(len(authors))


def _mean_embedding(
    bodies: Sequence[str],
    embedder: Embedder,
    cache: EmbeddingCache | None,
    *,
    max_in_flight: int,
    retries: int,
    sleeper: Callable[[float], None],
) -> np.ndarray | None:
    results = embed_many(
        bodies, embedder, cache, max_in_flight=max_in_flight, retries=retries, sleeper=sleeper
    )
    vectors = [
        r for r in results if not isinstance(r, EmbeddingError) and float(np.linalg.norm(r)) > 0.0
    ]
    if not vectors:
        return None
    return np.mean(np.stack(vectors), axis=0)


def subgroup_centroid(
    comments: Sequence[Comment],
    top_k: int,
    embedder: Embedder,
    cache: EmbeddingCache | None = None,
    *,
    max_in_flight: int = 1,
    retries: int = 3,
    sleeper: Callable[[float], None] = time.sleep,
) -> np.ndarray:
    """Mean embedding of the top_k highest-engagement comments (ties by id)."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    top = sorted(comments, key=lambda c: (-c.engagement, c.id))[:top_k]
    centroid = _mean_embedding(
        [c.body for c in top],
        embedder,
        cache,
        max_in_flight=max_in_flight,
        retries=retries,
        sleeper=sleeper,
    )
    if centroid is None or float(np.linalg.norm(centroid)) == 0.0:
        raise AnalysisError("no embeddable top content for subgroup centroid")
    return centroid


def user_embedding(
    history: UserHistory,
    embedder: Embedder,
    cache: EmbeddingCache | None = None,
    *,
    max_in_flight: int = 1,
    retries: int = 3,
    sleeper: Callable[[float], None] = time.sleep,
) -> np.ndarray:
    """Mean embedding of the user's own message bodies.

    Raises AnalysisError when the history is empty or nothing embeds; the
    caller must then drop the user from the force ranking.
    """
    if not history.entries:
        raise AnalysisError(f"user {history.user!r} has no history to embed")
    vec = _mean_embedding(
        [entry.context.message.body for entry in history.entries],
        embedder,
        cache,
        max_in_flight=max_in_flight,
        retries=retries,
        sleeper=sleeper,
    )
    if vec is None or float(np.linalg.norm(vec)) == 0.0:
        raise AnalysisError(f"user {history.user!r} has no embeddable content")
    return vec


def ideological_distance(u: np.ndarray, g: np.ndarray) -> float:
    """Cosine distance clamped away from zero: max(1e-6, 1 - cos(u, g))."""
    if u.shape != g.shape:
        raise ValueError(f"embedding dims differ: {u.shape} vs {g.shape}")
    nu = float(np.linalg.norm(u))
    ng = float(np.linalg.norm(g))
    if nu == 0.0 or ng == 0.0:
        raise ValueError("ideological distance is undefined for zero-norm embeddings")
    cos = float(np.dot(u, g)) / (nu * ng)
    cos = max(-1.0, min(1.0, cos))
    return max(DISTANCE_FLOOR, 1.0 - cos)


def pull_force(model: SubgroupModel, m_user: float, d: float) -> float:
    """Inverse-square pull: mass * m_user * TM * TSM / d^2 (unit constant)."""
    if m_user <= 0:
        raise ValueError(f"m_user must be positive, got {m_user!r}")
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d!r}")
    return model.mass * m_user * model.tm * model.tsm / (d * d)


def simulate_exit_order(
    forces: Sequence[PullForce],
    direction: str = "ascending",
) -> dict[str, float]:
    """Predicted exit ranks from pull forces, one force per user.

    Ascending (the default) reads weak pull as early exit: rank 1 is the
    user predicted to leave first. Descending flips the reading for
    sensitivity runs. Exact force ties share the average rank.
    """
    if direction not in EXIT_DIRECTIONS:
        raise ValueError(f"exit direction must be one of {EXIT_DIRECTIONS}, got {direction!r}")
    scores: dict[str, float] = {}
    for force in forces:
        if force.user in scores:
            raise ValueError(f"duplicate force entry for user {force.user!r}")
        scores[force.user] = force.f_w
    return rank_mapping(scores, descending=(direction == "descending"))
