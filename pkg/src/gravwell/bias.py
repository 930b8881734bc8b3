"""Per-user confirmation-bias mass.

A user's stance scores toward the parents they reply to are combined
pairwise with the alignment between those parents, folded through a
sign-preserving spread product, averaged, and scaled into the multiplier
range [0.5, 2] used by the pull-force model.
"""

from __future__ import annotations

import hashlib
import math
import random
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

from .ingest import UserHistory
from .scoring import (
    ScoreCache,
    ScoreKind,
    ScoreLevel,
    ScoreRequest,
    ScorerBackend,
    ScoringError,
    score_many,
)

NEUTRAL_BIAS = 1.0
BIAS_MIN = 0.5
BIAS_MAX = 2.0


def otimes(a: float, b: float) -> float:
    """Sign-preserving spread product: (ab)(1 - ln|ab|), and 0 when ab = 0.

    An ordinary product of two Uniform[-1,1] draws piles up near zero; this
    operation spreads it back out, because x(1 - ln x) is exactly the CDF of
    the product of two Uniform[0,1] variables. It is symmetric, odd in each
    argument, and closed on [-1, 1], but not associative.
    """
    if not (-1.0 <= a <= 1.0) or not (-1.0 <= b <= 1.0):
        raise ValueError(f"otimes operands must lie in [-1, 1], got a={a!r}, b={b!r}")
    ab = a * b
    if ab == 0.0:
        return 0.0
    return ab * (1.0 - math.log(abs(ab)))


def pair_contribution(sup_i: float, sup_j: float, align_ij: float) -> float:
    """Net bias contribution of one parent pair: (sup_i ⊗ sup_j) ⊗ align_ij.

    Positive when the user's stances and the parents' alignment tell a
    validating story (same stance on aligned parents, or opposite strong
    stances on misaligned parents); negative in the invalidating cases.
    The fold is fixed left-to-right since ⊗ is not associative.
    """
    si = float(ScoreLevel(float(sup_i)))
    sj = float(ScoreLevel(float(sup_j)))
    al = float(ScoreLevel(float(align_ij)))
    return otimes(otimes(si, sj), al)


def bias_unweighted(
    supports: Sequence[float],
    alignments: Mapping[tuple[int, int], float],
) -> tuple[float, int]:
    """Mean pair contribution over the successfully scored pairs.

    `alignments` maps index pairs (i, j), i < j into the support list, to
    alignment levels; pairs missing from the map (scoring failures, or pairs
    not sampled) are simply excluded from the mean. Fewer than two supports
    yields the (0.0, 0) sentinel that normalize_bias routes to neutral.
    """
    n = len(supports)
    if n < 2:
        return 0.0, 0
    contributions: list[float] = []
    for (i, j), align in sorted(alignments.items()):
        if not (0 <= i < j < n):
            raise ValueError(f"alignment pair ({i}, {j}) out of range for {n} supports")
        contributions.append(pair_contribution(supports[i], supports[j], align))
    if not contributions:
        return 0.0, 0
    return math.fsum(contributions) / len(contributions), len(contributions)


def normalize_bias(m_unweighted: float, n: int, pair_count: int) -> float:
    """Scale the mean contribution from [-1, 1] into [0.5, 2].

    Users without any scored pair (fewer than two contexts, or every pair
    failed) get exactly the neutral multiplier 1.
    """
    if not (-1.0 <= m_unweighted <= 1.0):
        raise ValueError(f"m_unweighted must lie in [-1, 1], got {m_unweighted!r}")
    if n >= 2 and pair_count > 0:
        return 1.25 + 0.75 * m_unweighted
    return NEUTRAL_BIAS


@dataclass(frozen=True)
class PairContribution:
    """One scored parent pair and its folded contribution."""

    i: int
    j: int
    support_i: ScoreLevel
    support_j: ScoreLevel
    alignment: ScoreLevel
    contribution: float

    def __post_init__(self) -> None:
        if not self.i < self.j:
            raise ValueError("pair indices must satisfy i < j")


@dataclass(frozen=True)
class BiasScore:
    """A user's confirmation-bias multiplier and the counts behind it."""

    user: str
    subreddit: str
    n: int
    pair_count: int
    m_unweighted: float
    m_a: float
    failed_supports: int = 0
    failed_pairs: int = 0

    @property
    def failures(self) -> int:
        return self.failed_supports + self.failed_pairs

    def __post_init__(self) -> None:
        if not (BIAS_MIN <= self.m_a <= BIAS_MAX):
            raise ValueError(f"m_a out of range: {self.m_a!r}")
        if not (-1.0 <= self.m_unweighted <= 1.0):
            raise ValueError(f"m_unweighted out of range: {self.m_unweighted!r}")


def _user_seed(seed: int, user: str, subreddit: str) -> int:
    # hash() is salted per process; derive the per-user stream from sha256.
    digest = hashlib.sha256(f"{seed}\x1f{user}\x1f{subreddit}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def compute_user_bias(
    history: UserHistory,
    scorer: ScorerBackend,
    cache: ScoreCache | None = None,
    *,
    pair_cap: int | None = None,
    seed: int = 0,
    max_in_flight: int = 1,
    retries: int = 3,
    sleeper: Callable[[float], None] = time.sleep,
) -> BiasScore:
    """Score a user's history end to end and reduce it to a BiasScore.

    Every entry gets a support score and every pair of scoreable entries an
    alignment score; with pair_cap set, a seeded uniform sample of at most
    pair_cap pairs is scored instead. Per-request scoring failures are
    skipped and counted, never fatal.
    """
    support_requests = [
        ScoreRequest(ScoreKind.SUPPORT, entry.context) for entry in history.entries
    ]
    support_results = score_many(
        support_requests,
        scorer,
        cache,
        max_in_flight=max_in_flight,
        retries=retries,
        sleeper=sleeper,
    )

    scoreable: list[tuple[int, ScoreLevel]] = []  # (entry index, support)
    failed_supports = 0
    for idx, (entry, result) in enumerate(zip(history.entries, support_results)):
        if isinstance(result, ScoringError):
            failed_supports += 1
            continue
        entry.support = result
        scoreable.append((idx, result))

    n = len(scoreable)
    if n < 2:
        return BiasScore(
            user=history.user,
            subreddit=history.subreddit,
            n=n,
            pair_count=0,
            m_unweighted=0.0,
            m_a=normalize_bias(0.0, n, 0),
            failed_supports=failed_supports,
        )

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if pair_cap is not None and 0 < pair_cap < len(pairs):
        rng = random.Random(_user_seed(seed, history.user, history.subreddit))
        pairs = sorted(rng.sample(pairs, pair_cap))

    alignment_requests = [
        ScoreRequest(
            ScoreKind.ALIGNMENT,
            history.entries[scoreable[i][0]].context,
            history.entries[scoreable[j][0]].context,
        )
        for i, j in pairs
    ]
    alignment_results = score_many(
        alignment_requests,
        scorer,
        cache,
        max_in_flight=max_in_flight,
        retries=retries,
        sleeper=sleeper,
    )

    alignments: dict[tuple[int, int], float] = {}
    failed_pairs = 0
    for (i, j), result in zip(pairs, alignment_results):
        if isinstance(result, ScoringError):
            failed_pairs += 1
            continue
        alignments[(i, j)] = float(result)

    supports = [float(level) for _, level in scoreable]
    m_unweighted, pair_count = bias_unweighted(supports, alignments)
    return BiasScore(
        user=history.user,
        subreddit=history.subreddit,
        n=n,
        pair_count=pair_count,
        m_unweighted=m_unweighted,
        m_a=normalize_bias(m_unweighted, n, pair_count),
        failed_supports=failed_supports,
        failed_pairs=failed_pairs,
    )
