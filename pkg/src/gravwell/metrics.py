"""Rank-correlation and rater-agreement statistics.

Tie-aware Spearman correlation with one-sided Student-t p-values (the t
survival function is evaluated through the regularized incomplete beta),
plus quadratic-weighted kappa and range-normalized MAE for comparing human
and model scores.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .ranking import average_ranks
from .scoring import SCORE_LEVELS, ScoreKind, ScoreLevel

INSUFFICIENT_DATA_MARKER = "insufficient_data"

_SCORE_RANGE = SCORE_LEVELS[-1] - SCORE_LEVELS[0]  # 2.0
_CATEGORIES = len(SCORE_LEVELS)


class UndefinedStatisticError(ValueError):
    """The requested statistic does not exist for this input (n too small, zero variance)."""


@dataclass(frozen=True)
class RankSeries:
    """Item ids with average-convention ranks (sum must be n(n+1)/2)."""

    pairs: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if not self.pairs:
            raise ValueError("a rank series needs at least one item")
        ids = [item for item, _ in self.pairs]
        if len(set(ids)) != len(ids):
            raise ValueError("rank series items must be unique")
        n = len(self.pairs)
        total = math.fsum(rank for _, rank in self.pairs)
        if abs(total - n * (n + 1) / 2.0) > 1e-9 * max(1, n):
            raise ValueError(
                f"ranks must follow the average-rank convention; sum {total} != {n*(n+1)/2}"
            )

    @classmethod
    def from_mapping(cls, ranks: Mapping[str, float]) -> RankSeries:
        return cls(tuple(sorted((str(k), float(v)) for k, v in ranks.items())))

    @classmethod
    def from_scores(cls, scores: Mapping[str, float]) -> RankSeries:
        """Rank raw scores ascending with average ties, then wrap them."""
        keys = sorted(scores)
        ranks = average_ranks([scores[k] for k in keys])
        return cls(tuple(zip(keys, ranks)))

    @property
    def n(self) -> int:
        return len(self.pairs)

    def as_dict(self) -> dict[str, float]:
        return dict(self.pairs)


def spearman_rho(a: RankSeries, b: RankSeries) -> float:
    """Tie-aware Spearman correlation: Pearson correlation of the rank vectors."""
    da, db = a.as_dict(), b.as_dict()
    if set(da) != set(db):
        raise ValueError("rank series must cover the same items")
    if a.n < 2:
        raise UndefinedStatisticError("rank correlation needs at least two items")
    ids = sorted(da)
    x = [da[i] for i in ids]
    y = [db[i] for i in ids]
    mx = math.fsum(x) / len(x)
    my = math.fsum(y) / len(y)
    cov = math.fsum((xi - mx) * (yi - my) for xi, yi in zip(x, y))
    var_x = math.fsum((xi - mx) ** 2 for xi in x)
    var_y = math.fsum((yi - my) ** 2 for yi in y)
    if var_x == 0.0 or var_y == 0.0:
        raise UndefinedStatisticError("rank correlation undefined at zero rank variance")
    return cov / math.sqrt(var_x * var_y)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz iteration)."""
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), accurate to roughly machine precision over (0, 1)."""
    if a <= 0 or b <= 0:
        raise ValueError("incomplete beta requires positive shape parameters")
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"incomplete beta argument must lie in [0, 1], got {x!r}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # Use the side of the symmetry relation where the fraction converges fast.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Survival function P(T > t) of Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = df / (df + t * t)
    half = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return half if t >= 0 else 1.0 - half


def spearman_p_value(rho: float, n: int) -> float:
    """One-sided (positive-association) p-value for a Spearman coefficient.

    Uses the t approximation t = rho * sqrt((n-2) / (1-rho^2)) with n-2
    degrees of freedom. Perfect correlations return 0 or 1 by convention.
    """
    if n < 3:
        raise UndefinedStatisticError("p-value needs at least three items")
    if not (-1.0 <= rho <= 1.0):
        raise ValueError(f"correlation must lie in [-1, 1], got {rho!r}")
    if rho >= 1.0:
        return 0.0
    if rho <= -1.0:
        return 1.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return student_t_sf(t, n - 2)


@dataclass(frozen=True)
class CalibrationSample:
    """One human/model score pair for the same prompt."""

    human: ScoreLevel
    ai: ScoreLevel
    kind: ScoreKind


def _category(level: ScoreLevel) -> int:
    # Maps the grid -1, -0.5, 0, 0.5, 1 onto ordinal categories 0..4.
    return round((float(level) + 1.0) * 2.0)


def quadratic_weighted_kappa(samples: Sequence[CalibrationSample]) -> float:
    """Quadratic-weighted kappa over the five ordinal categories.

    Weights are (i - j)^2 / 16; expected disagreement comes from the outer
    product of the two raters' marginals. When observed and expected
    weighted disagreement are both zero (a single shared category), the
    agreement is perfect and kappa is 1 by convention.
    """
    if not samples:
        raise ValueError("kappa needs at least one sample")
    k = _CATEGORIES
    observed = [[0] * k for _ in range(k)]
    human_marginal = [0] * k
    ai_marginal = [0] * k
    for sample in samples:
        i = _category(sample.human)
        j = _category(sample.ai)
        observed[i][j] += 1
        human_marginal[i] += 1
        ai_marginal[j] += 1
    total = len(samples)
    num = 0.0
    den = 0.0
    for i in range(k):
        for j in range(k):
            weight = (i - j) ** 2 / (k - 1) ** 2
            num += weight * observed[i][j]
            den += weight * human_marginal[i] * ai_marginal[j] / total
    if den == 0.0:
        return 1.0
    return 1.0 - num / den


def normalized_mae(samples: Sequence[CalibrationSample]) -> float:
    """Mean absolute human/model difference as a fraction of the score range."""
    if not samples:
        raise ValueError("NMAE needs at least one sample")
    mae = math.fsum(abs(float(s.human) - float(s.ai)) for s in samples) / len(samples)
    return mae / _SCORE_RANGE


def kappa_band(kappa: float) -> str:
    """Verbal agreement band for a kappa value."""
    if kappa < 0.2:
        return "slight"
    if kappa < 0.4:
        return "fair"
    if kappa < 0.6:
        return "moderate"
    if kappa < 0.8:
        return "substantial"
    return "near-perfect"


@dataclass(frozen=True)
class SubredditEvaluation:
    """Predicted-vs-actual exit agreement for one subreddit."""

    subreddit: str
    n_common: int
    rho: float | None
    p_value: float | None

    @property
    def insufficient(self) -> bool:
        return self.rho is None


def evaluate_subreddit(
    subreddit: str,
    predicted: Mapping[str, float],
    actual: Mapping[str, float],
    *,
    min_common: int = 3,
) -> SubredditEvaluation:
    """Correlate two rankings on their shared users.

    Both inputs map user to rank; the intersection is re-ranked with average
    ties before correlating. Too few shared users (or degenerate ranks)
    yields an insufficient-data result instead of an error.
    """
    common = set(predicted) & set(actual)
    n_common = len(common)
    if n_common < min_common:
        return SubredditEvaluation(subreddit, n_common, None, None)
    a = RankSeries.from_scores({u: predicted[u] for u in common})
    b = RankSeries.from_scores({u: actual[u] for u in common})
    try:
        rho = spearman_rho(a, b)
    except UndefinedStatisticError:
        return SubredditEvaluation(subreddit, n_common, None, None)
    return SubredditEvaluation(subreddit, n_common, rho, spearman_p_value(rho, n_common))
