"""Average-rank assignment shared by exit orders, force tables, and rank stats."""

from __future__ import annotations

from collections.abc import Mapping, Sequence


def average_ranks(values: Sequence[float]) -> list[float]:
    """Rank values ascending, 1-based; exact ties share the mean of their positions.

    The returned ranks always sum to n(n+1)/2, so they form a valid
    average-rank ranking regardless of ties.
    """
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j + 2) / 2.0  # positions i+1 .. j+1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def rank_mapping(scores: Mapping[str, float], descending: bool = False) -> dict[str, float]:
    """Rank keyed scores with average ties; rank 1.0 goes to the smallest score
    (largest when descending)."""
    keys = sorted(scores)
    vals = [scores[k] for k in keys]
    if descending:
        vals = [-v for v in vals]
    return dict(zip(keys, average_ranks(vals)))
