"""Independent reference implementations used as test oracles.

Everything here is deliberately naive pure Python (explicit loops,
math module, no numpy) so the production code paths are checked
against a second, unrelated route.
"""

from __future__ import annotations

import math


def splice_reference(descriptors: list[tuple[float, ...]], s_t: float) -> list[int]:
    """Quadratic transcription of the sequential pruning rules.

    Returns indices admitted to the collage, in admission order. The
    distance accumulation order (left-to-right over the 6 components)
    matches the production path bit for bit.
    """
    n = len(descriptors)
    active = [True] * n
    kept: list[int] = []
    while True:
        ref = next((i for i in range(n) if active[i]), None)
        if ref is None:
            break
        active[ref] = False
        kept.append(ref)
        others = [j for j in range(n) if active[j]]
        if not others:
            continue
        dists = []
        for j in others:
            s = (descriptors[j][0] - descriptors[ref][0]) ** 2
            for c in range(1, 6):
                s = s + (descriptors[j][c] - descriptors[ref][c]) ** 2
            dists.append(math.sqrt(s))
        m = len(dists)
        rank = min(max(math.ceil(s_t / 100.0 * m) - 1, 0), m - 1)
        threshold = sorted(dists)[rank]
        for j, d in zip(others, dists):
            if d < threshold or d == 0.0:
                active[j] = False
    return kept


def _euclidean(u: list[float], v: list[float]) -> float:
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))


def _cosine(u: list[float], v: list[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    if n % 2:
        return ordered[n // 2]
    return (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0


def median_min_reference(q_rows: list[list[float]], a_rows: list[list[float]]) -> float:
    minima = [min(_euclidean(q, a) for a in a_rows) for q in q_rows]
    return _median(minima)


def sum_max_cosine_reference(q_rows: list[list[float]], a_rows: list[list[float]]) -> float:
    return sum(max(_cosine(q, a) for a in a_rows) for q in q_rows)


def rank_reference(
    query_id: str, rows_by_case: dict[str, list[list[float]]], metric: str
) -> list[str]:
    """Ordered archive case ids from an explicit double loop over all pairs."""
    q_rows = rows_by_case[query_id]
    scored = []
    for case_id, a_rows in rows_by_case.items():
        if case_id == query_id:
            continue
        if metric == "median_min_euclidean":
            scored.append((median_min_reference(q_rows, a_rows), case_id))
        elif metric == "sum_max_cosine":
            scored.append((-sum_max_cosine_reference(q_rows, a_rows), case_id))
        else:
            raise ValueError(metric)
    scored.sort()
    return [case_id for _, case_id in scored]
