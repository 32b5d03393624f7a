"""Set-to-set case similarity over embedding matrices and exact ranking.

Two scores are supported:

* ``median_min_euclidean`` -- each query patch is matched to its nearest
  archive patch; the median of those minimum Euclidean distances is the
  case distance (lower is better). Note the score is intentionally
  asymmetric in (query, archive).
* ``sum_max_cosine`` -- each query patch contributes its best cosine
  similarity against the archive patches; the sum over query patches is
  the case similarity (higher is better).

Ranking is exhaustive and exact: every archive case is scored, sorted by
score with lexicographic case_id tie-breaks. All accumulation happens in
float64 over the float32 stored embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cohort import EmbeddingMatrix

METRICS = ("median_min_euclidean", "sum_max_cosine")

# sort direction per metric: True when smaller scores rank first
LOWER_IS_BETTER = {"median_min_euclidean": True, "sum_max_cosine": False}


@dataclass(frozen=True)
class CaseSignature:
    """A case's mosaic embeddings plus its label."""

    case_id: str
    label: str
    embeddings: EmbeddingMatrix

    def __post_init__(self) -> None:
        if self.embeddings.count < 1:
            raise ValueError(f"case {self.case_id}: signature needs at least one embedding row")
        norms = np.linalg.norm(self.embeddings.rows.astype(np.float64), axis=1)
        if (norms == 0.0).any():
            raise ValueError(f"case {self.case_id}: zero-norm embedding row (cosine undefined)")


@dataclass(frozen=True)
class Ranking:
    """Archive cases ordered best-first for one query."""

    query_case_id: str
    metric: str
    entries: tuple[tuple[str, float], ...]

    @property
    def lower_is_better(self) -> bool:
        return LOWER_IS_BETTER[self.metric]


def _check_dims(q: CaseSignature, a: CaseSignature) -> None:
    if q.embeddings.dim != a.embeddings.dim:
        raise ValueError(
            f"dim mismatch: {q.case_id} has {q.embeddings.dim}, {a.case_id} has {a.embeddings.dim}"
        )


def median_of_min_distance(q: CaseSignature, a: CaseSignature) -> float:
    """Median over query patches of the nearest-archive-patch distance."""
    _check_dims(q, a)
    qr = q.embeddings.rows.astype(np.float64)
    ar = a.embeddings.rows.astype(np.float64)
    diff = qr[:, None, :] - ar[None, :, :]
    dists = np.sqrt((diff * diff).sum(axis=2))
    return float(np.median(dists.min(axis=1)))


def sum_of_max_cosine(q: CaseSignature, a: CaseSignature) -> float:
    """Sum over query patches of the best cosine similarity in the archive."""
    _check_dims(q, a)
    qr = q.embeddings.rows.astype(np.float64)
    ar = a.embeddings.rows.astype(np.float64)
    qu = qr / np.linalg.norm(qr, axis=1, keepdims=True)
    au = ar / np.linalg.norm(ar, axis=1, keepdims=True)
    sims = qu @ au.T
    return float(sims.max(axis=1).sum())


SCORE_FUNCTIONS = {
    "median_min_euclidean": median_of_min_distance,
    "sum_max_cosine": sum_of_max_cosine,
}


def score_case_pair(q: CaseSignature, a: CaseSignature, metric: str) -> float:
    try:
        fn = SCORE_FUNCTIONS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    return fn(q, a)


def rank_archive(
    q: CaseSignature, archive: Sequence[CaseSignature], metric: str
) -> Ranking:
    """Score every archive case against the query, exactly, and sort.

    Ties are broken by case_id so orderings never depend on evaluation
    order. The archive must not contain the query case.
    """
    if not archive:
        raise ValueError(f"query {q.case_id}: empty archive")
    if any(a.case_id == q.case_id for a in archive):
        raise ValueError(f"query {q.case_id} present in its own archive")
    scored = [(a.case_id, score_case_pair(q, a, metric)) for a in archive]
    if LOWER_IS_BETTER[metric]:
        scored.sort(key=lambda e: (e[1], e[0]))
    else:
        scored.sort(key=lambda e: (-e[1], e[0]))
    return Ranking(query_case_id=q.case_id, metric=metric, entries=tuple(scored))
