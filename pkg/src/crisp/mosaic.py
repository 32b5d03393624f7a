"""Stage 2: pool a case's collages, k-means in descriptor space, sample.

k-means is implemented here (k-means++ seeding, Lloyd iterations,
Euclidean metric) rather than delegated to a library, so that mosaics
are bit-reproducible for a given seed across platforms and library
versions. Empty clusters are re-seeded with the point farthest from its
assigned centroid, keeping exactly min(K, pool size) non-degenerate
clusters.

From each cluster the max(1, round_half_up(alpha% * size)) members
nearest the centroid are retained; the single-slide baseline mosaic
instead samples its per-cluster quota uniformly at random (seeded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cohort import PatchRecord, descriptor_matrix

KMEANS_MAX_ITER = 300
BASELINE_CLUSTERS = 9
BASELINE_RETENTION_PCT = 5.0


@dataclass(frozen=True)
class MosaicConfig:
    """K: cluster count; alpha: per-cluster retention percentage."""

    k: int
    alpha: float
    seed: int = 724

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if not 0.0 < self.alpha <= 100.0:
            raise ValueError(f"alpha must lie in (0, 100], got {self.alpha}")


@dataclass(frozen=True)
class CaseMosaic:
    case_id: str
    kept: tuple[str, ...]
    cluster_assignments: Mapping[str, int]
    per_cluster_kept: Mapping[int, tuple[str, ...]]


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    n_iter: int
    objective_history: tuple[float, ...]


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: centers drawn with probability proportional to D^2."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0.0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a chosen center
            pick = int(rng.integers(n))
        centroids[i] = points[pick]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def lloyd_kmeans(
    points: np.ndarray, k: int, seed: int, max_iter: int = KMEANS_MAX_ITER
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ init, single run, fixed seed.

    Converges when assignments stop changing or max_iter elapses. The
    recorded objective (within-cluster sum of squares, measured after
    each assignment step) is non-increasing.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        raise ValueError("k-means on an empty point set")
    if k < 1 or k > n:
        raise ValueError(f"cluster count {k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    prev_labels: np.ndarray | None = None
    labels = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        if it > 0:
            for c in range(k):
                centroids[c] = points[labels == c].mean(axis=0)
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        point_cost = d2[np.arange(n), labels]
        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            spent = np.zeros(n, dtype=bool)
            for empty in empties:
                # donors must leave their old cluster non-empty
                eligible = (counts[labels] > 1) & ~spent
                donor = int(np.where(eligible, point_cost, -np.inf).argmax())
                counts[labels[donor]] -= 1
                counts[empty] = 1
                centroids[empty] = points[donor]
                labels[donor] = empty
                point_cost[donor] = 0.0
                spent[donor] = True
        history.append(float(point_cost.sum()))
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels
    return KMeansResult(centroids, labels, n_iter, tuple(history))


@dataclass(frozen=True)
class CaseClustering:
    """A case pool's k-means partition with centroid-proximal member order.

    Built once per (pool, K, seed); mosaics for any alpha are prefix
    slices of `ranked_members`, which lets a grid sweep reuse the
    expensive clustering across retention percentages.
    """

    case_id: str
    pool: tuple[PatchRecord, ...]
    labels: np.ndarray
    ranked_members: tuple[tuple[int, ...], ...]


def _rank_members(
    pool: Sequence[PatchRecord], desc: np.ndarray, result: KMeansResult
) -> tuple[tuple[int, ...], ...]:
    """Per cluster, member indices by (centroid distance, slide, raster)."""
    ranked = []
    for c in range(result.centroids.shape[0]):
        members = np.flatnonzero(result.labels == c)
        dists = np.sqrt(((desc[members] - result.centroids[c]) ** 2).sum(axis=1))
        order = sorted(
            range(members.size),
            key=lambda i: (
                dists[i],
                pool[members[i]].slide_id,
                pool[members[i]].grid_y,
                pool[members[i]].grid_x,
            ),
        )
        ranked.append(tuple(int(members[i]) for i in order))
    return tuple(ranked)


def retention_count(alpha: float, cluster_size: int) -> int:
    """max(1, round-half-up of alpha% of the cluster), capped at the cluster."""
    return min(max(1, round_half_up(alpha / 100.0 * cluster_size)), cluster_size)


def cluster_case_pool(
    case_id: str, pool: Sequence[PatchRecord], k: int, seed: int
) -> CaseClustering:
    """k-means a case's pooled collage patches; K is clamped to the pool size."""
    if not pool:
        raise ValueError(f"case {case_id}: empty patch pool (no tissue contributed)")
    desc = descriptor_matrix(pool)
    if not np.isfinite(desc).all():
        raise ValueError(f"case {case_id}: non-finite descriptor in pool")
    k_eff = min(k, len(pool))
    result = lloyd_kmeans(desc, k_eff, seed)
    return CaseClustering(
        case_id=case_id,
        pool=tuple(pool),
        labels=result.labels,
        ranked_members=_rank_members(pool, desc, result),
    )


def sample_mosaic(clustering: CaseClustering, alpha: float) -> CaseMosaic:
    """Keep the alpha% centroid-nearest members of every cluster (min one)."""
    pool = clustering.pool
    kept: list[str] = []
    per_cluster: dict[int, tuple[str, ...]] = {}
    for c, members in enumerate(clustering.ranked_members):
        take = retention_count(alpha, len(members))
        ids = tuple(pool[i].patch_id for i in members[:take])
        per_cluster[c] = ids
        kept.extend(ids)
    assignments = {pool[i].patch_id: int(clustering.labels[i]) for i in range(len(pool))}
    return CaseMosaic(
        case_id=clustering.case_id,
        kept=tuple(kept),
        cluster_assignments=assignments,
        per_cluster_kept=per_cluster,
    )


def build_case_mosaic(
    case_id: str, pool: Sequence[PatchRecord], cfg: MosaicConfig
) -> CaseMosaic:
    """Cluster a case's pooled collage patches and keep the centroid-nearest.

    Every non-empty cluster contributes at least one patch.
    """
    return sample_mosaic(cluster_case_pool(case_id, pool, cfg.k, cfg.seed), cfg.alpha)


def build_yottixel_mosaic(
    patches: Sequence[PatchRecord],
    seed: int,
    k: int = BASELINE_CLUSTERS,
    retention_pct: float = BASELINE_RETENTION_PCT,
) -> CaseMosaic:
    """Single-slide baseline mosaic: color k-means, random 5% per group.

    The original method's spatial sub-sampling step is approximated by
    seeded uniform sampling within each color cluster.
    """
    if not patches:
        raise ValueError("baseline mosaic on an empty slide")
    desc = descriptor_matrix(patches)
    if not np.isfinite(desc).all():
        raise ValueError("non-finite descriptor in slide patches")
    k_eff = min(k, len(patches))
    result = lloyd_kmeans(desc, k_eff, seed)
    rng = np.random.default_rng(seed)
    kept: list[str] = []
    per_cluster: dict[int, tuple[str, ...]] = {}
    for c in range(k_eff):
        members = np.flatnonzero(result.labels == c)
        take = retention_count(retention_pct, members.size)
        picks = np.sort(rng.choice(members.size, size=take, replace=False))
        ids = tuple(patches[int(members[i])].patch_id for i in picks)
        per_cluster[c] = ids
        kept.extend(ids)
    assignments = {patches[i].patch_id: int(result.labels[i]) for i in range(len(patches))}
    return CaseMosaic(
        case_id=patches[0].slide_id,
        kept=tuple(kept),
        cluster_assignments=assignments,
        per_cluster_kept=per_cluster,
    )


def reduction_stats(total_raw: float, kept: float) -> float:
    """Percentage of the raw pool removed, one decimal place."""
    if total_raw <= 0:
        raise ValueError("total_raw must be positive")
    if not 0 <= kept <= total_raw:
        raise ValueError(f"kept {kept} outside [0, {total_raw}]")
    return round(100.0 * (1.0 - kept / total_raw), 1)
