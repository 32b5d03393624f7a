"""Stage 1: per-slide sequential redundancy pruning over color descriptors.

The scan walks the slide's tissue patches in raster order. The first
still-active patch becomes the reference; Euclidean distances in 6-d
descriptor space to every other active patch are computed, and patches
strictly below the s_t-th percentile (nearest rank) of that distance
list are deactivated as color-redundant, along with exact duplicates of
the reference. The reference joins the collage and the scan moves to
the next surviving patch, recomputing the threshold from each new
reference's own distance distribution. Collage length is therefore
self-determined: diverse slides keep more patches, uniform slides fewer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cohort import PatchRecord, descriptor_matrix


@dataclass(frozen=True)
class SpliceConfig:
    """s_t: percentile threshold in [0, 100]; higher prunes harder."""

    s_t: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.s_t <= 100.0:
            raise ValueError(f"s_t must lie in [0, 100], got {self.s_t}")


@dataclass(frozen=True)
class SlideCollage:
    """Patches a slide retains after pruning, in order of admission."""

    slide_id: str
    kept: tuple[str, ...]
    discarded_count: int


def nearest_rank_index(s_t: float, m: int) -> int:
    """Index of the s_t-th percentile in a sorted list of m values.

    Nearest-rank definition: ceil(s_t/100 * m) - 1, clamped to [0, m-1].
    """
    return min(max(math.ceil(s_t / 100.0 * m) - 1, 0), m - 1)


def _scan(desc: np.ndarray, s_t: float) -> list[int]:
    """Indices admitted to the collage, in admission (raster) order."""
    n = desc.shape[0]
    active = np.ones(n, dtype=bool)
    kept: list[int] = []
    for ref in range(n):
        if not active[ref]:
            continue
        active[ref] = False
        kept.append(ref)
        others = np.flatnonzero(active)
        m = others.size
        if m == 0:
            break
        diff = desc[others] - desc[ref]
        # column-by-column sum keeps the float ops identical to a plain
        # left-to-right scalar loop, so an independent reference
        # implementation reproduces these distances bit for bit
        d2 = diff[:, 0] ** 2
        for col in range(1, 6):
            d2 = d2 + diff[:, col] ** 2
        dist = np.sqrt(d2)
        threshold = np.sort(dist)[nearest_rank_index(s_t, m)]
        drop = (dist < threshold) | (dist == 0.0)
        active[others[drop]] = False
    return kept


def splice_slide(patches: Sequence[PatchRecord], cfg: SpliceConfig) -> SlideCollage:
    """Prune one slide's raster-ordered patches into a collage."""
    if not patches:
        return SlideCollage(slide_id="", kept=(), discarded_count=0)
    desc = descriptor_matrix(patches)
    if not np.isfinite(desc).all():
        raise ValueError(f"slide {patches[0].slide_id}: non-finite descriptor")
    kept = _scan(desc, cfg.s_t)
    return SlideCollage(
        slide_id=patches[0].slide_id,
        kept=tuple(patches[i].patch_id for i in kept),
        discarded_count=len(patches) - len(kept),
    )


def splice_case_pool(
    pool: Sequence[PatchRecord], cfg: SpliceConfig, pool_id: str = ""
) -> SlideCollage:
    """Second sequential pruning pass over a whole case's pooled patches.

    The pool is scanned ordered by (slide_id lexicographic, raster order
    within slide). This is the ablation alternative to k-means mosaics.
    """
    ordered = sorted(pool, key=lambda p: (p.slide_id, p.grid_y, p.grid_x))
    if not ordered:
        return SlideCollage(slide_id=pool_id, kept=(), discarded_count=0)
    desc = descriptor_matrix(ordered)
    if not np.isfinite(desc).all():
        raise ValueError(f"pool {pool_id or ordered[0].slide_id}: non-finite descriptor")
    kept = _scan(desc, cfg.s_t)
    return SlideCollage(
        slide_id=pool_id or ordered[0].slide_id,
        kept=tuple(ordered[i].patch_id for i in kept),
        discarded_count=len(ordered) - len(kept),
    )
