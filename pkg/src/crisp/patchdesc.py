"""Tissue occupancy and color descriptors for raw patch tiles.

The occupancy rule is a deliberately simple, auditable stand-in for a
tissue mask: a pixel counts as background iff all three channels exceed
a brightness threshold (default 220/255). Tiles whose tissue fraction
falls strictly below the cutoff are dropped; equality is retained.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import CohortError, PatchRecord

logger = logging.getLogger(__name__)

DEFAULT_BG_THRESHOLD = 220
DEFAULT_OCC_MIN = 0.70
DEFAULT_TILE_SIZE = 256

TILE_NAME_RE = re.compile(r"^(?P<slide>.+)__(?P<gx>\d+)_(?P<gy>\d+)$")


@dataclass(frozen=True)
class PatchImage:
    """An 8-bit RGB tile with its grid position."""

    slide_id: str
    grid_x: int
    grid_y: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise CohortError(f"tile {self.slide_id}:{self.grid_x}:{self.grid_y}: expected HxWx3 pixels")
        if self.pixels.dtype != np.uint8:
            raise CohortError("tile pixels must be 8-bit")


def occupancy(img: PatchImage, bg_threshold: int = DEFAULT_BG_THRESHOLD) -> float:
    """Fraction of pixels classified as tissue.

    A pixel is background iff min(R, G, B) > bg_threshold.
    """
    background = (img.pixels > bg_threshold).all(axis=2)
    return float(1.0 - background.mean())


def descriptor(img: PatchImage) -> tuple[float, ...]:
    """(mean_r, mean_g, mean_b, std_r, std_g, std_b) of pixels scaled to [0, 1].

    Std is the population standard deviation (divide by N).
    """
    channels = img.pixels.reshape(-1, 3).astype(np.float64)
    # normalize after the statistics: same by linearity, exact for
    # constant tiles where early division would leave rounding dust
    means = channels.mean(axis=0) / 255.0
    stds = channels.std(axis=0) / 255.0
    return tuple(float(v) for v in means) + tuple(float(v) for v in stds)


def filter_and_describe(
    tiles: Sequence[PatchImage],
    occ_min: float = DEFAULT_OCC_MIN,
    bg_threshold: int = DEFAULT_BG_THRESHOLD,
) -> list[PatchRecord]:
    """Descriptor records for tiles whose occupancy is >= occ_min, raster order.

    An all-background slide yields an empty list (not an error); the
    discard count is logged as a warning.
    """
    if not 0.0 <= occ_min <= 1.0:
        raise CohortError(f"occ_min {occ_min} outside [0, 1]")
    records = []
    discarded = 0
    for tile in sorted(tiles, key=lambda t: (t.grid_y, t.grid_x)):
        occ = occupancy(tile, bg_threshold)
        if occ < occ_min:
            discarded += 1
            continue
        records.append(
            PatchRecord(
                patch_id=f"{tile.slide_id}:{tile.grid_x}:{tile.grid_y}",
                slide_id=tile.slide_id,
                grid_x=tile.grid_x,
                grid_y=tile.grid_y,
                occupancy=occ,
                descriptor=descriptor(tile),
            )
        )
    if discarded:
        logger.warning(
            "slide %s: discarded %d of %d tiles below occupancy %.2f",
            tiles[0].slide_id if tiles else "?", discarded, len(tiles), occ_min,
        )
    return records


def load_tile(path: str | Path, tile_size: int = DEFAULT_TILE_SIZE) -> PatchImage:
    """Load one `<slide_id>__<grid_x>_<grid_y>.png` tile."""
    from PIL import Image

    path = Path(path)
    match = TILE_NAME_RE.match(path.stem)
    if match is None:
        raise CohortError(f"{path.name}: tile name must look like <slide_id>__<grid_x>_<grid_y>")
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if pixels.shape[0] != tile_size or pixels.shape[1] != tile_size:
        raise CohortError(f"{path.name}: tile is {pixels.shape[1]}x{pixels.shape[0]}, expected {tile_size}x{tile_size}")
    return PatchImage(
        slide_id=match.group("slide"),
        grid_x=int(match.group("gx")),
        grid_y=int(match.group("gy")),
        pixels=pixels,
    )


def describe_tile_dir(
    tile_dir: str | Path,
    occ_min: float = DEFAULT_OCC_MIN,
    bg_threshold: int = DEFAULT_BG_THRESHOLD,
    tile_size: int = DEFAULT_TILE_SIZE,
) -> dict[str, list[PatchRecord]]:
    """Group a directory of tile PNGs by slide and describe each slide."""
    tile_dir = Path(tile_dir)
    by_slide: dict[str, list[PatchImage]] = {}
    for path in sorted(tile_dir.glob("*.png")):
        tile = load_tile(path, tile_size=tile_size)
        by_slide.setdefault(tile.slide_id, []).append(tile)
    if not by_slide:
        raise CohortError(f"{tile_dir}: no *.png tiles found")
    return {
        slide_id: filter_and_describe(tiles, occ_min=occ_min, bg_threshold=bg_threshold)
        for slide_id, tiles in sorted(by_slide.items())
    }
