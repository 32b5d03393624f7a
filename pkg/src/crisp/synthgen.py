"""Deterministic synthetic cohorts: descriptor CSVs plus CEM1 embeddings.

Stands in for private clinical cohorts in tests and demos. Class
embedding modes sit on mutually orthogonal directions scaled so that
every pair of class means is exactly `class_mode_separation` apart,
with unit-spread Gaussian noise per patch; descriptors come from
per-class Gaussian mixtures clamped into the valid descriptor box. A
configurable fraction of each slide's patches are near-duplicates of
earlier patches (descriptor distance < DUPLICATE_EPS), which is what
gives the redundancy-pruning stage something to remove.

Everything is drawn from a single seeded generator in a fixed order, so
identical specs produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import CohortManifest, PatchRecord, load_manifest, write_descriptors, write_embeddings
from .cohort import EmbeddingMatrix

DUPLICATE_EPS = 1e-3
DESCRIPTOR_SPREAD = 0.04
MODES_PER_CLASS = 2
DUPLICATE_EMBED_NOISE = 0.01


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int
    cases_per_class: int
    slides_per_case: tuple[int, int] = (2, 3)
    patches_per_slide: tuple[int, int] = (60, 100)
    class_mode_separation: float = 10.0
    redundancy_rate: float = 0.5
    embed_dim: int = 64
    seed: int = 724

    def __post_init__(self) -> None:
        problems = []
        if self.n_classes < 1:
            problems.append("n_classes must be >= 1")
        if self.cases_per_class < 1:
            problems.append("cases_per_class must be >= 1")
        for name, rng_pair in (("slides_per_case", self.slides_per_case), ("patches_per_slide", self.patches_per_slide)):
            lo, hi = rng_pair
            if lo < 1 or hi < lo:
                problems.append(f"{name} range {rng_pair} invalid")
        if self.class_mode_separation < 0:
            problems.append("class_mode_separation must be >= 0")
        if not 0.0 <= self.redundancy_rate <= 1.0:
            problems.append("redundancy_rate must lie in [0, 1]")
        if self.embed_dim < 1:
            problems.append("embed_dim must be >= 1")
        if self.n_classes > self.embed_dim:
            problems.append("n_classes cannot exceed embed_dim (orthogonal class modes)")
        if problems:
            raise ValueError("; ".join(problems))


def _clamp_descriptor(vec: np.ndarray) -> np.ndarray:
    out = vec.copy()
    out[:3] = np.clip(out[:3], 0.0, 1.0)
    out[3:] = np.clip(out[3:], 0.0, 0.5)
    return out


def _orthogonal_directions(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """n mutually orthonormal unit vectors in dim-space."""
    basis, _ = np.linalg.qr(rng.standard_normal((dim, n)))
    return basis.T


def _mode_centers(n: int, rng: np.random.Generator) -> np.ndarray:
    """Descriptor-space mode centers, kept well apart by rejection sampling."""
    centers: list[np.ndarray] = []
    while len(centers) < n:
        cand = np.concatenate([rng.uniform(0.15, 0.85, 3), rng.uniform(0.08, 0.42, 3)])
        if all(np.linalg.norm(cand - c) >= 0.2 for c in centers):
            centers.append(cand)
    return np.asarray(centers)


def _slide_patches(
    slide_id: str,
    n_patches: int,
    dup_count: int,
    draw_fresh,
    rng: np.random.Generator,
) -> tuple[list[PatchRecord], np.ndarray]:
    """One slide's records plus embeddings; dup_count patches copy earlier ones."""
    dup_positions: set[int] = set()
    if dup_count and n_patches > 1:
        dup_positions = set(rng.choice(np.arange(1, n_patches), size=min(dup_count, n_patches - 1), replace=False))
    grid_w = max(1, math.ceil(math.sqrt(n_patches)))
    descriptors: list[np.ndarray] = []
    embeddings: list[np.ndarray] = []
    records: list[PatchRecord] = []
    for i in range(n_patches):
        if i in dup_positions:
            src = int(rng.integers(i))
            desc = _clamp_descriptor(descriptors[src] + rng.uniform(-DUPLICATE_EPS / 4, DUPLICATE_EPS / 4, 6))
            emb = embeddings[src] + DUPLICATE_EMBED_NOISE * rng.standard_normal(len(embeddings[src]))
        else:
            desc, emb = draw_fresh(rng)
        descriptors.append(desc)
        embeddings.append(emb)
        gx, gy = i % grid_w, i // grid_w
        records.append(
            PatchRecord(
                patch_id=f"{slide_id}:{gx}:{gy}",
                slide_id=slide_id,
                grid_x=gx,
                grid_y=gy,
                occupancy=float(rng.uniform(0.70, 1.0)),
                descriptor=tuple(float(v) for v in desc),
            )
        )
    return records, np.asarray(embeddings)


def _write_slide(out_dir: Path, slide_id: str, records, embeddings) -> dict[str, str]:
    write_descriptors(out_dir / f"{slide_id}.csv", records)
    matrix = EmbeddingMatrix(
        rows=embeddings.astype(np.float32),
        row_ids=tuple(r.patch_id for r in records),
    )
    write_embeddings(out_dir / f"{slide_id}.cem", out_dir / f"{slide_id}.ids", matrix)
    return {
        "slide_id": slide_id,
        "descriptors": f"{slide_id}.csv",
        "embeddings": f"{slide_id}.cem",
        "embedding_ids": f"{slide_id}.ids",
    }


def generate(spec: SynthSpec, out_dir: str | Path) -> CohortManifest:
    """Write a full synthetic cohort under out_dir; returns its manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    labels = [f"class{c}" for c in range(spec.n_classes)]
    class_dirs = _orthogonal_directions(spec.n_classes, spec.embed_dim, rng)
    class_means = (spec.class_mode_separation / math.sqrt(2.0)) * class_dirs
    desc_modes = _mode_centers(spec.n_classes * MODES_PER_CLASS, rng).reshape(
        spec.n_classes, MODES_PER_CLASS, 6
    )

    cases = []
    for c in range(spec.n_classes):
        def fresh(rng: np.random.Generator, c: int = c):
            mode = int(rng.integers(MODES_PER_CLASS))
            desc = _clamp_descriptor(desc_modes[c, mode] + DESCRIPTOR_SPREAD * rng.standard_normal(6))
            emb = class_means[c] + rng.standard_normal(spec.embed_dim)
            return desc, emb

        for i in range(spec.cases_per_class):
            case_id = f"case{c}{chr(ord('a') + i) if i < 26 else i}"
            n_slides = int(rng.integers(spec.slides_per_case[0], spec.slides_per_case[1] + 1))
            slide_entries = []
            for s in range(n_slides):
                slide_id = f"{case_id}_s{s}"
                n_patches = int(rng.integers(spec.patches_per_slide[0], spec.patches_per_slide[1] + 1))
                dup_count = min(int(round(spec.redundancy_rate * n_patches)), n_patches - 1)
                records, embeddings = _slide_patches(slide_id, n_patches, dup_count, fresh, rng)
                slide_entries.append(_write_slide(out_dir, slide_id, records, embeddings))
            cases.append({"case_id": case_id, "label": labels[c], "slides": slide_entries})

    manifest = {"cohort_id": f"synth-{spec.seed}", "label_set": labels, "cases": cases}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return load_manifest(manifest_path)


def generate_heterogeneous(
    out_dir: str | Path,
    n_classes: int = 3,
    cases_per_class: int = 4,
    majority_patches: tuple[int, int] = (45, 60),
    minority_patches: tuple[int, int] = (6, 10),
    redundancy_rate: float = 0.5,
    mode_separation: float = 6.0,
    coupling: float = 1.0,
    indep_noise: float = 0.3,
    embed_dim: int = 64,
    seed: int = 724,
) -> CohortManifest:
    """Cohort whose class signal is split across imbalanced per-slide modes.

    Modes form a ring shared between neighbouring classes: class c's two
    slides draw from modes c and (c+1) mod n_classes, so no single mode
    identifies a class; only the pair does. The first slide (mode c) is
    patch-rich, the second (mode c+1) patch-poor, so a selection stage
    must actively protect minority-mode coverage to keep the pair
    visible. Patch embeddings inherit the descriptor deviation through a
    fixed per-mode lift, making descriptor outliers embedding outliers.
    This is the fixture for comparing diversity-seeking clustering
    against a second sequential pruning pass at the case level.
    """
    if n_classes < 3:
        raise ValueError("the mode ring needs at least 3 classes")
    if n_classes > embed_dim:
        raise ValueError("n_classes cannot exceed embed_dim")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    labels = [f"class{c}" for c in range(n_classes)]
    n_modes = n_classes
    mode_emb = (mode_separation / math.sqrt(2.0)) * _orthogonal_directions(n_modes, embed_dim, rng)
    mode_desc = _mode_centers(n_modes, rng)
    # orthonormal 6-column lift per mode: descriptor deviation -> embedding offset
    lifts = [_orthogonal_directions(6, embed_dim, rng).T for _ in range(n_modes)]

    cases = []
    for c in range(n_classes):
        for i in range(cases_per_class):
            case_id = f"case{c}{chr(ord('a') + i) if i < 26 else i}"
            slide_entries = []
            for s, (mode, patch_range) in enumerate(
                ((c, majority_patches), ((c + 1) % n_modes, minority_patches))
            ):
                def fresh(rng: np.random.Generator, mode: int = mode):
                    z = rng.standard_normal(6)
                    desc = _clamp_descriptor(mode_desc[mode] + DESCRIPTOR_SPREAD * z)
                    emb = (
                        mode_emb[mode]
                        + coupling * (lifts[mode] @ z)
                        + indep_noise * rng.standard_normal(embed_dim)
                    )
                    return desc, emb

                slide_id = f"{case_id}_s{s}"
                n_patches = int(rng.integers(patch_range[0], patch_range[1] + 1))
                dup_count = min(int(round(redundancy_rate * n_patches)), n_patches - 1)
                records, embeddings = _slide_patches(slide_id, n_patches, dup_count, fresh, rng)
                slide_entries.append(_write_slide(out_dir, slide_id, records, embeddings))
            cases.append({"case_id": case_id, "label": labels[c], "slides": slide_entries})

    manifest = {"cohort_id": f"synth-het-{seed}", "label_set": labels, "cases": cases}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return load_manifest(manifest_path)
