from __future__ import annotations

import numpy as np
import pytest

from crisp.cohort import Case, Cohort, EmbeddingMatrix, PatchRecord, Slide

NEUTRAL_STDS = (0.1, 0.1, 0.1)


def make_patch(
    slide_id: str,
    gx: int,
    gy: int,
    descriptor: tuple[float, ...] | None = None,
    occupancy: float = 0.9,
) -> PatchRecord:
    if descriptor is None:
        descriptor = (0.5, 0.5, 0.5) + NEUTRAL_STDS
    return PatchRecord(
        patch_id=f"{slide_id}:{gx}:{gy}",
        slide_id=slide_id,
        grid_x=gx,
        grid_y=gy,
        occupancy=occupancy,
        descriptor=tuple(float(v) for v in descriptor),
    )


def axis_patches(values, slide_id: str = "s0"):
    """Raster-ordered patches whose descriptors differ only along mean_r."""
    return [
        make_patch(slide_id, i, 0, descriptor=(float(v), 0.5, 0.5) + NEUTRAL_STDS)
        for i, v in enumerate(values)
    ]


def random_descriptor(rng: np.random.Generator) -> tuple[float, ...]:
    means = rng.uniform(0.0, 1.0, 3)
    stds = rng.uniform(0.0, 0.5, 3)
    return tuple(float(v) for v in np.concatenate([means, stds]))


def random_slide(rng: np.random.Generator, n: int, slide_id: str = "s0"):
    width = max(1, int(np.ceil(np.sqrt(n))))
    return [
        make_patch(slide_id, i % width, i // width, descriptor=random_descriptor(rng))
        for i in range(n)
    ]


def build_cohort(case_specs: dict[str, tuple[str, np.ndarray]], label_set=None) -> Cohort:
    """In-memory cohort from {case_id: (label, embedding rows)}.

    Each case gets one slide with one patch per embedding row; patch
    descriptors are spread along mean_r so pruning keeps them apart.
    """
    cases = []
    embeddings = {}
    labels = sorted({label for label, _ in case_specs.values()}) if label_set is None else list(label_set)
    for case_id in sorted(case_specs):
        label, rows = case_specs[case_id]
        rows = np.asarray(rows, dtype=np.float32)
        slide_id = f"{case_id}_s0"
        patches = [
            make_patch(slide_id, i, 0, descriptor=(min(1.0, 0.05 + 0.9 * i / max(1, len(rows) - 1)), 0.5, 0.5) + NEUTRAL_STDS)
            for i in range(len(rows))
        ]
        slide = Slide(slide_id=slide_id, case_id=case_id, patches=tuple(patches))
        cases.append(Case(case_id=case_id, label=label, slides=(slide,)))
        embeddings[case_id] = EmbeddingMatrix(rows=rows, row_ids=tuple(p.patch_id for p in patches))
    return Cohort(cohort_id="inmem", label_set=tuple(labels), cases=tuple(cases), embeddings=embeddings)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(724)
