"""Cohort data model and on-disk formats.

A cohort is a set of labelled patient cases; each case holds one or more
slides, and each slide a raster-ordered list of patches. Every patch
carries a 6-d color descriptor (per-channel mean and population std of
the normalized RGB tile). Deep patch embeddings live in a compact binary
format ("CEM1") next to a plain-text id file aligned to its rows.

Formats
-------
Manifest: a single JSON document::

    { "cohort_id": str,
      "label_set": [str],
      "cases": [ { "case_id": str, "label": str,
                   "slides": [ { "slide_id": str,
                                 "descriptors": path,
                                 "embeddings": path,
                                 "embedding_ids": path } ] } ] }

Paths are resolved relative to the manifest's directory.

Descriptor CSV: header ``patch_id,slide_id,grid_x,grid_y,occupancy,
mean_r,mean_g,mean_b,std_r,std_g,std_b``, one row per patch, rows in
raster order (ascending grid_y, then grid_x).

Embedding file (CEM1): bytes 0-3 ASCII magic ``CEM1``; bytes 4-7 row
count (u32, little-endian); bytes 8-11 dim (u32, little-endian); then
count*dim float32 little-endian values, row-major. The companion id
file holds one patch_id per line, aligned to rows.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CEM1_MAGIC = b"CEM1"
CEM1_HEADER = struct.Struct("<4sII")

DESCRIPTOR_NAMES = ("mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b")
DESCRIPTOR_CSV_HEADER = ("patch_id", "slide_id", "grid_x", "grid_y", "occupancy") + DESCRIPTOR_NAMES


class CohortError(ValueError):
    """A manifest, descriptor file, or embedding file failed validation."""


@dataclass(frozen=True)
class PatchRecord:
    """One tile: identity, grid position, occupancy, 6-d color descriptor."""

    patch_id: str
    slide_id: str
    grid_x: int
    grid_y: int
    occupancy: float
    descriptor: tuple[float, float, float, float, float, float]

    def __post_init__(self) -> None:
        if len(self.descriptor) != 6:
            raise CohortError(f"patch {self.patch_id!r}: descriptor must have 6 components")


@dataclass(frozen=True)
class Slide:
    """A slide's patches in raster order (ascending grid_y, then grid_x)."""

    slide_id: str
    case_id: str
    patches: tuple[PatchRecord, ...]


@dataclass(frozen=True)
class Case:
    case_id: str
    label: str
    slides: tuple[Slide, ...]


@dataclass(frozen=True)
class SlideRef:
    slide_id: str
    descriptors: Path
    embeddings: Path
    embedding_ids: Path


@dataclass(frozen=True)
class CaseRef:
    case_id: str
    label: str
    slides: tuple[SlideRef, ...]


@dataclass(frozen=True)
class CohortManifest:
    cohort_id: str
    label_set: tuple[str, ...]
    cases: tuple[CaseRef, ...]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-aligned patch embeddings. Stored float32; math happens in float64."""

    rows: np.ndarray
    row_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.rows.ndim != 2:
            raise CohortError("embedding rows must form a 2-d matrix")
        if self.rows.shape[1] < 1:
            raise CohortError("embedding dim must be positive")
        if len(self.row_ids) != self.rows.shape[0]:
            raise CohortError(
                f"row/id mismatch: {self.rows.shape[0]} rows vs {len(self.row_ids)} ids"
            )
        if len(set(self.row_ids)) != len(self.row_ids):
            raise CohortError("duplicate patch_id in embedding rows")
        if not np.isfinite(self.rows).all():
            raise CohortError("embedding matrix contains NaN or Inf")

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    @property
    def count(self) -> int:
        return int(self.rows.shape[0])


@dataclass(frozen=True)
class Cohort:
    """Fully materialized cohort: cases with patches plus per-case embeddings."""

    cohort_id: str
    label_set: tuple[str, ...]
    cases: tuple[Case, ...]
    embeddings: Mapping[str, EmbeddingMatrix] = field(repr=False)


def descriptor_matrix(patches: Sequence[PatchRecord]) -> np.ndarray:
    """Stack patch descriptors into an (n, 6) float64 matrix."""
    if not patches:
        return np.empty((0, 6), dtype=np.float64)
    return np.asarray([p.descriptor for p in patches], dtype=np.float64)


# ---------------------------------------------------------------------------
# Manifest

def _require(obj: Mapping, key: str, ctx: str):
    if key not in obj:
        raise CohortError(f"manifest: {ctx}: missing key {key!r}")
    return obj[key]


def load_manifest(path: str | Path) -> CohortManifest:
    """Load and fully validate a cohort manifest.

    Checks: JSON well-formedness, schema keys, label membership,
    case/slide id uniqueness, and that every referenced file exists.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise CohortError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise CohortError(f"manifest {path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}")

    base = path.parent
    cohort_id = _require(raw, "cohort_id", "top level")
    label_set = tuple(_require(raw, "label_set", "top level"))
    if len(set(label_set)) != len(label_set):
        raise CohortError("manifest: label_set contains duplicates")

    cases = []
    seen_cases: set[str] = set()
    seen_slides: set[str] = set()
    for i, case_obj in enumerate(_require(raw, "cases", "top level")):
        ctx = f"cases[{i}]"
        case_id = _require(case_obj, "case_id", ctx)
        label = _require(case_obj, "label", ctx)
        if case_id in seen_cases:
            raise CohortError(f"manifest: duplicate case_id {case_id!r}")
        seen_cases.add(case_id)
        if label not in label_set:
            raise CohortError(f"manifest: {ctx} ({case_id}): label {label!r} not in label_set")
        slides = []
        for j, slide_obj in enumerate(_require(case_obj, "slides", ctx)):
            sctx = f"{ctx}.slides[{j}]"
            slide_id = _require(slide_obj, "slide_id", sctx)
            if slide_id in seen_slides:
                raise CohortError(f"manifest: duplicate slide_id {slide_id!r}")
            seen_slides.add(slide_id)
            paths = {}
            for key in ("descriptors", "embeddings", "embedding_ids"):
                p = base / _require(slide_obj, key, sctx)
                if not p.is_file():
                    raise CohortError(f"manifest: {sctx} ({slide_id}): dangling {key} reference: {p}")
                paths[key] = p
            slides.append(SlideRef(slide_id=slide_id, **paths))
        if not slides:
            raise CohortError(f"manifest: {ctx} ({case_id}): case has no slides")
        cases.append(CaseRef(case_id=case_id, label=label, slides=tuple(slides)))
    return CohortManifest(cohort_id=cohort_id, label_set=label_set, cases=tuple(cases))


# ---------------------------------------------------------------------------
# Descriptor CSV

def load_descriptors(path: str | Path, slide_id: str | None = None) -> list[PatchRecord]:
    """Read a descriptor CSV, enforcing bounds, raster order, and id uniqueness."""
    path = Path(path)
    records: list[PatchRecord] = []
    seen_ids: set[str] = set()
    prev_pos: tuple[int, int] | None = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DESCRIPTOR_CSV_HEADER:
            raise CohortError(f"{path}: bad descriptor header: {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(DESCRIPTOR_CSV_HEADER):
                raise CohortError(f"{path}:{lineno}: expected {len(DESCRIPTOR_CSV_HEADER)} fields, got {len(row)}")
            pid, sid = row[0], row[1]
            try:
                gx, gy = int(row[2]), int(row[3])
                occ = float(row[4])
                desc = tuple(float(v) for v in row[5:11])
            except ValueError as exc:
                raise CohortError(f"{path}:{lineno}: {exc}")
            if slide_id is not None and sid != slide_id:
                raise CohortError(f"{path}:{lineno}: slide_id {sid!r} does not match {slide_id!r}")
            if pid in seen_ids:
                raise CohortError(f"{path}:{lineno}: duplicate patch_id {pid!r}")
            seen_ids.add(pid)
            if gx < 0 or gy < 0:
                raise CohortError(f"{path}:{lineno}: negative grid coordinates")
            if not 0.0 <= occ <= 1.0:
                raise CohortError(f"{path}:{lineno}: occupancy {occ} outside [0, 1]")
            if not all(np.isfinite(desc)):
                raise CohortError(f"{path}:{lineno}: non-finite descriptor value")
            if not all(0.0 <= v <= 1.0 for v in desc[:3]):
                raise CohortError(f"{path}:{lineno}: descriptor mean outside [0, 1]")
            if not all(0.0 <= v <= 0.5 for v in desc[3:]):
                raise CohortError(f"{path}:{lineno}: descriptor std outside [0, 0.5]")
            pos = (gy, gx)
            if prev_pos is not None and pos <= prev_pos:
                raise CohortError(f"{path}:{lineno}: rows not in raster order at {pid!r}")
            prev_pos = pos
            records.append(PatchRecord(pid, sid, gx, gy, occ, desc))
    return records


def write_descriptors(path: str | Path, records: Iterable[PatchRecord]) -> None:
    """Write a descriptor CSV. Floats use repr so values round-trip exactly."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DESCRIPTOR_CSV_HEADER)
        for r in records:
            writer.writerow(
                [r.patch_id, r.slide_id, r.grid_x, r.grid_y, repr(r.occupancy)]
                + [repr(float(v)) for v in r.descriptor]
            )


# ---------------------------------------------------------------------------
# CEM1 embeddings

def load_embeddings(path: str | Path, ids_path: str | Path) -> EmbeddingMatrix:
    """Read a CEM1 embedding file and its aligned id file."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < CEM1_HEADER.size:
        raise CohortError(f"{path}: truncated header ({len(data)} bytes)")
    magic, count, dim = CEM1_HEADER.unpack_from(data)
    if magic != CEM1_MAGIC:
        raise CohortError(f"{path}: bad magic {magic!r}, expected {CEM1_MAGIC!r}")
    if dim < 1:
        raise CohortError(f"{path}: dim must be positive, got {dim}")
    expected = CEM1_HEADER.size + 4 * count * dim
    if len(data) < expected:
        raise CohortError(f"{path}: truncated payload: {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise CohortError(f"{path}: trailing bytes: {len(data)} bytes, expected {expected}")
    rows = np.frombuffer(data, dtype="<f4", offset=CEM1_HEADER.size).reshape(count, dim)
    if not np.isfinite(rows).all():
        raise CohortError(f"{path}: payload contains NaN or Inf")
    ids_path = Path(ids_path)
    ids = ids_path.read_text().splitlines()
    if len(ids) != count:
        raise CohortError(f"{ids_path}: {len(ids)} ids for {count} embedding rows")
    return EmbeddingMatrix(rows=rows, row_ids=tuple(ids))


def write_embeddings(path: str | Path, ids_path: str | Path, matrix: EmbeddingMatrix) -> None:
    """Write a CEM1 embedding file and its aligned id file."""
    rows = np.ascontiguousarray(matrix.rows, dtype="<f4")
    header = CEM1_HEADER.pack(CEM1_MAGIC, matrix.count, matrix.dim)
    Path(path).write_bytes(header + rows.tobytes())
    Path(ids_path).write_text("".join(pid + "\n" for pid in matrix.row_ids))


def select_rows(matrix: EmbeddingMatrix, ids: Sequence[str]) -> EmbeddingMatrix:
    """Restrict an embedding matrix to `ids`, rows in the order given."""
    index = {pid: i for i, pid in enumerate(matrix.row_ids)}
    try:
        picks = [index[pid] for pid in ids]
    except KeyError as exc:
        raise CohortError(f"patch_id {exc.args[0]!r} not present in embedding matrix")
    return EmbeddingMatrix(rows=matrix.rows[picks], row_ids=tuple(ids))


def stack_embeddings(matrices: Sequence[EmbeddingMatrix]) -> EmbeddingMatrix:
    """Concatenate matrices row-wise; dims must agree, ids stay unique."""
    if not matrices:
        raise CohortError("cannot stack zero embedding matrices")
    dims = {m.dim for m in matrices}
    if len(dims) != 1:
        raise CohortError(f"embedding dim mismatch across slides: {sorted(dims)}")
    rows = np.concatenate([m.rows for m in matrices], axis=0)
    ids = tuple(pid for m in matrices for pid in m.row_ids)
    return EmbeddingMatrix(rows=rows, row_ids=ids)


# ---------------------------------------------------------------------------
# Full materialization

def load_cohort(manifest: CohortManifest | str | Path) -> Cohort:
    """Materialize a manifest: load every descriptor CSV and embedding file.

    Also checks cross-file invariants: patch ids unique across the whole
    cohort, and every descriptor patch id covered by its case's
    embedding rows (the exporter contract is a 1:1 id mapping).
    """
    if not isinstance(manifest, CohortManifest):
        manifest = load_manifest(manifest)
    cases = []
    embeddings: dict[str, EmbeddingMatrix] = {}
    all_patch_ids: set[str] = set()
    for case_ref in manifest.cases:
        slides = []
        slide_matrices = []
        for slide_ref in case_ref.slides:
            patches = load_descriptors(slide_ref.descriptors, slide_id=slide_ref.slide_id)
            for p in patches:
                if p.patch_id in all_patch_ids:
                    raise CohortError(f"duplicate patch_id across cohort: {p.patch_id!r}")
                all_patch_ids.add(p.patch_id)
            slides.append(Slide(slide_id=slide_ref.slide_id, case_id=case_ref.case_id, patches=tuple(patches)))
            slide_matrices.append(load_embeddings(slide_ref.embeddings, slide_ref.embedding_ids))
        case_matrix = stack_embeddings(slide_matrices)
        id_set = set(case_matrix.row_ids)
        for slide in slides:
            for p in slide.patches:
                if p.patch_id not in id_set:
                    raise CohortError(
                        f"case {case_ref.case_id}: patch {p.patch_id!r} has no embedding row"
                    )
        cases.append(Case(case_id=case_ref.case_id, label=case_ref.label, slides=tuple(slides)))
        embeddings[case_ref.case_id] = case_matrix
    return Cohort(
        cohort_id=manifest.cohort_id,
        label_set=manifest.label_set,
        cases=tuple(cases),
        embeddings=embeddings,
    )
