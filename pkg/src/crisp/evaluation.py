"""Leave-one-patient-out evaluation, majority voting, macro-F1, grid search.

Every case serves once as the sole query against an archive built from
all remaining cases; the held-out case never contributes to its own
archive. Predictions come from a plurality vote over the labels of the
top-k retrieved cases and are scored with macro-averaged F1 over the
full label set.

The grid engine sweeps the Cartesian product of (s_t, K, alpha) values.
Slide pruning depends only on s_t and clustering only on (s_t, K), so
each (s_t, K) block clusters once and reuses it for every alpha; patch
embeddings are loaded once and shared read-only. Grid points are
independent, so blocks may run in parallel worker processes; results
are emitted in (s_t, K, alpha, metric) order regardless of scheduling.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .cohort import Case, Cohort, CohortError, PatchRecord, select_rows
from .mosaic import CaseMosaic, MosaicConfig, cluster_case_pool, sample_mosaic
from .retrieval import CaseSignature, rank_archive
from .splice import SpliceConfig, splice_case_pool, splice_slide

DEFAULT_K_SET = (1, 3, 5, 7)


@dataclass(frozen=True)
class FoldResult:
    """One held-out case: its ranking prefix and per-k vote."""

    case_id: str
    true_label: str
    ranking: tuple[tuple[str, float], ...]
    predicted: Mapping[int, str]


@dataclass(frozen=True)
class EvalResult:
    metric: str
    folds: tuple[FoldResult, ...]
    f1_per_k: Mapping[int, float]
    failures: tuple[tuple[str, str], ...]
    mean_kept: float
    mean_pool: float


@dataclass(frozen=True)
class GridPoint:
    s_t: float
    k: int
    alpha: float
    metric: str
    f1_per_k: Mapping[int, float]
    mean_kept: float
    mean_pool: float
    failures: int


def majority_vote(labels: Sequence[str]) -> str:
    """Plurality label; ties go to the tied label ranked nearest."""
    if not labels:
        raise ValueError("majority_vote on an empty label list")
    counts = Counter(labels)
    best = max(counts.values())
    for label in labels:
        if counts[label] == best:
            return label
    raise AssertionError("unreachable")


def macro_f1(pairs: Sequence[tuple[str, str]], label_set: Sequence[str]) -> float:
    """Macro-averaged F1 in percent over the full label set.

    Per class, precision/recall/F1 fall back to 0 when undefined, and
    classes absent from `pairs` still count in the average.
    """
    if not pairs:
        raise ValueError("macro_f1 on an empty pair list")
    labels = set(label_set)
    for true, pred in pairs:
        if true not in labels or pred not in labels:
            raise ValueError(f"label pair ({true!r}, {pred!r}) outside label_set")
    total = 0.0
    for cls in label_set:
        tp = sum(1 for t, p in pairs if t == cls and p == cls)
        fp = sum(1 for t, p in pairs if t != cls and p == cls)
        fn = sum(1 for t, p in pairs if t == cls and p != cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total += f1
    return 100.0 * total / len(label_set)


def case_pool(case: Case, splice_cfg: SpliceConfig) -> list[PatchRecord]:
    """Stage-1 prune each slide of a case and pool the surviving patches."""
    pool: list[PatchRecord] = []
    for slide in case.slides:
        collage = splice_slide(slide.patches, splice_cfg)
        by_id = {p.patch_id: p for p in slide.patches}
        pool.extend(by_id[pid] for pid in collage.kept)
    return pool


def build_signatures(
    cohort: Cohort, splice_cfg: SpliceConfig, mosaic_cfg: MosaicConfig
) -> tuple[dict[str, CaseSignature], dict[str, CaseMosaic], list[tuple[str, str]], dict[str, int]]:
    """Run the two-stage pipeline for every case of a cohort.

    Returns (signatures, mosaics, failures, pool sizes). A case that
    yields no signature lands in `failures` with a reason and is simply
    absent from every archive.
    """
    signatures: dict[str, CaseSignature] = {}
    mosaics: dict[str, CaseMosaic] = {}
    failures: list[tuple[str, str]] = []
    pool_sizes: dict[str, int] = {}
    for case in cohort.cases:
        pool = case_pool(case, splice_cfg)
        pool_sizes[case.case_id] = len(pool)
        try:
            mosaic = sample_mosaic(
                cluster_case_pool(case.case_id, pool, mosaic_cfg.k, mosaic_cfg.seed),
                mosaic_cfg.alpha,
            )
            signature = CaseSignature(
                case_id=case.case_id,
                label=case.label,
                embeddings=select_rows(cohort.embeddings[case.case_id], mosaic.kept),
            )
        except (ValueError, CohortError) as exc:
            failures.append((case.case_id, str(exc)))
            continue
        mosaics[case.case_id] = mosaic
        signatures[case.case_id] = signature
    return signatures, mosaics, failures, pool_sizes


def _lopo_folds(
    signatures: Mapping[str, CaseSignature],
    label_set: Sequence[str],
    metric: str,
    k_set: Sequence[int],
) -> tuple[list[FoldResult], dict[int, float], list[tuple[str, str]]]:
    """Rank and vote for every fold; returns folds, per-k macro-F1, failures."""
    k_sorted = sorted(set(k_set))
    if not k_sorted or k_sorted[0] < 1:
        raise ValueError(f"k_set must contain integers >= 1, got {k_set}")
    folds: list[FoldResult] = []
    failures: list[tuple[str, str]] = []
    for case_id in sorted(signatures):
        query = signatures[case_id]
        archive = [signatures[c] for c in sorted(signatures) if c != case_id]
        assert all(a.case_id != case_id for a in archive), "query leaked into archive"
        if not archive:
            failures.append((case_id, "empty archive"))
            continue
        ranking = rank_archive(query, archive, metric)
        top_labels = [signatures[cid].label for cid, _ in ranking.entries[: max(k_sorted)]]
        predicted = {k: majority_vote(top_labels[:k]) for k in k_sorted}
        folds.append(
            FoldResult(
                case_id=case_id,
                true_label=query.label,
                ranking=ranking.entries[: max(k_sorted)],
                predicted=predicted,
            )
        )
    f1_per_k = {
        k: macro_f1([(f.true_label, f.predicted[k]) for f in folds], label_set) if folds else 0.0
        for k in k_sorted
    }
    return folds, f1_per_k, failures


def lopo_evaluate(
    cohort: Cohort,
    splice_cfg: SpliceConfig,
    mosaic_cfg: MosaicConfig,
    metric: str,
    k_set: Sequence[int] = DEFAULT_K_SET,
) -> EvalResult:
    """Leave-one-patient-out retrieval evaluation for one configuration."""
    if len(cohort.cases) < 2:
        raise ValueError("leave-one-out evaluation needs at least 2 cases")
    signatures, mosaics, failures, pool_sizes = build_signatures(cohort, splice_cfg, mosaic_cfg)
    folds, f1_per_k, fold_failures = _lopo_folds(signatures, cohort.label_set, metric, k_set)
    kept_sizes = [len(m.kept) for m in mosaics.values()]
    return EvalResult(
        metric=metric,
        folds=tuple(folds),
        f1_per_k=f1_per_k,
        failures=tuple(failures + fold_failures),
        mean_kept=sum(kept_sizes) / len(kept_sizes) if kept_sizes else 0.0,
        mean_pool=sum(pool_sizes.values()) / len(pool_sizes) if pool_sizes else 0.0,
    )


def lopo_evaluate_reselect(
    cohort: Cohort,
    splice_cfg: SpliceConfig,
    reselect_cfg: SpliceConfig,
    metric: str,
    k_set: Sequence[int] = DEFAULT_K_SET,
) -> EvalResult:
    """Ablation variant: stage 2 is a second sequential pruning pass.

    Instead of clustering, the pooled per-slide collages of each case go
    through the percentile pruning scan once more (ordered by slide then
    raster position); the survivors form the case signature.
    """
    if len(cohort.cases) < 2:
        raise ValueError("leave-one-out evaluation needs at least 2 cases")
    signatures: dict[str, CaseSignature] = {}
    failures: list[tuple[str, str]] = []
    pool_sizes: dict[str, int] = {}
    kept_sizes: list[int] = []
    for case in cohort.cases:
        pool = case_pool(case, splice_cfg)
        pool_sizes[case.case_id] = len(pool)
        collage = splice_case_pool(pool, reselect_cfg, pool_id=case.case_id)
        try:
            signatures[case.case_id] = CaseSignature(
                case_id=case.case_id,
                label=case.label,
                embeddings=select_rows(cohort.embeddings[case.case_id], collage.kept),
            )
        except (ValueError, CohortError) as exc:
            failures.append((case.case_id, str(exc)))
            continue
        kept_sizes.append(len(collage.kept))
    folds, f1_per_k, fold_failures = _lopo_folds(signatures, cohort.label_set, metric, k_set)
    return EvalResult(
        metric=metric,
        folds=tuple(folds),
        f1_per_k=f1_per_k,
        failures=tuple(failures + fold_failures),
        mean_kept=sum(kept_sizes) / len(kept_sizes) if kept_sizes else 0.0,
        mean_pool=sum(pool_sizes.values()) / len(pool_sizes) if pool_sizes else 0.0,
    )


# ---------------------------------------------------------------------------
# Grid search

def _evaluate_block(
    cohort: Cohort,
    s_t: float,
    k: int,
    alpha_values: Sequence[float],
    metrics: Sequence[str],
    k_set: Sequence[int],
    seed: int,
) -> list[GridPoint]:
    """All grid points sharing (s_t, K): cluster once, sweep alpha and metric."""
    splice_cfg = SpliceConfig(s_t)
    clusterings = {}
    failures_base: list[tuple[str, str]] = []
    pool_sizes: dict[str, int] = {}
    labels = {case.case_id: case.label for case in cohort.cases}
    for case in cohort.cases:
        pool = case_pool(case, splice_cfg)
        pool_sizes[case.case_id] = len(pool)
        try:
            clusterings[case.case_id] = cluster_case_pool(case.case_id, pool, k, seed)
        except ValueError as exc:
            failures_base.append((case.case_id, str(exc)))
    mean_pool = sum(pool_sizes.values()) / len(pool_sizes) if pool_sizes else 0.0
    points: list[GridPoint] = []
    for alpha in alpha_values:
        signatures: dict[str, CaseSignature] = {}
        failures = list(failures_base)
        kept_sizes = []
        for case_id, clustering in clusterings.items():
            mosaic = sample_mosaic(clustering, alpha)
            try:
                signatures[case_id] = CaseSignature(
                    case_id=case_id,
                    label=labels[case_id],
                    embeddings=select_rows(cohort.embeddings[case_id], mosaic.kept),
                )
            except (ValueError, CohortError) as exc:
                failures.append((case_id, str(exc)))
                continue
            kept_sizes.append(len(mosaic.kept))
        mean_kept = sum(kept_sizes) / len(kept_sizes) if kept_sizes else 0.0
        for metric in metrics:
            folds, f1_per_k, fold_failures = _lopo_folds(signatures, cohort.label_set, metric, k_set)
            points.append(
                GridPoint(
                    s_t=s_t,
                    k=k,
                    alpha=alpha,
                    metric=metric,
                    f1_per_k=f1_per_k,
                    mean_kept=mean_kept,
                    mean_pool=mean_pool,
                    failures=len(failures) + len(fold_failures),
                )
            )
    return points


_WORKER_COHORT: Cohort | None = None


def _init_worker(cohort: Cohort) -> None:
    global _WORKER_COHORT
    _WORKER_COHORT = cohort


def _block_task(args: tuple) -> list[GridPoint]:
    s_t, k, alpha_values, metrics, k_set, seed = args
    assert _WORKER_COHORT is not None
    return _evaluate_block(_WORKER_COHORT, s_t, k, alpha_values, metrics, k_set, seed)


def grid_search(
    cohort: Cohort,
    s_t_values: Sequence[float],
    k_values: Sequence[int],
    alpha_values: Sequence[float],
    metrics: str | Sequence[str],
    k_set: Sequence[int] = DEFAULT_K_SET,
    seed: int = 724,
    jobs: int = 1,
) -> list[GridPoint]:
    """Evaluate the full (s_t, K, alpha) product under LOPO.

    A fold failure flags its grid point via the `failures` count instead
    of aborting the sweep. Results are sorted by (s_t, K, alpha, metric)
    and do not depend on `jobs`.
    """
    if isinstance(metrics, str):
        metrics = (metrics,)
    if not (s_t_values and k_values and alpha_values and metrics):
        raise ValueError("grid_search requires non-empty value lists")
    s_ts = sorted(set(s_t_values))
    ks = sorted(set(k_values))
    alphas = sorted(set(alpha_values))
    metric_order = sorted(set(metrics))
    tasks = [(s_t, k, alphas, metric_order, tuple(k_set), seed) for s_t in s_ts for k in ks]
    if jobs == 1 or len(tasks) == 1:
        blocks = [_block_task_inline(cohort, task) for task in tasks]
    else:
        chunk = max(1, len(tasks) // (jobs * 8))
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(cohort,)) as pool:
            blocks = list(pool.map(_block_task, tasks, chunksize=chunk))
    points = [p for block in blocks for p in block]
    points.sort(key=lambda p: (p.s_t, p.k, p.alpha, p.metric))
    return points


def _block_task_inline(cohort: Cohort, args: tuple) -> list[GridPoint]:
    s_t, k, alpha_values, metrics, k_set, seed = args
    return _evaluate_block(cohort, s_t, k, alpha_values, metrics, k_set, seed)


def best_by_k(points: Iterable[GridPoint]) -> dict[tuple[str, int], GridPoint]:
    """Best grid point per (metric, k); ties keep the lexicographically first."""
    best: dict[tuple[str, int], GridPoint] = {}
    for point in points:
        for k, score in point.f1_per_k.items():
            key = (point.metric, k)
            if key not in best or score > best[key].f1_per_k[k]:
                best[key] = point
    return best
