"""Pipeline command line: descriptors -> splice -> mosaic -> retrieve/evaluate.

One executable with a subcommand per stage, so intermediates
(collages.json, mosaics.json) can be cached and reused exactly as the
grid sweep expects. Outputs are canonical: sorted JSON keys, scores at
4 decimal places, so repeated runs diff cleanly.

Configuration precedence: explicit flag > TOML config file ([pipeline]
table mirroring the flag names) > CRISP_SEED environment variable (seed
only) > built-in default.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

from . import cohort, evaluation, mosaic, patchdesc, retrieval, splice, synthgen

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


class ConfigError(ValueError):
    """One or more configuration fields are invalid; message lists them all."""


@dataclass(frozen=True)
class PipelineConfig:
    occ_min: float = 0.70
    bg_threshold: int = 220
    s_t: float = 25.0
    k: int = 12
    alpha: float = 3.5
    seed: int = 724
    metric: str = "sum_max_cosine"
    k_set: tuple[int, ...] = (1, 3, 5)

    def problems(self) -> list[str]:
        out = []
        if not 0.0 <= self.occ_min <= 1.0:
            out.append(f"occ-min must lie in [0, 1], got {self.occ_min}")
        if not 0 <= self.bg_threshold <= 255:
            out.append(f"bg-threshold must lie in [0, 255], got {self.bg_threshold}")
        if not 0.0 <= self.s_t <= 100.0:
            out.append(f"s-t must lie in [0, 100], got {self.s_t}")
        if self.k < 1:
            out.append(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.alpha <= 100.0:
            out.append(f"alpha must lie in (0, 100], got {self.alpha}")
        if self.metric not in retrieval.METRICS and self.metric != "both":
            out.append(f"metric must be one of {retrieval.METRICS} or 'both', got {self.metric!r}")
        if not self.k_set or any(k < 1 for k in self.k_set):
            out.append(f"topk values must be >= 1, got {self.k_set}")
        return out


def _load_config_file(path: Path) -> dict:
    with path.open("rb") as fh:
        doc = tomllib.load(fh)
    table = doc.get("pipeline", {})
    return {key.replace("-", "_"): value for key, value in table.items()}


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Merge flags, config file, CRISP_SEED, and defaults; validate everything."""
    cfg = PipelineConfig()
    env_seed = os.environ.get("CRISP_SEED")
    if env_seed is not None:
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"CRISP_SEED must be an integer, got {env_seed!r}")
    config_path = getattr(args, "config", None)
    if config_path:
        file_vals = _load_config_file(Path(config_path))
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(file_vals) - known
        if unknown:
            raise ConfigError(f"unknown [pipeline] config keys: {sorted(unknown)}")
        if "k_set" in file_vals:
            file_vals["k_set"] = tuple(int(v) for v in file_vals["k_set"])
        cfg = replace(cfg, **file_vals)
    overrides = {}
    for name in ("occ_min", "bg_threshold", "s_t", "k", "alpha", "seed", "metric"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    topk = getattr(args, "topk", None)
    if topk is not None:
        overrides["k_set"] = tuple(parse_int_values(topk))
    cfg = replace(cfg, **overrides)
    problems = cfg.problems()
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


# ---------------------------------------------------------------------------
# value-list parsing: "7", "7,9,12", "7..20", "0.25..10.00:0.25"

def parse_int_values(text: str) -> list[int]:
    if ".." in text:
        span, _, step = text.partition(":")
        lo, _, hi = span.partition("..")
        return list(range(int(lo), int(hi) + 1, int(step) if step else 1))
    return [int(v) for v in text.split(",")]


def parse_float_values(text: str) -> list[float]:
    if ".." in text:
        span, _, step_text = text.partition(":")
        lo_text, _, hi_text = span.partition("..")
        lo, hi = float(lo_text), float(hi_text)
        step = float(step_text) if step_text else 1.0
        if step <= 0:
            raise ConfigError(f"range step must be positive in {text!r}")
        count = int((hi - lo) / step + 1e-9) + 1
        return [round(lo + i * step, 10) for i in range(count)]
    return [float(v) for v in text.split(",")]


# ---------------------------------------------------------------------------
# canonical output

def _round_score(value: float) -> float:
    return round(float(value), 4)


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _resolve(workdir: str, path: str) -> Path:
    return Path(workdir) / path


# ---------------------------------------------------------------------------
# subcommands

def cmd_descriptors(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = _resolve(args.workdir, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_slide = patchdesc.describe_tile_dir(
        _resolve(args.workdir, args.tiles),
        occ_min=cfg.occ_min,
        bg_threshold=cfg.bg_threshold,
        tile_size=args.tile_size,
    )
    for slide_id, records in per_slide.items():
        cohort.write_descriptors(out_dir / f"{slide_id}.csv", records)
    print(f"wrote {len(per_slide)} descriptor files to {out_dir}")
    return 0


def _splice_all_slides(data: cohort.Cohort, cfg: splice.SpliceConfig) -> dict:
    out = {}
    for case in data.cases:
        for slide in case.slides:
            collage = splice.splice_slide(slide.patches, cfg)
            out[slide.slide_id] = {"kept": list(collage.kept), "discarded": collage.discarded_count}
    return out


def cmd_splice(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    data = cohort.load_cohort(_resolve(args.workdir, args.manifest))
    payload = _splice_all_slides(data, splice.SpliceConfig(cfg.s_t))
    write_json(_resolve(args.workdir, args.out), payload)
    print(f"spliced {len(payload)} slides at s_t={cfg.s_t:g}")
    return 0


def _pools_from_collages(data: cohort.Cohort, collages: dict) -> dict[str, list[cohort.PatchRecord]]:
    pools: dict[str, list[cohort.PatchRecord]] = {}
    for case in data.cases:
        pool = []
        for slide in case.slides:
            if slide.slide_id not in collages:
                raise cohort.CohortError(f"collages file has no entry for slide {slide.slide_id!r}")
            by_id = {p.patch_id: p for p in slide.patches}
            for pid in collages[slide.slide_id]["kept"]:
                if pid not in by_id:
                    raise cohort.CohortError(f"collage patch {pid!r} unknown on slide {slide.slide_id!r}")
                pool.append(by_id[pid])
        pools[case.case_id] = pool
    return pools


def cmd_mosaic(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    data = cohort.load_cohort(_resolve(args.workdir, args.manifest))
    collages = json.loads(_resolve(args.workdir, args.collages).read_text())
    pools = _pools_from_collages(data, collages)
    payload = {}
    for case in data.cases:
        case_mosaic = mosaic.build_case_mosaic(
            case.case_id, pools[case.case_id], mosaic.MosaicConfig(k=cfg.k, alpha=cfg.alpha, seed=cfg.seed)
        )
        payload[case.case_id] = {
            "kept": list(case_mosaic.kept),
            "clusters": {str(c): list(ids) for c, ids in case_mosaic.per_cluster_kept.items()},
        }
    write_json(_resolve(args.workdir, args.out), payload)
    print(f"built {len(payload)} case mosaics (K={cfg.k}, alpha={cfg.alpha:g}%)")
    return 0


def _signatures_from_mosaics(data: cohort.Cohort, mosaics: dict) -> dict[str, retrieval.CaseSignature]:
    signatures = {}
    for case in data.cases:
        if case.case_id not in mosaics:
            raise cohort.CohortError(f"mosaics file has no entry for case {case.case_id!r}")
        kept = mosaics[case.case_id]["kept"]
        signatures[case.case_id] = retrieval.CaseSignature(
            case_id=case.case_id,
            label=case.label,
            embeddings=cohort.select_rows(data.embeddings[case.case_id], kept),
        )
    return signatures


def cmd_retrieve(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if cfg.metric == "both":
        raise ConfigError("retrieve needs a single metric, not 'both'")
    data = cohort.load_cohort(_resolve(args.workdir, args.manifest))
    mosaics = json.loads(_resolve(args.workdir, args.mosaics).read_text())
    signatures = _signatures_from_mosaics(data, mosaics)
    if args.query not in signatures:
        raise cohort.CohortError(f"query case {args.query!r} not in cohort")
    query = signatures[args.query]
    archive = [signatures[c] for c in sorted(signatures) if c != args.query]
    ranking = retrieval.rank_archive(query, archive, cfg.metric)
    labels = {case.case_id: case.label for case in data.cases}
    payload = {
        "query": args.query,
        "metric": cfg.metric,
        "lower_is_better": ranking.lower_is_better,
        "results": [
            {"case_id": cid, "label": labels[cid], "score": _round_score(score)}
            for cid, score in ranking.entries[: args.top]
        ],
    }
    write_json(_resolve(args.workdir, args.out), payload)
    print(f"ranked {len(ranking.entries)} archive cases for {args.query}")
    return 0


def _report_payload(cfg: PipelineConfig, result: evaluation.EvalResult) -> dict:
    return {
        "config": {
            "s_t": cfg.s_t,
            "k": cfg.k,
            "alpha": cfg.alpha,
            "seed": cfg.seed,
            "metric": result.metric,
            "k_set": sorted(cfg.k_set),
        },
        "macro_f1": {str(k): _round_score(v) for k, v in result.f1_per_k.items()},
        "mean_kept": _round_score(result.mean_kept),
        "mean_pool": _round_score(result.mean_pool),
        "failures": [[cid, reason] for cid, reason in result.failures],
        "folds": [
            {
                "case_id": f.case_id,
                "true_label": f.true_label,
                "predicted": {str(k): v for k, v in f.predicted.items()},
                "ranking": [[cid, _round_score(s)] for cid, s in f.ranking],
            }
            for f in result.folds
        ],
    }


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if cfg.metric == "both":
        raise ConfigError("evaluate needs a single metric, not 'both'")
    data = cohort.load_cohort(_resolve(args.workdir, args.manifest))
    result = evaluation.lopo_evaluate(
        data,
        splice.SpliceConfig(cfg.s_t),
        mosaic.MosaicConfig(k=cfg.k, alpha=cfg.alpha, seed=cfg.seed),
        cfg.metric,
        cfg.k_set,
    )
    write_json(_resolve(args.workdir, args.out), _report_payload(cfg, result))
    summary = ", ".join(f"top-{k}: {v:.1f}" for k, v in sorted(result.f1_per_k.items()))
    print(f"macro-F1 {summary} (mean kept {result.mean_kept:.1f})")
    return 0


GRID_CSV_HEADER = ("s_t", "K", "alpha", "metric", "f1_top1", "f1_top3", "f1_top5", "f1_top7", "mean_kept", "failures")


def cmd_gridsearch(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    data = cohort.load_cohort(_resolve(args.workdir, args.manifest))
    metrics = list(retrieval.METRICS) if cfg.metric == "both" else [cfg.metric]
    s_t_values = parse_float_values(args.s_t_values) if args.s_t_values else [cfg.s_t]
    k_values = parse_int_values(args.k_values) if args.k_values else [cfg.k]
    alpha_values = parse_float_values(args.alpha_values) if args.alpha_values else [cfg.alpha]
    points = evaluation.grid_search(
        data,
        s_t_values,
        k_values,
        alpha_values,
        metrics,
        k_set=evaluation.DEFAULT_K_SET,
        seed=cfg.seed,
        jobs=args.jobs,
    )
    out_path = _resolve(args.workdir, args.out)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_CSV_HEADER)
        for p in points:
            writer.writerow(
                [
                    f"{p.s_t:g}",
                    p.k,
                    f"{p.alpha:g}",
                    p.metric,
                    *(f"{p.f1_per_k[k]:.4f}" for k in evaluation.DEFAULT_K_SET),
                    f"{p.mean_kept:.4f}",
                    p.failures,
                ]
            )
    for (metric, k), point in sorted(evaluation.best_by_k(points).items()):
        print(
            f"best top-{k} [{metric}]: F1 {point.f1_per_k[k]:.2f} at "
            f"s_t={point.s_t:g}, K={point.k}, alpha={point.alpha:g}%"
        )
    print(f"wrote {len(points)} grid points to {out_path}")
    return 0


def _parse_count_range(text: str) -> tuple[int, int]:
    values = parse_int_values(text)
    return (values[0], values[-1])


def cmd_synth(args: argparse.Namespace) -> int:
    spec = synthgen.SynthSpec(
        n_classes=args.classes,
        cases_per_class=args.cases_per_class,
        slides_per_case=_parse_count_range(args.slides_per_case),
        patches_per_slide=_parse_count_range(args.patches_per_slide),
        class_mode_separation=args.separation,
        redundancy_rate=args.redundancy,
        embed_dim=args.dim,
        seed=args.seed if args.seed is not None else int(os.environ.get("CRISP_SEED", 724)),
    )
    manifest = synthgen.generate(spec, _resolve(args.workdir, args.out))
    n_slides = sum(len(c.slides) for c in manifest.cases)
    print(f"generated cohort {manifest.cohort_id}: {len(manifest.cases)} cases, {n_slides} slides")
    return 0


# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--workdir", default=".", help="base directory for all paths")
    sub.add_argument("--config", default=None, help="TOML config file with a [pipeline] table")
    sub.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")


def _add_pipeline_flags(sub: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "occ_min": dict(type=float, help="minimum tissue occupancy"),
        "bg_threshold": dict(type=int, help="background brightness threshold"),
        "s_t": dict(type=float, help="redundancy percentile threshold"),
        "k": dict(type=int, help="k-means cluster count"),
        "alpha": dict(type=float, help="per-cluster retention percent"),
        "seed": dict(type=int, help="random seed"),
        "metric": dict(type=str, help="median_min_euclidean | sum_max_cosine | both"),
        "topk": dict(type=str, help="comma-separated vote depths, e.g. 1,3,5"),
    }
    for name in names:
        sub.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, **flags[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crisp",
        description="Case-level patch distillation and retrieval over multi-slide cohorts.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("descriptors", help="descriptor CSVs from a directory of tile PNGs")
    p.add_argument("--tiles", required=True, help="directory of <slide>__<x>_<y>.png tiles")
    p.add_argument("--out", required=True, help="output directory for descriptor CSVs")
    p.add_argument("--tile-size", type=int, default=patchdesc.DEFAULT_TILE_SIZE)
    _add_pipeline_flags(p, "occ_min", "bg_threshold")
    _add_common(p)
    p.set_defaults(func=cmd_descriptors)

    p = subs.add_parser("splice", help="per-slide redundancy pruning")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="collages.json")
    _add_pipeline_flags(p, "s_t")
    _add_common(p)
    p.set_defaults(func=cmd_splice)

    p = subs.add_parser("mosaic", help="case mosaics from cached collages")
    p.add_argument("--manifest", required=True)
    p.add_argument("--collages", required=True)
    p.add_argument("--out", required=True, help="mosaics.json")
    _add_pipeline_flags(p, "k", "alpha", "seed")
    _add_common(p)
    p.set_defaults(func=cmd_mosaic)

    p = subs.add_parser("retrieve", help="rank the archive for one query case")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mosaics", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out", required=True, help="ranking.json")
    _add_pipeline_flags(p, "metric")
    _add_common(p)
    p.set_defaults(func=cmd_retrieve)

    p = subs.add_parser("evaluate", help="leave-one-patient-out evaluation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report.json")
    _add_pipeline_flags(p, "s_t", "k", "alpha", "seed", "metric", "topk")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("gridsearch", help="sweep the (s_t, K, alpha) product")
    p.add_argument("--manifest", required=True)
    p.add_argument("--s-t", dest="s_t_values", default=None, help="e.g. 20..40 or 20,25,30")
    p.add_argument("--k", dest="k_values", default=None, help="e.g. 7..20")
    p.add_argument("--alpha", dest="alpha_values", default=None, help="e.g. 0.25..10.00:0.25")
    p.add_argument("--out", required=True, help="grid.csv")
    _add_pipeline_flags(p, "seed", "metric")
    _add_common(p)
    p.set_defaults(func=cmd_gridsearch)

    p = subs.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--cases-per-class", type=int, required=True)
    p.add_argument("--slides-per-case", default="2..3", help="range lo..hi or single value")
    p.add_argument("--patches-per-slide", default="60..100", help="range lo..hi")
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--redundancy", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output cohort directory")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (cohort.CohortError, ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
