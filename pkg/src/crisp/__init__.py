"""Case-level patch distillation and set-to-set retrieval for multi-slide cohorts.

Pipeline: tile descriptors -> per-slide redundancy pruning -> case-level
k-means mosaic -> exact set-to-set retrieval -> leave-one-patient-out
evaluation and grid search.
"""

from .cohort import (
    Case,
    Cohort,
    CohortError,
    CohortManifest,
    EmbeddingMatrix,
    PatchRecord,
    Slide,
    load_cohort,
    load_descriptors,
    load_embeddings,
    load_manifest,
    select_rows,
    write_descriptors,
    write_embeddings,
)
from .evaluation import (
    EvalResult,
    FoldResult,
    GridPoint,
    best_by_k,
    grid_search,
    lopo_evaluate,
    lopo_evaluate_reselect,
    macro_f1,
    majority_vote,
)
from .mosaic import (
    CaseMosaic,
    MosaicConfig,
    build_case_mosaic,
    build_yottixel_mosaic,
    lloyd_kmeans,
    reduction_stats,
)
from .patchdesc import PatchImage, descriptor, filter_and_describe, occupancy
from .retrieval import (
    METRICS,
    CaseSignature,
    Ranking,
    median_of_min_distance,
    rank_archive,
    sum_of_max_cosine,
)
from .splice import SlideCollage, SpliceConfig, splice_case_pool, splice_slide
from .synthgen import SynthSpec, generate, generate_heterogeneous

__version__ = "0.1.0"
