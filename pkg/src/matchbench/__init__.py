"""matchbench: a benchmark harness for feature-matching pipelines on
homography-annotated image-sequence datasets.

Feature sets move through a bit-exact interchange format, matching is
exhaustive mutual nearest neighbor search with a bidirectional ratio test,
geometry is estimated by seeded RANSAC over a normalized DLT, and the
evaluation engine sweeps a per-method threshold reporting mean matching
accuracy (MMA), homography estimation accuracy (HEA) and their AUCs.
"""

from .dataset import (
    Dataset,
    GrayImage,
    ImagePair,
    SequenceRecord,
    Subset,
    default_exclusions,
    generate_synthetic_sequence,
    iterate_pairs,
    load_dataset,
    load_exclusion_list,
    load_gray_image,
    random_block_texture,
    save_sequence_dir,
    warp_image,
)
from .extractor import (
    BriefPattern,
    FastConfig,
    compute_orientation,
    describe_brief,
    detect_fast,
    extract,
    fast_score_map,
)
from .features import (
    DescriptorKind,
    DescriptorMatrix,
    FeatureSet,
    Keypoint,
    Metric,
    ScoredMatchFile,
    distance,
    load_features,
    load_scored_matches,
    metric_for,
    save_features,
    save_scored_matches,
)
from .geometry import (
    Correspondence,
    Homography,
    RansacConfig,
    RansacResult,
    apply_homography,
    corner_transfer_error,
    dlt_homography,
    ransac_homography,
    reprojection_error,
    reprojection_errors,
)
from .matching import (
    Match,
    MatchSet,
    MethodKind,
    ThresholdAssignment,
    effective_thresholds,
    filter_scored_matches,
    match_mnns_brt,
    mutual_candidates,
    nearest_two,
)
from .sweep import (
    Curve,
    FeatureDirSource,
    MatchDirSource,
    PairResult,
    SweepEntry,
    SweepResult,
    aggregate,
    auc,
    best_threshold,
    emit_report,
    extract_dataset_features,
    format_table,
    hea_for_pair,
    in_memory_features,
    in_memory_matches,
    mma_for_pair,
    run_sweep,
)

__version__ = "0.1.0"
