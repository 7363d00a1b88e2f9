"""anchorlap: anchor-lattice overlap analysis for box detection.

Exact IoU geometry, expected-max-overlap (EMO) estimation, anchor lattice
construction with stride reduction and shifted sub-lattices, max-IoU
matching with jittering and hard-face compensation, annotation coverage
analytics, and an exhaustive anchor-design optimizer.
"""

from .geometry import RectBox, intersect_area, iou, iou_offset_square, iou_xywh
from .layout import (
    AnchorLayout,
    AnchorSpec,
    LatticeGroup,
    build_layout,
    covering_radius,
    effective_anchor_stride,
    nearest_centers,
)
from .emo import (
    EmoCell,
    EmoEstimate,
    EmoQuery,
    emo_closed_form,
    emo_monte_carlo,
    emo_table,
)
from .matching import (
    LABEL_IGNORE,
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    MatchConfig,
    MatchResult,
    apply_jitter,
    compensate_hard_faces,
    match_faces,
    max_overlap,
    max_overlap_values,
    overlapping_anchors,
)
from .dataset import (
    DEFAULT_BUCKET_EDGES,
    AnnotationError,
    FaceRecord,
    JitterReport,
    ParsedAnnotations,
    ScaleBucketReport,
    bounding_plane,
    bucket_stats,
    compare_layouts,
    jitter_experiment,
    parse_annotations,
)
from .optimizer import ConfigScore, SearchSpace, enumerate_configs, evaluate_config, optimize
from .specfile import load_space, load_spec, save_spec, spec_from_dict, spec_json, spec_to_dict
from .rng import stream

__version__ = "0.1.0"

__all__ = [
    "RectBox",
    "intersect_area",
    "iou",
    "iou_offset_square",
    "iou_xywh",
    "AnchorSpec",
    "AnchorLayout",
    "LatticeGroup",
    "build_layout",
    "effective_anchor_stride",
    "covering_radius",
    "nearest_centers",
    "EmoQuery",
    "EmoEstimate",
    "EmoCell",
    "emo_closed_form",
    "emo_monte_carlo",
    "emo_table",
    "MatchConfig",
    "MatchResult",
    "LABEL_POSITIVE",
    "LABEL_NEGATIVE",
    "LABEL_IGNORE",
    "match_faces",
    "compensate_hard_faces",
    "apply_jitter",
    "max_overlap",
    "max_overlap_values",
    "overlapping_anchors",
    "FaceRecord",
    "AnnotationError",
    "ParsedAnnotations",
    "parse_annotations",
    "DEFAULT_BUCKET_EDGES",
    "ScaleBucketReport",
    "JitterReport",
    "bucket_stats",
    "jitter_experiment",
    "compare_layouts",
    "bounding_plane",
    "SearchSpace",
    "ConfigScore",
    "enumerate_configs",
    "evaluate_config",
    "optimize",
    "spec_from_dict",
    "spec_to_dict",
    "spec_json",
    "load_spec",
    "save_spec",
    "load_space",
    "stream",
    "__version__",
]
