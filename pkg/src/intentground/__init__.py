"""Egocentric intention-grounding benchmark toolkit.

Builds intention-grounding datasets (candidate generation, checker gating,
human annotation), runs direct / reason-then-ground / detector-hybrid
inference pipelines against pluggable model backends, and scores the
results with IoU-based benchmark metrics.
"""

from .geometry import BBox, ImageSize, InvalidBoxError, best_match, clamp_to_image, iou
from .grammar import (
    GrammarSpec,
    ParsedOutput,
    extract_category,
    get_grammar,
    load_grammars,
    parse_boxes,
    serialize_box,
)
from .metrics import (
    MetricReport,
    ScoredSample,
    aggregate_overall,
    build_report,
    mean_iou,
    precision_at,
)

__all__ = [
    "BBox",
    "ImageSize",
    "InvalidBoxError",
    "GrammarSpec",
    "ParsedOutput",
    "MetricReport",
    "ScoredSample",
    "aggregate_overall",
    "best_match",
    "build_report",
    "clamp_to_image",
    "extract_category",
    "get_grammar",
    "iou",
    "load_grammars",
    "mean_iou",
    "parse_boxes",
    "precision_at",
    "serialize_box",
]

__version__ = "0.1.0"
