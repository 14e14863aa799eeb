"""Hybrid mitosis-detection inference pipeline.

Stain normalization via sparse stain-matrix factorization, overlap-tiled
ensemble segmentation with test-time augmentation, morphological candidate
extraction, classifier-based refinement, balanced sampling utilities, and a
detection evaluation harness.
"""

__version__ = "0.1.0"

from .core import BinaryMask, Detection, OdImage, ProbabilityMap, Rect, RgbImage, crop
from .errors import (
    DegenerateInputError,
    InferenceError,
    InvalidConfigError,
    InvalidInputError,
    MitopipeError,
    OutOfBoundsError,
    PipelineError,
    ProtocolError,
)
from .evaluation import evaluate_detections, match_detections, prf1, soft_jaccard
from .pipeline import PipelineConfig, RunReport, detect
from .pngio import read_mask, read_rgb, write_mask, write_rgb
from .predictor import (
    ALL_TTA,
    Ensemble,
    ensemble_cls,
    ensemble_seg,
    external_predictor,
    oracle_seg_predictor,
    sharpen,
)
from .sampler import make_folds, sample_epoch
from .stain import (
    SnmfConfig,
    StainMatrix,
    StainProfile,
    build_profile,
    fit_stain_matrix,
    normalize_to_profile,
    od_to_rgb,
    rgb_to_od,
    sparse_code,
    tissue_pixels,
)
from .tiling import TileGrid, aggregate, plan_tiles

__all__ = [
    "__version__",
    "BinaryMask", "Detection", "OdImage", "ProbabilityMap", "Rect", "RgbImage", "crop",
    "MitopipeError", "InvalidInputError", "InvalidConfigError", "OutOfBoundsError",
    "DegenerateInputError", "ProtocolError", "InferenceError", "PipelineError",
    "evaluate_detections", "match_detections", "prf1", "soft_jaccard",
    "PipelineConfig", "RunReport", "detect",
    "read_rgb", "write_rgb", "read_mask", "write_mask",
    "ALL_TTA", "Ensemble", "ensemble_seg", "ensemble_cls", "external_predictor",
    "oracle_seg_predictor", "sharpen",
    "make_folds", "sample_epoch",
    "SnmfConfig", "StainMatrix", "StainProfile", "build_profile", "fit_stain_matrix",
    "normalize_to_profile", "od_to_rgb", "rgb_to_od", "sparse_code", "tissue_pixels",
    "TileGrid", "aggregate", "plan_tiles",
]
