"""Candidate refinement: score each candidate with the classifier ensemble on
a 96x96 patch and keep those at or above the classification threshold."""

from __future__ import annotations

from dataclasses import dataclass

from .core import Detection, Rect, RgbImage, crop, round_half_away
from .errors import InferenceError, InvalidConfigError
from .predictor import Ensemble, ensemble_cls

PATCH_SIZE = 96


@dataclass(frozen=True)
class RefineConfig:
    patch: int = PATCH_SIZE
    t_cls: float = 0.6

    def __post_init__(self):
        if self.patch != PATCH_SIZE:
            raise InvalidConfigError(f"classifier patch size is fixed at {PATCH_SIZE}")
        if not (0.0 <= self.t_cls <= 1.0):
            raise InvalidConfigError(f"t_cls must lie in [0, 1], got {self.t_cls}")


def refine_candidates(image: RgbImage, candidates: list[Detection], cls: Ensemble,
                      cfg: RefineConfig | None = None) -> list[Detection]:
    """Re-score candidates with the classifier and keep scores >= t_cls.

    Patches are cropped centered on the rounded candidate position with
    reflect padding at image borders. Kept detections carry the classifier
    score and preserve input order; refinement never adds or moves candidates.
    """
    cfg = cfg or RefineConfig()
    half = cfg.patch // 2
    kept = []
    for idx, det in enumerate(candidates):
        cx = round_half_away(det.x)
        cy = round_half_away(det.y)
        patch = crop(image, Rect(cx - half, cy - half, cfg.patch, cfg.patch), reflect=True)
        try:
            score = ensemble_cls(cls, patch)
        except InferenceError as exc:
            raise InferenceError(f"candidate {idx} at ({det.x}, {det.y}): {exc}") from exc
        if score >= cfg.t_cls:
            kept.append(Detection(x=det.x, y=det.y, score=score))
    return kept
