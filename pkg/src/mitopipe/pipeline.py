"""End-to-end detection: normalize, tile, ensemble-segment, aggregate,
postprocess, refine.

Stain normalization runs first so every tile sees normalized pixels; images
smaller than the tile size are reflect-padded for inference and the
aggregated map is cropped back. Tile inference fans out to a thread pool,
but results are aggregated in planned tile order, so outputs are identical
for any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .core import Detection, ProbabilityMap, Rect, RgbImage, crop
from .errors import MitopipeError, PipelineError
from .postproc import PostprocConfig, binarize, centroids, connected_components, morph_clean
from .predictor import ALL_TTA, TTA_IDENTITY, Ensemble, ensemble_seg
from .refine import RefineConfig, refine_candidates
from .stain import SnmfConfig, StainProfile, normalize_to_profile
from .tiling import DEFAULT_OVERLAP, DEFAULT_TILE, aggregate, plan_tiles


@dataclass(frozen=True)
class PipelineConfig:
    """Composite configuration of every stage.

    ``profile`` is optional: without one the stain stage is skipped (useful
    for already-normalized input). Predictor endpoints, when given, let
    ``build_ensembles`` construct the external-process members; library
    callers may instead pass ready ensembles to ``detect``.
    """

    stain: SnmfConfig = field(default_factory=SnmfConfig)
    profile: StainProfile | None = None
    tile: int = DEFAULT_TILE
    overlap: int = DEFAULT_OVERLAP
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    seg_endpoints: tuple[str, ...] = ()
    cls_endpoints: tuple[str, ...] = ()
    tta: bool = True
    workers: int = 1
    timeout: float = 30.0


@dataclass(frozen=True)
class RunReport:
    """Per-run diagnostics attached to every successful detection pass."""

    stage_seconds: dict[str, float]
    tile_count: int
    candidates_before: int
    candidates_after: int
    warnings: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "stage_seconds": self.stage_seconds,
            "tile_count": self.tile_count,
            "candidates_before": self.candidates_before,
            "candidates_after": self.candidates_after,
            "warnings": list(self.warnings),
        }


def build_ensembles(cfg: PipelineConfig) -> tuple[Ensemble, Ensemble]:
    """Construct seg/cls ensembles from the configured external endpoints."""
    from .predictor import external_predictor

    if not cfg.seg_endpoints or not cfg.cls_endpoints:
        raise PipelineError("setup", "config defines no predictor endpoints")
    tta = ALL_TTA if cfg.tta else (TTA_IDENTITY,)
    seg = Ensemble(
        members=tuple(external_predictor(e, "seg", cfg.timeout) for e in cfg.seg_endpoints),
        tta=tta,
    )
    cls = Ensemble(
        members=tuple(external_predictor(e, "cls", cfg.timeout) for e in cfg.cls_endpoints),
        tta=tta,
    )
    return seg, cls


def _run_stage(name: str, fn, timings: dict):
    start = time.perf_counter()
    try:
        result = fn()
    except PipelineError:
        raise
    except MitopipeError as exc:
        raise PipelineError(name, str(exc)) from exc
    timings[name] = time.perf_counter() - start
    return result


def detect(image: RgbImage, cfg: PipelineConfig, seg: Ensemble | None = None,
           cls: Ensemble | None = None) -> tuple[list[Detection], RunReport]:
    """Run the full pipeline on one image.

    Ensembles default to external predictors built from the config endpoints.
    Stage failures abort the run (no partial results); inference and protocol
    errors propagate unchanged so callers can distinguish them.
    """
    if seg is None or cls is None:
        built_seg, built_cls = build_ensembles(cfg)
        seg = seg or built_seg
        cls = cls or built_cls
    timings: dict[str, float] = {}
    warnings: list[str] = []

    if cfg.profile is not None:
        def normalize():
            result = normalize_to_profile(image, cfg.profile, cfg.stain)
            if result.warning:
                warnings.append(result.warning)
            return result.image
        work = _run_stage("normalize", normalize, timings)
    else:
        work = image

    width, height = work.width, work.height
    padded_w, padded_h = max(width, cfg.tile), max(height, cfg.tile)
    if (padded_w, padded_h) != (width, height):
        work_padded = crop(work, Rect(0, 0, padded_w, padded_h), reflect=True)
    else:
        work_padded = work

    grid = _run_stage(
        "tile", lambda: plan_tiles(padded_w, padded_h, cfg.tile, cfg.overlap), timings
    )

    def segment():
        tiles = [crop(work_padded, rect, reflect=False) for rect in grid.origins]
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                return list(pool.map(lambda t: ensemble_seg(seg, t), tiles))
        return [ensemble_seg(seg, t) for t in tiles]

    tile_maps = _run_stage("segment", segment, timings)

    def aggregate_maps():
        pmap = aggregate(grid, tile_maps, padded_w, padded_h)
        if (padded_w, padded_h) != (width, height):
            return ProbabilityMap(pmap.data[:height, :width])
        return pmap

    full_map = _run_stage("aggregate", aggregate_maps, timings)

    def postprocess():
        mask = morph_clean(binarize(full_map, cfg.postproc.t_seg), cfg.postproc)
        return centroids(connected_components(mask), full_map)

    candidates = _run_stage("postprocess", postprocess, timings)

    detections = _run_stage(
        "refine", lambda: refine_candidates(work, candidates, cls, cfg.refine), timings
    )

    report = RunReport(
        stage_seconds=timings,
        tile_count=len(grid.origins),
        candidates_before=len(candidates),
        candidates_after=len(detections),
        warnings=tuple(warnings),
    )
    return detections, report
