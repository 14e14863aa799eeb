import math

import numpy as np
import pytest

from conftest import (
    ColorRuleCls,
    ColorRuleSeg,
    ConstantSeg,
    blob_image,
    disk_mask,
    scatter_centers,
    two_stain_image,
)
from mitopipe.core import RgbImage
from mitopipe.errors import InferenceError, PipelineError
from mitopipe.pipeline import PipelineConfig, detect
from mitopipe.postproc import PostprocConfig, binarize, centroids, connected_components, morph_clean
from mitopipe.predictor import TTA_IDENTITY, Ensemble, oracle_seg_predictor
from mitopipe.refine import refine_candidates
from mitopipe.stain import SnmfConfig, build_profile
from mitopipe.tiling import aggregate, plan_tiles


def identity_ensembles(seg_members, cls_members):
    return (
        Ensemble(tuple(seg_members), (TTA_IDENTITY,)),
        Ensemble(tuple(cls_members), (TTA_IDENTITY,)),
    )


def oracle_fixture(true_centers, mimicker_centers, size=512, radius=9):
    """512x512 single-tile fixture: oracle segmenters see every blob, the
    classifier stub tells purple (true) from pink (mimicker)."""
    image = blob_image(size, size, true_centers, mimicker_centers, radius=radius)
    mask = disk_mask(size, size, true_centers + mimicker_centers, radius)
    seg_members = [
        oracle_seg_predictor(mask, blur_radius=1, noise=0.04, seed=s) for s in (1, 2, 3)
    ]
    cls_members = [ColorRuleCls() for _ in range(3)]
    return image, identity_ensembles(seg_members, cls_members)


class TestDetectSingleTile:
    def test_five_planted_blobs(self):
        true_centers = [(80, 90), (200, 150), (350, 300), (120, 400), (430, 430)]
        mimickers = [(300, 80)]
        image, (seg, cls) = oracle_fixture(true_centers, mimickers)
        detections, report = detect(image, PipelineConfig(), seg=seg, cls=cls)
        assert len(detections) == 5
        for cx, cy in true_centers:
            assert any(math.hypot(d.x - cx, d.y - cy) <= 3.0 for d in detections)
        assert report.tile_count == 1
        assert report.candidates_before == 6
        assert report.candidates_after == 5

    def test_blank_image_with_profile_warns(self):
        profile = build_profile(two_stain_image(), SnmfConfig())
        white = RgbImage(np.full((512, 512, 3), 255, dtype=np.uint8))
        mask = disk_mask(512, 512, [], 5)
        seg, cls = identity_ensembles(
            [oracle_seg_predictor(mask, noise=0.04, seed=1)], [ColorRuleCls()]
        )
        cfg = PipelineConfig(profile=profile)
        detections, report = detect(white, cfg, seg=seg, cls=cls)
        assert detections == []
        assert any("background-only" in w for w in report.warnings)
        assert "normalize" in report.stage_seconds

    def test_rerun_is_bit_identical(self):
        image, (seg, cls) = oracle_fixture([(100, 100), (400, 250)], [(250, 400)])
        d1, _ = detect(image, PipelineConfig(), seg=seg, cls=cls)
        d2, _ = detect(image, PipelineConfig(), seg=seg, cls=cls)
        assert d1 == d2


class TestDetectMultiTile:
    def fixture(self, rng):
        true_centers = scatter_centers(rng, 7, 700, 900)
        # one blob deliberately straddling the first tile boundary (x = 437/512)
        true_centers.append((470, 350))
        mimickers = scatter_centers(rng, 2, 700, 900, margin=40, min_dist=200)
        image = blob_image(700, 900, true_centers, mimickers)
        seg, cls = identity_ensembles([ColorRuleSeg()] * 3, [ColorRuleCls()] * 3)
        return image, true_centers, mimickers, seg, cls

    def test_blobs_found_across_tiles(self, rng):
        image, true_centers, mimickers, seg, cls = self.fixture(rng)
        detections, report = detect(image, PipelineConfig(), seg=seg, cls=cls)
        assert report.tile_count == 4  # x-origins [0, 388], y-origins [0, 188]
        assert len(detections) == len(true_centers)
        for cx, cy in true_centers:
            assert any(math.hypot(d.x - cx, d.y - cy) <= 3.0 for d in detections)

    def test_worker_count_does_not_change_output(self, rng):
        image, *_, seg, cls = self.fixture(rng)
        d1, _ = detect(image, PipelineConfig(workers=1), seg=seg, cls=cls)
        d4, _ = detect(image, PipelineConfig(workers=4), seg=seg, cls=cls)
        assert d1 == d4

    def test_matches_manual_stage_composition(self, rng):
        image, *_, seg, cls = self.fixture(rng)
        cfg = PipelineConfig()
        got, _ = detect(image, cfg, seg=seg, cls=cls)

        from mitopipe.core import crop
        from mitopipe.predictor import ensemble_seg

        grid = plan_tiles(image.width, image.height, cfg.tile, cfg.overlap)
        maps = [ensemble_seg(seg, crop(image, r)) for r in grid.origins]
        pmap = aggregate(grid, maps, image.width, image.height)
        mask = morph_clean(binarize(pmap, cfg.postproc.t_seg), cfg.postproc)
        cands = centroids(connected_components(mask), pmap)
        expected = refine_candidates(image, cands, cls, cfg.refine)
        assert got == expected


class TestDetectSmallImage:
    def test_reflect_padding_and_crop_back(self):
        image = blob_image(300, 260, [(130, 150)], [], radius=9)
        seg, cls = identity_ensembles([ColorRuleSeg()], [ColorRuleCls()])
        detections, report = detect(image, PipelineConfig(), seg=seg, cls=cls)
        assert report.tile_count == 1
        assert len(detections) == 1
        assert math.hypot(detections[0].x - 130, detections[0].y - 150) <= 3.0


class TestDetectErrors:
    def test_stage_error_names_stage_and_preserves_cause(self):
        class Broken:
            def predict(self, tile):
                raise RuntimeError("connection refused")

        image = blob_image(512, 512, [(100, 100)], [])
        seg, cls = identity_ensembles([Broken()], [ColorRuleCls()])
        with pytest.raises(PipelineError) as err:
            detect(image, PipelineConfig(), seg=seg, cls=cls)
        assert err.value.stage == "segment"
        cause = err.value.__cause__
        assert isinstance(cause, InferenceError)

    def test_missing_endpoints_rejected(self):
        image = blob_image(64, 64, [], [])
        with pytest.raises(PipelineError, match="endpoints"):
            detect(image, PipelineConfig())


class TestReport:
    def test_report_contents(self):
        image, (seg, cls) = oracle_fixture([(128, 128)], [])
        _, report = detect(image, PipelineConfig(), seg=seg, cls=cls)
        assert set(report.stage_seconds) == {"tile", "segment", "aggregate", "postprocess", "refine"}
        doc = report.to_dict()
        assert doc["tile_count"] == 1
        assert doc["candidates_before"] == 1
        assert doc["candidates_after"] == 1
        assert doc["warnings"] == []

    def test_constant_background_gives_no_candidates(self):
        image = RgbImage(np.full((512, 512, 3), 255, dtype=np.uint8))
        seg, cls = identity_ensembles([ConstantSeg(0.1)], [ColorRuleCls()])
        detections, report = detect(image, PipelineConfig(), seg=seg, cls=cls)
        assert detections == []
        assert report.candidates_before == 0
