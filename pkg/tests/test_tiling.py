import numpy as np
import pytest

from mitopipe.core import ProbabilityMap, Rect
from mitopipe.errors import InvalidConfigError, InvalidInputError
from mitopipe.tiling import aggregate, plan_tiles


def origins_xy(grid):
    xs = sorted({r.x0 for r in grid.origins})
    ys = sorted({r.y0 for r in grid.origins})
    return xs, ys


class TestPlanTiles:
    def test_image_equals_tile(self):
        grid = plan_tiles(512, 512, 512, 75)
        assert grid.origins == (Rect(0, 0, 512, 512),)

    def test_1000_square(self):
        # enumeration 0, 437, 874 -> clamp 488, dedupe
        grid = plan_tiles(1000, 1000, 512, 75)
        xs, ys = origins_xy(grid)
        assert xs == [0, 437, 488]
        assert ys == [0, 437, 488]
        assert len(grid.origins) == 9

    def test_2048_square(self):
        grid = plan_tiles(2048, 2048, 512, 75)
        xs, ys = origins_xy(grid)
        assert xs == [0, 437, 874, 1311, 1536]
        assert ys == xs
        assert len(grid.origins) == 25

    def test_smaller_than_tile(self):
        grid = plan_tiles(300, 200, 512, 75)
        assert grid.origins == (Rect(0, 0, 512, 512),)

    def test_invalid_overlap(self):
        with pytest.raises(InvalidConfigError):
            plan_tiles(100, 100, 64, 64)
        with pytest.raises(InvalidConfigError):
            plan_tiles(100, 100, 64, -1)

    def test_full_coverage_random_sizes(self, rng):
        for _ in range(30):
            w = int(rng.integers(1, 400))
            h = int(rng.integers(1, 400))
            tile = int(rng.integers(1, 128))
            overlap = int(rng.integers(0, tile))
            grid = plan_tiles(w, h, tile, overlap)
            covered = np.zeros((h, w), dtype=int)
            for r in grid.origins:
                covered[r.y0 : r.y0 + r.height, r.x0 : r.x0 + r.width] += 1
            assert (covered >= 1).all(), (w, h, tile, overlap)

    def test_pure_and_deterministic(self):
        a = plan_tiles(1234, 987, 512, 75)
        b = plan_tiles(1234, 987, 512, 75)
        assert a == b


class TestAggregate:
    def test_constant_maps_exact(self):
        grid = plan_tiles(1000, 1000, 512, 75)
        maps = [ProbabilityMap(np.full((512, 512), 0.7)) for _ in grid.origins]
        out = aggregate(grid, maps, 1000, 1000)
        assert np.all(out.data == 0.7)

    def test_two_tile_strip_mean(self):
        # two 4x4 tiles on a 6x4 canvas overlap on columns 2..3
        grid = plan_tiles(6, 4, 4, 2)
        assert [r.x0 for r in grid.origins] == [0, 2]
        maps = [
            ProbabilityMap(np.full((4, 4), 0.2)),
            ProbabilityMap(np.full((4, 4), 0.8)),
        ]
        out = aggregate(grid, maps, 6, 4)
        assert np.all(out.data[:, :2] == 0.2)
        assert np.all(out.data[:, 2:4] == 0.5)
        assert np.all(out.data[:, 4:] == 0.8)

    def test_order_insensitive_within_tolerance(self, rng):
        grid = plan_tiles(300, 300, 128, 40)
        maps = [ProbabilityMap(rng.random((128, 128))) for _ in grid.origins]
        base = aggregate(grid, maps, 300, 300).data

        perm = rng.permutation(len(maps))
        grid_p = type(grid)(grid.tile, grid.overlap, tuple(grid.origins[i] for i in perm))
        maps_p = [maps[i] for i in perm]
        out = aggregate(grid_p, maps_p, 300, 300).data
        assert np.abs(out - base).max() <= 1e-12

    def test_map_count_mismatch(self):
        grid = plan_tiles(1000, 1000, 512, 75)
        with pytest.raises(InvalidInputError):
            aggregate(grid, [ProbabilityMap(np.zeros((512, 512)))], 1000, 1000)

    def test_wrong_tile_size(self):
        grid = plan_tiles(512, 512, 512, 75)
        with pytest.raises(InvalidInputError):
            aggregate(grid, [ProbabilityMap(np.zeros((256, 256)))], 512, 512)

    def test_values_stay_in_range(self, rng):
        grid = plan_tiles(200, 150, 64, 20)
        maps = [ProbabilityMap(rng.random((64, 64))) for _ in grid.origins]
        out = aggregate(grid, maps, 200, 150)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0
