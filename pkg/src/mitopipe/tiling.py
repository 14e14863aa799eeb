"""Overlap tiling of large images and aggregation of per-tile predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ProbabilityMap, Rect
from .errors import InvalidConfigError, InvalidInputError

DEFAULT_TILE = 512
DEFAULT_OVERLAP = 75


@dataclass(frozen=True)
class TileGrid:
    """Plan of tile windows covering an image; all windows are tile x tile."""

    tile: int
    overlap: int
    origins: tuple[Rect, ...]


def _axis_origins(dim: int, tile: int, stride: int) -> list[int]:
    out = []
    k = 0
    while k * stride + tile < dim:
        out.append(k * stride)
        k += 1
    last = max(dim - tile, 0)
    if not out or out[-1] != last:
        out.append(last)
    return out


def plan_tiles(width: int, height: int, tile: int = DEFAULT_TILE,
               overlap: int = DEFAULT_OVERLAP) -> TileGrid:
    """Plan tile origins at stride tile - overlap, final origin clamped.

    Every pixel is covered by at least one tile. Images smaller than the tile
    size get a single origin at (0, 0); callers are expected to reflect-pad
    such images up to the tile size before running inference.
    """
    if tile < 1:
        raise InvalidConfigError(f"tile must be >= 1, got {tile}")
    if not (0 <= overlap < tile):
        raise InvalidConfigError(f"overlap must lie in [0, tile), got {overlap}")
    if width < 1 or height < 1:
        raise InvalidInputError("image dimensions must be >= 1")
    stride = tile - overlap
    xs = _axis_origins(width, tile, stride)
    ys = _axis_origins(height, tile, stride)
    origins = tuple(Rect(x, y, tile, tile) for y in ys for x in xs)
    return TileGrid(tile=tile, overlap=overlap, origins=origins)


def aggregate(grid: TileGrid, tile_maps: list[ProbabilityMap], width: int,
              height: int) -> ProbabilityMap:
    """Average per-tile probability maps into one width x height map.

    Each output pixel is the mean over all tiles covering it, accumulated in
    planned tile order so the reduction is reproducible bit for bit. Where
    every covering tile agrees exactly, the output is that agreed value with
    no floating-point drift (consensus pixels bypass the sum/count division).
    """
    if len(tile_maps) != len(grid.origins):
        raise InvalidInputError(
            f"expected {len(grid.origins)} tile maps, got {len(tile_maps)}"
        )
    total = np.zeros((height, width))
    count = np.zeros((height, width), dtype=np.int64)
    first = np.zeros((height, width))
    consensus = np.ones((height, width), dtype=bool)
    for rect, pmap in zip(grid.origins, tile_maps):
        if pmap.width != grid.tile or pmap.height != grid.tile:
            raise InvalidInputError(
                f"tile map is {pmap.width}x{pmap.height}, expected {grid.tile}x{grid.tile}"
            )
        y1 = min(rect.y0 + rect.height, height)
        x1 = min(rect.x0 + rect.width, width)
        src = pmap.data[: y1 - rect.y0, : x1 - rect.x0]
        dst = (slice(rect.y0, y1), slice(rect.x0, x1))
        fresh = count[dst] == 0
        total[dst] += src
        count[dst] += 1
        first[dst] = np.where(fresh, src, first[dst])
        consensus[dst] &= fresh | (src == first[dst])
    if (count == 0).any():
        raise InvalidInputError("tile grid does not cover the full image")
    out = total / count
    out[consensus] = first[consensus]
    return ProbabilityMap(np.clip(out, 0.0, 1.0))
