"""Candidate extraction: threshold the aggregated probability map, clean it
with binary morphology, and reduce connected components to centroids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BinaryMask, Detection, ProbabilityMap
from .errors import InvalidConfigError, InvalidInputError

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class PostprocConfig:
    t_seg: float = 0.4
    open_radius: int = 2
    min_area: int = 30

    def __post_init__(self):
        if not (0.0 <= self.t_seg <= 1.0):
            raise InvalidConfigError(f"t_seg must lie in [0, 1], got {self.t_seg}")
        if self.open_radius < 0:
            raise InvalidConfigError("open_radius must be >= 0")
        if self.min_area < 0:
            raise InvalidConfigError("min_area must be >= 0")


@dataclass(frozen=True)
class LabeledRegions:
    """8-connected regions; label 0 is background, labels 1..region_count are
    assigned in raster-scan discovery order."""

    labels: np.ndarray
    region_count: int

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int32)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


def binarize(pmap: ProbabilityMap, t_seg: float) -> BinaryMask:
    """Threshold inclusively: foreground where map >= t_seg."""
    return BinaryMask(pmap.data >= t_seg)


def disk_offsets(radius: int) -> list[tuple[int, int]]:
    """Offsets of the disk structuring element: dy^2 + dx^2 <= radius^2."""
    r = int(radius)
    return [
        (dy, dx)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if dy * dy + dx * dx <= r * r
    ]


def _shift_reduce(mask: np.ndarray, offsets, combine_and: bool) -> np.ndarray:
    """Erosion (AND over shifts) or dilation (OR over shifts) with zero-padded
    borders, i.e. everything outside the image counts as background."""
    h, w = mask.shape
    r = max(max(abs(dy), abs(dx)) for dy, dx in offsets)
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r : r + h, r : r + w] = mask
    out = np.ones((h, w), dtype=bool) if combine_and else np.zeros((h, w), dtype=bool)
    for dy, dx in offsets:
        window = padded[r + dy : r + dy + h, r + dx : r + dx + w]
        if combine_and:
            out &= window
        else:
            out |= window
    return out


def morph_clean(mask: BinaryMask, cfg: PostprocConfig) -> BinaryMask:
    """Binary opening with a disk of radius ``open_radius``, then removal of
    8-connected components smaller than ``min_area`` pixels."""
    arr = mask.data
    if cfg.open_radius > 0:
        offsets = disk_offsets(cfg.open_radius)
        arr = _shift_reduce(_shift_reduce(arr, offsets, True), offsets, False)
    if cfg.min_area > 0 and arr.any():
        regions = connected_components(BinaryMask(arr))
        areas = np.bincount(regions.labels.ravel(), minlength=regions.region_count + 1)
        keep = areas >= cfg.min_area
        keep[0] = False
        arr = keep[regions.labels]
    return BinaryMask(arr)


def connected_components(mask: BinaryMask) -> LabeledRegions:
    """Label 8-connected foreground regions.

    Labels follow raster-scan discovery order: the region whose first pixel
    appears earliest in row-major order gets label 1, and so on.
    """
    raw, count = ndimage.label(mask.data, structure=_EIGHT_CONNECTED)
    if count == 0:
        return LabeledRegions(raw.astype(np.int32), 0)
    flat = raw.ravel()
    ids, first_seen = np.unique(flat, return_index=True)
    keep = ids != 0
    ids, first_seen = ids[keep], first_seen[keep]
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[ids[np.argsort(first_seen, kind="stable")]] = np.arange(1, count + 1, dtype=np.int32)
    return LabeledRegions(remap[raw], count)


def centroids(regions: LabeledRegions, pmap: ProbabilityMap) -> list[Detection]:
    """One detection per region: unweighted coordinate mean and mean
    probability over member pixels, ordered by label."""
    if (regions.height, regions.width) != (pmap.height, pmap.width):
        raise InvalidInputError(
            f"regions are {regions.width}x{regions.height} but map is {pmap.width}x{pmap.height}"
        )
    if regions.region_count == 0:
        return []
    flat = regions.labels.ravel()
    n = regions.region_count
    counts = np.bincount(flat, minlength=n + 1)
    ys, xs = np.divmod(np.arange(flat.size), regions.width)
    sum_x = np.bincount(flat, weights=xs, minlength=n + 1)
    sum_y = np.bincount(flat, weights=ys, minlength=n + 1)
    sum_p = np.bincount(flat, weights=pmap.data.ravel(), minlength=n + 1)
    return [
        Detection(
            x=sum_x[i] / counts[i],
            y=sum_y[i] / counts[i],
            score=min(1.0, sum_p[i] / counts[i]),
        )
        for i in range(1, n + 1)
    ]
