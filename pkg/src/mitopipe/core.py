"""Shared image and geometry types used by every other module.

All pixel containers wrap a NumPy array that is marked read-only at
construction time, so instances can be shared freely across worker threads.
Images are row-major with the origin at the top-left corner; ``x`` indexes
columns and ``y`` indexes rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, OutOfBoundsError

#: Maximum optical density representable by an 8-bit channel, -ln(1/256).
LN256 = float(np.log(256.0))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB raster, shape (height, width, 3), dtype uint8."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3 or d.dtype != np.uint8:
            raise InvalidInputError(
                f"RgbImage expects (h, w, 3) uint8 data, got shape {d.shape} dtype {d.dtype}"
            )
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise InvalidInputError("RgbImage must be at least 1x1")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class OdImage:
    """Optical-density raster, shape (height, width, 3), values in [0, ln 256]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise InvalidInputError(f"OdImage expects (h, w, 3) data, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise InvalidInputError("OdImage contains non-finite values")
        if d.min() < 0.0 or d.max() > LN256 + 1e-9:
            raise InvalidInputError("OdImage values must lie in [0, ln 256]")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel probabilities, shape (height, width), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise InvalidInputError(f"ProbabilityMap expects 2-d data, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise InvalidInputError("ProbabilityMap contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise InvalidInputError("ProbabilityMap values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean foreground mask, shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2 or d.dtype != np.bool_:
            raise InvalidInputError(f"BinaryMask expects 2-d bool data, got shape {d.shape} dtype {d.dtype}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Detection:
    """A candidate or final mitosis: sub-pixel center plus confidence score."""

    x: float
    y: float
    score: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "score", float(self.score))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError("Detection coordinates must be finite")
        if not (0.0 <= self.score <= 1.0):
            raise InvalidInputError(f"Detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel window.

    The origin may be negative: reflect-padded crops (patches centered near
    the top/left border) legitimately overhang the image on any side.
    """

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("Rect width and height must be >= 1")


def round_half_away(v: float) -> int:
    """Round to the nearest integer with ties going away from zero."""
    return int(math.floor(v + 0.5)) if v >= 0 else int(math.ceil(v - 0.5))


def reflect_index(i: int, n: int) -> int:
    """Map an arbitrary index onto [0, n) by mirror reflection at the borders.

    The edge sample participates in the mirror (symmetric reflection), so for
    n = 4 the extension reads ... 1 0 | 0 1 2 3 | 3 2 ...
    """
    period = 2 * n
    m = i % period
    return m if m < n else period - 1 - m


def _reflect_indices(start: int, count: int, n: int) -> np.ndarray:
    idx = np.arange(start, start + count)
    m = np.mod(idx, 2 * n)
    return np.where(m < n, m, 2 * n - 1 - m)


def crop_array(arr: np.ndarray, window: Rect, reflect: bool = False) -> np.ndarray:
    """Crop a 2-d or 3-d row-major array to ``window``.

    With ``reflect`` enabled, out-of-bounds samples are filled by mirror
    reflection about the array border; otherwise the window must lie fully
    inside the array.
    """
    h, w = arr.shape[0], arr.shape[1]
    if not reflect:
        if window.x0 < 0 or window.y0 < 0 or window.x0 + window.width > w or window.y0 + window.height > h:
            raise OutOfBoundsError(
                f"window {window} exceeds {w}x{h} image and reflect padding is disabled"
            )
        return arr[window.y0 : window.y0 + window.height, window.x0 : window.x0 + window.width].copy()
    rows = _reflect_indices(window.y0, window.height, h)
    cols = _reflect_indices(window.x0, window.width, w)
    return arr[np.ix_(rows, cols)]


def crop(image: RgbImage, window: Rect, reflect: bool = False) -> RgbImage:
    """Extract ``window`` from ``image``, mirror-padding out-of-bounds pixels.

    Raises OutOfBoundsError if the window is not fully inside the image and
    ``reflect`` is disabled.
    """
    return RgbImage(crop_array(image.data, window, reflect=reflect))
