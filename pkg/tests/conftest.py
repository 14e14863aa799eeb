"""Shared synthetic fixtures and deterministic predictor doubles."""

from __future__ import annotations

import numpy as np
import pytest

from mitopipe.core import BinaryMask, ProbabilityMap, RgbImage
from mitopipe.stain import RUIFROK_HE, od_to_rgb
from mitopipe.core import OdImage

# Blob colors used by pipeline fixtures: both read as candidate-like tissue,
# only TRUE_COLOR marks a real mitosis for the classifier stub.
TRUE_COLOR = np.array([120, 50, 150], dtype=np.uint8)       # purple
MIMICKER_COLOR = np.array([230, 120, 180], dtype=np.uint8)  # pink


def he_stain_matrix() -> np.ndarray:
    """Unit-norm Ruifrok H&E stain matrix (3x2)."""
    return RUIFROK_HE / np.linalg.norm(RUIFROK_HE, axis=0, keepdims=True)


def render_from_concentrations(conc: np.ndarray, w_matrix: np.ndarray,
                               height: int, width: int) -> RgbImage:
    """Render a (2, height*width) concentration field through a stain matrix."""
    od = (w_matrix @ conc).T.reshape(height, width, 3)
    return od_to_rgb(OdImage(np.clip(od, 0.0, np.log(256.0))))


def two_stain_image(height: int = 120, width: int = 120, seed: int = 3,
                    w_matrix: np.ndarray | None = None,
                    tissue_fraction: float = 0.7) -> RgbImage:
    """Synthetic H&E-like image: tissue pixels with clear two-stain content
    over a pure-white background."""
    w_matrix = he_stain_matrix() if w_matrix is None else w_matrix
    rng = np.random.default_rng(seed)
    n = height * width
    tissue = rng.random(n) < tissue_fraction
    conc = np.zeros((2, n))
    conc[0, tissue] = rng.uniform(0.3, 1.6, tissue.sum())
    conc[1, tissue] = rng.uniform(0.2, 1.2, tissue.sum())
    return render_from_concentrations(conc, w_matrix, height, width)


def paint_disk(arr: np.ndarray, cx: int, cy: int, radius: int, color: np.ndarray) -> None:
    ys, xs = np.ogrid[: arr.shape[0], : arr.shape[1]]
    arr[(ys - cy) ** 2 + (xs - cx) ** 2 <= radius * radius] = color


def disk_mask(height: int, width: int, centers: list[tuple[int, int]],
              radius: int) -> BinaryMask:
    mask = np.zeros((height, width), dtype=bool)
    ys, xs = np.ogrid[:height, :width]
    for cx, cy in centers:
        mask |= (ys - cy) ** 2 + (xs - cx) ** 2 <= radius * radius
    return BinaryMask(mask)


def blob_image(height: int, width: int, true_centers: list[tuple[int, int]],
               mimicker_centers: list[tuple[int, int]] | None = None,
               radius: int = 9) -> RgbImage:
    """White image with purple true-mitosis disks and pink mimicker disks."""
    arr = np.full((height, width, 3), 255, dtype=np.uint8)
    for cx, cy in true_centers:
        paint_disk(arr, cx, cy, radius, TRUE_COLOR)
    for cx, cy in mimicker_centers or []:
        paint_disk(arr, cx, cy, radius, MIMICKER_COLOR)
    return RgbImage(arr)


def scatter_centers(rng: np.random.Generator, count: int, height: int, width: int,
                    margin: int = 30, min_dist: int = 60) -> list[tuple[int, int]]:
    """Random well-separated centers; deterministic given the generator state."""
    centers: list[tuple[int, int]] = []
    while len(centers) < count:
        cx = int(rng.integers(margin, width - margin))
        cy = int(rng.integers(margin, height - margin))
        if all((cx - x) ** 2 + (cy - y) ** 2 >= min_dist**2 for x, y in centers):
            centers.append((cx, cy))
    return centers


class ConstantSeg:
    """Segmentation double returning a constant probability everywhere."""

    def __init__(self, value: float):
        self.value = value

    def predict(self, tile: RgbImage) -> ProbabilityMap:
        return ProbabilityMap(np.full((tile.height, tile.width), self.value))


class ConstantCls:
    def __init__(self, value: float):
        self.value = value

    def predict(self, patch: RgbImage) -> float:
        return self.value


class PointwiseSeg:
    """Flip-equivariant double: probability is a function of each pixel alone."""

    def predict(self, tile: RgbImage) -> ProbabilityMap:
        g = tile.data[:, :, 1].astype(np.float64)
        return ProbabilityMap((255.0 - g) / 255.0)


class ColorRuleSeg:
    """Content-driven double: high probability on any blob-colored pixel.

    Position-free, so it works under tiling, padding and flips; used for
    multi-tile pipeline tests.
    """

    def predict(self, tile: RgbImage) -> ProbabilityMap:
        arr = tile.data.astype(np.float64)
        blobish = (arr[:, :, 1] < 200.0) & (arr.sum(axis=2) < 690.0)
        return ProbabilityMap(np.where(blobish, 0.98, 0.02))


class ColorRuleCls:
    """Scores a 96x96 patch by the dominant color of its central window:
    close to the true-mitosis purple -> high, otherwise -> low."""

    def __init__(self, high: float = 0.95, low: float = 0.05, window: int = 11):
        self.high = high
        self.low = low
        self.window = window

    def predict(self, patch: RgbImage) -> float:
        h, w = patch.height, patch.width
        r = self.window // 2
        center = patch.data[h // 2 - r : h // 2 + r + 1, w // 2 - r : w // 2 + r + 1]
        mean = center.reshape(-1, 3).mean(axis=0)
        d_true = np.linalg.norm(mean - TRUE_COLOR.astype(np.float64))
        d_mim = np.linalg.norm(mean - MIMICKER_COLOR.astype(np.float64))
        return self.high if d_true < d_mim else self.low


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
