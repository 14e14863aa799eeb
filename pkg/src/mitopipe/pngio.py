"""PNG image I/O: 8-bit RGB for images, single-channel 8-bit for masks.

Mask convention: 255 = foreground, 0 = background.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .core import BinaryMask, RgbImage
from .errors import InvalidInputError


def read_rgb(path: str | Path) -> RgbImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return RgbImage(arr)


def write_rgb(image: RgbImage, path: str | Path) -> None:
    Image.fromarray(np.asarray(image.data), mode="RGB").save(path, format="PNG")


def read_mask(path: str | Path) -> BinaryMask:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    bad = ~np.isin(arr, (0, 255))
    if bad.any():
        raise InvalidInputError(f"mask {path} contains values other than 0 and 255")
    return BinaryMask(arr == 255)


def write_mask(mask: BinaryMask, path: str | Path) -> None:
    arr = np.where(mask.data, np.uint8(255), np.uint8(0))
    Image.fromarray(arr, mode="L").save(path, format="PNG")
