"""Image file helpers: 8/16-bit PNG via Pillow, float via LLT1.

`load_image` always returns float64 scaled to [0, 1] for PNG inputs and the
raw stored values for LLT1 inputs.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .llt1 import read_llt1, write_llt1


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".llt1":
        return read_llt1(path)
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype in (np.uint16, np.int32):
        return arr.astype(np.float64) / 65535.0
    return arr.astype(np.float64)


def save_image(path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".llt1":
        write_llt1(path, image)
        return
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path)


def save_png_raw(path, values: np.ndarray, bit_depth: int = 8) -> None:
    """Store already-quantized integer values losslessly (8 or 16 bit)."""
    values = np.asarray(values)
    if bit_depth <= 8:
        Image.fromarray(values.astype(np.uint8)).save(path)
    else:
        Image.fromarray(values.astype(np.uint16)).save(path)


def load_png_raw(path) -> np.ndarray:
    """Integer PNG values without rescaling."""
    return np.asarray(Image.open(path)).astype(np.int64)
