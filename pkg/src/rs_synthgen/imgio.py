"""PNG encode/decode helpers around Pillow.

All rasters in this package are numpy arrays of shape (H, W, 3), dtype uint8
for stored images and float for normalized ones. Files are written as PNG
(lossless) so round-trips are byte-exact.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


def encode_png(image: np.ndarray) -> bytes:
    """Encode an (H, W, 3) uint8 array to PNG bytes."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    """Decode image bytes (any Pillow-readable format) to an (H, W, 3) uint8 array."""
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(image: np.ndarray, path: Path | str) -> None:
    Path(path).write_bytes(encode_png(image))


def load_image(path: Path | str) -> np.ndarray:
    return decode_image(Path(path).read_bytes())
