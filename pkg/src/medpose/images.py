"""Grayscale image I/O and full-image resampling."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import AffineTransform


def load_gray(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PNG as float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim == 3:
        # RGB(A) input: luminance of the first three channels
        arr = arr[..., :3].astype(np.float64).mean(axis=-1)
        return (arr / 255.0).astype(np.float32)
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    if arr.dtype in (np.uint16, np.int32, np.int16):
        return (arr.astype(np.float64) / 65535.0).clip(0, 1).astype(np.float32)
    if arr.dtype == bool:
        return arr.astype(np.float32)
    raise ValueError(f"{path}: unsupported image dtype {arr.dtype}")


def save_gray8(arr: np.ndarray, path) -> None:
    data = np.asarray(arr)
    if data.dtype != np.uint8:
        data = np.round(np.clip(data, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(data).save(Path(path), optimize=False)


def warp_to_input(img: np.ndarray, t: AffineTransform, input_size: tuple[int, int]) -> np.ndarray:
    """Bilinearly resample ``img`` into the model-input frame defined by ``t``."""
    hin, win = input_size
    inv = np.linalg.inv(np.vstack([t.matrix, [0, 0, 1]]))[:2]
    ys, xs = np.mgrid[0:hin, 0:win].astype(np.float64)
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    out = ndimage.map_coordinates(img.astype(np.float64), [src_y, src_x], order=1, mode="nearest")
    return out.astype(np.float32)
