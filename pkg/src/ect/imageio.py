"""PNG readers and writers for images, probability maps and auxiliary maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class DataError(OSError):
    """A data file is missing or unreadable."""


def _open(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            return np.array(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    """RGB image as float32 H x W x 3 in [0, 1]."""
    arr = _open(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    arr = arr[..., :3]
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    return (arr.astype(np.float32) / scale).clip(0, 1)


def read_gray(path) -> np.ndarray:
    """Single-channel map scaled to [0, 1] (value / 255 for 8-bit files)."""
    arr = _open(path)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.bool_:
        return arr.astype(np.float64)
    scale = 65535.0 if arr.dtype in (np.uint16, np.int32) and arr.max() > 255 else 255.0
    return arr.astype(np.float64) / scale


def read_binary(path, threshold: int = 128) -> np.ndarray:
    arr = _open(path)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.bool_:
        return arr.astype(np.uint8)
    return (arr >= threshold).astype(np.uint8)


def write_gray(path, prob: np.ndarray) -> Path:
    """Probability map -> 8-bit PNG storing round(255 * p)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q = np.round(np.clip(np.asarray(prob, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)
    return path


def write_binary(path, edges: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(edges, dtype=bool).astype(np.uint8) * 255, mode="L").save(path)
    return path


def write_image(path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8), mode="RGB").save(path)
    return path


def write_uint16(path, arr: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint16)).save(path)
    return path


def read_uint16(path) -> np.ndarray:
    arr = _open(path)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr.astype(np.int64)


def read_depth(path) -> tuple[np.ndarray, np.ndarray]:
    """16-bit millimetre depth -> (metres, valid mask); zero marks a missing reading."""
    mm = read_uint16(path)
    return mm / 1000.0, mm > 0


def read_normals(path) -> np.ndarray:
    """8-bit RGB normals mapped from [0, 255] to [-1, 1] and renormalized."""
    arr = _open(path)[..., :3].astype(np.float64)
    n = arr / 255.0 * 2.0 - 1.0
    norm = np.linalg.norm(n, axis=2, keepdims=True)
    return n / np.where(norm == 0, 1, norm)


def write_normals(path, normals: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q = np.round((np.asarray(normals) + 1.0) / 2.0 * 255).clip(0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)
    return path
