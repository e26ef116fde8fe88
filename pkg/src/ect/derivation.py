"""Fine-grained ground truth from auxiliary maps: shadow masks, depth, normals, instance labels, point pairs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from .config import DerivationConfig
from .metrics import PointPair, thin_edges

log = logging.getLogger(__name__)

KINDS = ("shadow_mask", "depth", "normal", "instance")
UNIT_TOL = 1e-3


@dataclass
class AuxiliaryMap:
    kind: str
    data: np.ndarray
    valid: np.ndarray | None = None  # depth only: False where the sensor gave no reading

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown auxiliary map kind {self.kind!r}")
        self.data = np.asarray(self.data)
        if self.kind == "shadow_mask":
            if not np.isin(self.data, (0, 1)).all():
                raise ValueError("shadow mask must be binary")
            self.data = self.data.astype(np.uint8)
        elif self.kind == "depth":
            self.data = self.data.astype(np.float64)
            if (self.data < 0).any() or not np.isfinite(self.data).all():
                raise ValueError("depth must be finite and nonnegative")
            if self.valid is None:
                self.valid = np.ones(self.data.shape, dtype=bool)
        elif self.kind == "normal":
            self.data = self.data.astype(np.float64)
            if self.data.ndim != 3 or self.data.shape[2] != 3:
                raise ValueError("normal map must be H x W x 3")
            norms = np.linalg.norm(self.data, axis=2)
            if np.abs(norms - 1).max() > UNIT_TOL:
                raise ValueError(f"normals deviate from unit length by up to {np.abs(norms - 1).max():.3g}")
        elif self.kind == "instance":
            if not np.issubdtype(self.data.dtype, np.integer):
                raise ValueError("instance labels must be integers")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


def _window(shape, p, w):
    y, x = p
    h, wd = shape
    if not (0 <= y < h and 0 <= x < wd):
        raise IndexError(f"pixel {p} outside {shape}")
    return slice(max(0, y - w), min(h, y + w + 1)), slice(max(0, x - w), min(wd, x + w + 1))


def max_pairwise_angle(normals: np.ndarray) -> float:
    """Largest angle in degrees between any two of the given unit vectors (k x 3)."""
    dots = np.clip(normals @ normals.T, -1.0, 1.0)
    return math.degrees(math.acos(dots.min()))


def local_variation(aux: AuxiliaryMap, p: tuple[int, int], cfg: DerivationConfig) -> float | None:
    """Dispersion of the map over the clipped (2w+1)^2 window centred on pixel p = (row, col).

    Returns None when every depth sample in the window is invalid.
    """
    rows, cols = _window(aux.shape, p, cfg.window)
    if aux.kind == "depth":
        vals = aux.data[rows, cols]
        if cfg.invalid_depth == "exclude":
            vals = vals[aux.valid[rows, cols]]
        if vals.size == 0:
            return None
        return float(vals.max() - vals.min())
    if aux.kind == "normal":
        return max_pairwise_angle(aux.data[rows, cols].reshape(-1, 3))
    if aux.kind == "shadow_mask":
        vals = aux.data[rows, cols]
        return float(vals.min() != vals.max())
    raise ValueError(f"local variation is undefined for {aux.kind!r} maps")


def depth_variation_map(aux: AuxiliaryMap, cfg: DerivationConfig) -> np.ndarray:
    """Windowed max - min of valid depth at every pixel; NaN where the window holds no valid depth."""
    size = 2 * cfg.window + 1
    valid = aux.valid if cfg.invalid_depth == "exclude" else np.ones(aux.shape, dtype=bool)
    hi = maximum_filter(np.where(valid, aux.data, -np.inf), size=size, mode="nearest")
    lo = minimum_filter(np.where(valid, aux.data, np.inf), size=size, mode="nearest")
    out = hi - lo
    out[~maximum_filter(valid, size=size, mode="nearest")] = np.nan
    return out


def shadow_variation_map(aux: AuxiliaryMap, cfg: DerivationConfig) -> np.ndarray:
    size = 2 * cfg.window + 1
    m = aux.data
    return maximum_filter(m, size=size, mode="nearest") != minimum_filter(m, size=size, mode="nearest")


def instance_boundaries(instance: AuxiliaryMap) -> np.ndarray:
    """Pixels with a 4-neighbour of a different label (two pixels wide along each boundary)."""
    lab = instance.data
    edge = np.zeros(lab.shape, dtype=bool)
    dy = lab[1:, :] != lab[:-1, :]
    dx = lab[:, 1:] != lab[:, :-1]
    edge[1:, :] |= dy
    edge[:-1, :] |= dy
    edge[:, 1:] |= dx
    edge[:, :-1] |= dx
    return edge


def derive_generic_from_instances(instance: AuxiliaryMap) -> np.ndarray:
    return thin_edges(instance_boundaries(instance), extend_borders=True)


def derive_illumination_edges(shadow: AuxiliaryMap, cfg: DerivationConfig) -> np.ndarray:
    return thin_edges(shadow_variation_map(shadow, cfg), extend_borders=True)


def derive_depth_edges(ge: np.ndarray, depth: AuxiliaryMap, cfg: DerivationConfig) -> np.ndarray:
    ge = np.asarray(ge, dtype=bool)
    if ge.shape != depth.shape:
        raise ValueError(f"shape mismatch: {ge.shape} vs {depth.shape}")
    var = depth_variation_map(depth, cfg)
    with np.errstate(invalid="ignore"):
        return ge & (var > cfg.tau_depth)


def derive_normal_edges(ge: np.ndarray, normal: AuxiliaryMap, cfg: DerivationConfig) -> np.ndarray:
    ge = np.asarray(ge, dtype=bool)
    if ge.shape != normal.shape:
        raise ValueError(f"shape mismatch: {ge.shape} vs {normal.shape}")
    out = np.zeros_like(ge)
    for y, x in np.argwhere(ge):
        rows, cols = _window(normal.shape, (y, x), cfg.window)
        out[y, x] = max_pairwise_angle(normal.data[rows, cols].reshape(-1, 3)) > cfg.tau_normal
    return out


_EQUAL = {"equal", "e", "="}
_UNEQUAL = {"point 1 darker", "point 2 darker", "1", "2", "darker", "lighter", "<", ">"}


def derive_reflectance_pairs(
    annotations: Iterable[Mapping], sizes: Mapping[str, tuple[int, int]] | tuple[int, int] | None = None
) -> tuple[list[PointPair], int]:
    """Point pairs from annotation records; returns (pairs, number of skipped records).

    A record holds ``image``, ``x1``, ``y1``, ``x2``, ``y2`` and either a boolean ``equal`` or a
    ``relation`` string. ``sizes`` gives (height, width) per image, or one shape for all.
    """
    pairs, skipped = [], 0
    for rec in annotations:
        try:
            image = str(rec.get("image", ""))
            x1, y1, x2, y2 = (int(rec[k]) for k in ("x1", "y1", "x2", "y2"))
            if "equal" in rec:
                if not isinstance(rec["equal"], bool):
                    raise ValueError("equal must be a boolean")
                equal = rec["equal"]
            else:
                rel = str(rec["relation"]).strip().lower()
                if rel in _EQUAL:
                    equal = True
                elif rel in _UNEQUAL:
                    equal = False
                else:
                    raise ValueError(f"unknown relation {rel!r}")
            if sizes is not None:
                h, w = sizes if isinstance(sizes, tuple) else sizes[image]
                if not all(0 <= x < w for x in (x1, x2)) or not all(0 <= y < h for y in (y1, y2)):
                    raise ValueError("point outside image bounds")
            elif min(x1, y1, x2, y2) < 0:
                raise ValueError("negative coordinate")
        except (KeyError, TypeError, ValueError) as exc:
            skipped += 1
            log.warning("skipping malformed point-pair record %r: %s", rec, exc)
            continue
        pairs.append(PointPair(image, x1, y1, x2, y2, equal))
    return pairs, skipped
