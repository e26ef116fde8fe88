"""Dataset layout, loading, geometric augmentation and seeded batching.

Layout under a data root::

    images/{split}/{id}.png
    gt/{reflectance,illumination,normal,depth}/{split}/{id}.png
    gt/generic/{split}/{id}.png        (optional; otherwise the union of the four causes)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import imageio
from .config import CAUSE_NAMES, CAUSES, TASKS, AugmentConfig

log = logging.getLogger(__name__)

GT_THRESHOLD = 128


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3, float32 in [0, 1]
    gt: dict[str, np.ndarray] = field(default_factory=dict)  # task -> H x W uint8 in {0, 1}
    id: str = ""

    def __post_init__(self):
        h, w = self.image.shape[:2]
        for k, m in self.gt.items():
            if m.shape != (h, w):
                raise ValueError(f"gt[{k}] has shape {m.shape}, image is {(h, w)}")

    def copy(self) -> "Sample":
        return Sample(self.image.copy(), {k: v.copy() for k, v in self.gt.items()}, self.id)


def union_of_causes(gt: dict[str, np.ndarray]) -> np.ndarray:
    out = np.zeros_like(gt[CAUSES[0]])
    for c in CAUSES:
        out |= gt[c]
    return out


def list_ids(root: str | Path, split: str) -> list[str]:
    folder = Path(root) / "images" / split
    if not folder.is_dir():
        raise imageio.DataError(f"missing image directory: {folder}")
    return sorted(p.stem for p in folder.glob("*.png"))


def load_sample(root: str | Path, split: str, sample_id: str) -> Sample:
    root = Path(root)
    image = imageio.read_image(root / "images" / split / f"{sample_id}.png")
    gt = {}
    for c in CAUSES:
        path = root / "gt" / CAUSE_NAMES[c] / split / f"{sample_id}.png"
        if not path.exists():
            raise imageio.DataError(f"missing {CAUSE_NAMES[c]} ground truth: {path}")
        gt[c] = imageio.read_binary(path, GT_THRESHOLD)
    generic = root / "gt" / "generic" / split / f"{sample_id}.png"
    gt["e"] = imageio.read_binary(generic, GT_THRESHOLD) if generic.exists() else union_of_causes(gt)
    if not gt["e"].any() or gt["e"].all():
        log.warning("sample %s has degenerate generic ground truth (all %d)", sample_id, int(gt["e"].flat[0]))
    return Sample(image, gt, sample_id)


def load_split(root: str | Path, split: str) -> list[Sample]:
    return [load_sample(root, split, i) for i in list_ids(root, split)]


def _resize(arr: np.ndarray, size: tuple[int, int], nearest: bool) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    t = t.permute(2, 0, 1)[None] if t.ndim == 3 else t[None, None]
    if nearest:
        out = F.interpolate(t, size=size, mode="nearest")
    else:
        out = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    out = out[0].permute(1, 2, 0) if arr.ndim == 3 else out[0, 0]
    return out.numpy().astype(arr.dtype)


def _geometric(arr: np.ndarray, flip: bool, k90: int, size, crop_at, crop, nearest: bool) -> np.ndarray:
    if flip:
        arr = arr[:, ::-1]
    if size != arr.shape[:2]:
        arr = _resize(arr, size, nearest)
    arr = np.rot90(arr, k90)
    y, x = crop_at
    return np.ascontiguousarray(arr[y : y + crop[0], x : x + crop[1]])


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """One random flip/scale/rotation/crop, applied identically to the image and every GT map."""
    cfg.validate()
    if not cfg.enabled:
        return sample.copy()
    h, w = sample.image.shape[:2]
    # scales too small to hold the crop are skipped (0.5 on a 64x64 scene with a 64x64 crop)
    scales = [s for s in cfg.scales if min(round(h * s), round(w * s)) >= max(cfg.crop)]
    if not scales:
        raise ValueError(f"crop {tuple(cfg.crop)} exceeds the {h}x{w} image at every scale in {cfg.scales}")
    flip = bool(cfg.horizontal_flip and rng.random() < 0.5)
    scale = float(scales[rng.integers(len(scales))])
    k90 = int(cfg.rotation_degrees[rng.integers(len(cfg.rotation_degrees))]) // 90 % 4
    return transform(sample, flip=flip, scale=scale, k90=k90, crop=cfg.crop, rng=rng)


def transform(
    sample: Sample,
    flip: bool = False,
    scale: float = 1.0,
    k90: int = 0,
    crop: tuple[int, int] | None = None,
    rng: np.random.Generator | None = None,
) -> Sample:
    h, w = sample.image.shape[:2]
    size = (max(1, int(round(h * scale))), max(1, int(round(w * scale))))
    rh, rw = (size[1], size[0]) if k90 % 2 else size
    crop = tuple(crop) if crop is not None else (rh, rw)
    if crop[0] > rh or crop[1] > rw:
        raise ValueError(f"crop {crop} larger than transformed image {(rh, rw)}")
    rng = rng or np.random.default_rng(0)
    crop_at = (int(rng.integers(rh - crop[0] + 1)), int(rng.integers(rw - crop[1] + 1)))
    image = _geometric(sample.image, flip, k90, size, crop_at, crop, nearest=False).clip(0, 1)
    gt = {k: _geometric(m, flip, k90, size, crop_at, crop, nearest=True) for k, m in sample.gt.items()}
    return Sample(image, gt, sample.id)


def batches(dataset: Sequence, batch_size: int, shuffle_seed: int | None = 0, epoch: int = 0) -> Iterator[list]:
    """Seeded order, final partial batch included."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    order = np.arange(len(dataset))
    if shuffle_seed is not None:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        yield [dataset[i] for i in order[start : start + batch_size]]


def to_tensors(samples: Sequence[Sample], dtype=torch.float32) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    images = torch.from_numpy(np.stack([s.image for s in samples])).permute(0, 3, 1, 2).to(dtype)
    gts = {k: torch.from_numpy(np.stack([s.gt[k] for s in samples])).to(dtype) for k in TASKS}
    return images, gts
