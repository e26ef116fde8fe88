"""Class-balanced attention loss per task, its weighted task sum, and the total objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .config import TASKS, ConfigError, LossConfig


@dataclass
class GroundTruthEdgeMap:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.isin(self.data, (0, 1)).all():
            raise ValueError("ground-truth edge map must be binary")
        self.data = self.data.astype(np.uint8)

    @property
    def edge_count(self) -> int:
        return int(self.data.sum())

    @property
    def nonedge_count(self) -> int:
        return int(self.data.size - self.data.sum())

    @property
    def alpha(self) -> float:
        return self.nonedge_count / self.data.size


def _as_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, GroundTruthEdgeMap):
        x = x.data
    t = torch.as_tensor(x)
    if like is not None:
        t = t.to(dtype=like.dtype, device=like.device)
    return t


def attention_loss(
    gt, pred, beta: float, gamma: float, eps: float = 1e-6, normalize: bool = False
) -> torch.Tensor:
    """Focal-style, class-balanced edge loss summed over pixels.

    ``gt`` and ``pred`` are (H, W) or (B, H, W); batched inputs are reduced by a mean
    over samples. The class weight alpha is the non-edge fraction of each sample.
    """
    if beta <= 0 or gamma <= 0:
        raise ConfigError(f"beta and gamma must be positive, got beta={beta}, gamma={gamma}")
    pred = torch.as_tensor(pred)
    if not pred.is_floating_point():
        pred = pred.double()
    y = _as_tensor(gt, pred)
    if y.shape != pred.shape:
        raise ValueError(f"shape mismatch: gt {tuple(y.shape)} vs pred {tuple(pred.shape)}")
    squeeze = pred.ndim == 2
    if squeeze:
        y, pred = y[None], pred[None]
    e = pred.clamp(eps, 1 - eps)
    n_pix = y[0].numel()
    alpha = (1 - y).sum(dim=(-2, -1), keepdim=True) / n_pix
    log_beta = math.log(beta)
    pos = y * alpha * torch.exp((1 - e) ** gamma * log_beta) * torch.log(e)
    neg = (1 - y) * (1 - alpha) * torch.exp(e**gamma * log_beta) * torch.log(1 - e)
    per_sample = -(pos + neg).sum(dim=(-2, -1))
    if normalize:
        per_sample = per_sample / n_pix
    return per_sample[0] if squeeze else per_sample.mean()


def erind_loss(gts: dict, preds: dict, cfg: LossConfig) -> torch.Tensor:
    """Weighted sum of attention losses over the tasks e, r, i, n, d."""
    missing = [k for k in TASKS if k not in gts or k not in preds]
    if missing:
        raise KeyError(f"missing tasks: {missing}")
    total = None
    for k in TASKS:
        term = cfg.lam[k] * attention_loss(gts[k], preds[k], cfg.beta[k], cfg.gamma[k], cfg.eps, cfg.normalize)
        total = term if total is None else total + term
    return total


def total_loss(erind, alignment, lambda_a: float):
    return erind + lambda_a * alignment
