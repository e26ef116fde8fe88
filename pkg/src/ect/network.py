"""The full two-stage detector."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from .cause_decoder import AttentionMapBundle, CauseDecoder
from .config import ModelConfig
from .model_core import Stage1


class ECTOutput(NamedTuple):
    generic: torch.Tensor  # (B, 1, H, W)
    fine: torch.Tensor  # (B, 4, H, W), channels r, i, n, d
    features: torch.Tensor  # (B, D, H/s, W/s)
    attention: AttentionMapBundle


class ECT(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.stage1 = Stage1(cfg)
        self.stage2 = CauseDecoder(cfg)

    def forward(self, images: torch.Tensor) -> ECTOutput:
        generic, features = self.stage1(images)
        fine, attention = self.stage2(features)
        return ECTOutput(generic, fine, features, attention)


def build_model(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> ECT:
    """Seeded construction; the same config always yields the same initial parameters."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(cfg.seed)
    try:
        model = ECT(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)
