"""Stage 1: hybrid patch embedding, transformer encoder, reassembly, fusion, generic-edge head.

Tensors follow the torch layout: images are (B, 3, H, W), token grids (B, T, D) in
row-major grid order, feature maps (B, D, h, w).
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, ModelConfig
from .layers import EncoderBlock, ResidualConvUnit, upsample2x

SQUASH_MARGIN = 1e-6


def squash(logits: torch.Tensor) -> torch.Tensor:
    """Logistic squashing kept strictly inside (0, 1) even where the sigmoid saturates."""
    return SQUASH_MARGIN + (1.0 - 2.0 * SQUASH_MARGIN) * torch.sigmoid(logits)


def image_to_tensor(image: np.ndarray | torch.Tensor) -> torch.Tensor:
    """H x W x 3 array in [0, 1] -> (1, 3, H, W) float tensor."""
    arr = torch.as_tensor(np.asarray(image, dtype=np.float32))
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ConfigError(f"expected an H x W x 3 image, got shape {tuple(arr.shape)}")
    if not torch.isfinite(arr).all() or arr.min() < 0 or arr.max() > 1:
        raise ValueError("image values must be finite and within [0, 1]")
    return arr.permute(2, 0, 1).unsqueeze(0).contiguous()


class PatchEmbed(nn.Module):
    """Two stride-2 convolutions, then a strided linear projection to D-dim patch tokens."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.stem_channels
        self.stem1 = nn.Conv2d(3, c, 3, stride=2, padding=1)
        self.stem2 = nn.Conv2d(c, c, 3, stride=2, padding=1)
        k = cfg.patch_size // 4
        self.proj = nn.Conv2d(c, cfg.embed_dim, k, stride=k)
        n_tokens = (cfg.image_height // cfg.patch_size) * (cfg.image_width // cfg.patch_size)
        self.pos_embed = nn.Parameter(torch.randn(1, n_tokens, cfg.embed_dim) * 0.02)

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.cfg.image_height // self.cfg.patch_size, self.cfg.image_width // self.cfg.patch_size

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ConfigError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        if tuple(images.shape[2:]) != (self.cfg.image_height, self.cfg.image_width):
            raise ConfigError(
                f"image size {tuple(images.shape[2:])} does not match config "
                f"{(self.cfg.image_height, self.cfg.image_width)}"
            )
        x = F.gelu(self.stem2(F.gelu(self.stem1(images))))
        x = self.proj(x)
        return x.flatten(2).transpose(1, 2) + self.pos_embed


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.embed_dim, cfg.encoder_heads, cfg.mlp_ratio) for _ in range(cfg.encoder_layers)
        )

    def forward(self, tokens: torch.Tensor) -> list[torch.Tensor]:
        outputs = []
        for block in self.blocks:
            tokens = block(tokens)
            outputs.append(tokens)
        return outputs


def _resampler(dim: int, token_stride: int, target_stride: int) -> nn.Module:
    if target_stride < token_stride:
        f = token_stride // target_stride
        return nn.ConvTranspose2d(dim, dim, f, stride=f)
    if target_stride == token_stride:
        return nn.Conv2d(dim, dim, 1)
    f = target_stride // token_stride
    return nn.Conv2d(dim, dim, 3 if f == 2 else f, stride=f, padding=1 if f == 2 else 0)


class Reassemble(nn.Module):
    """Token grids from the tapped layers -> 4 feature maps at strides 8s, 4s, 2s, s (coarse first).

    The shallowest tap feeds the finest level.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d, s, p = cfg.embed_dim, cfg.feature_stride, cfg.patch_size
        self.strides = [s * 2**k for k in range(len(cfg.tap_indices))][::-1]
        self.taps = list(cfg.tap_indices)[::-1]
        self.project = nn.ModuleList(nn.Conv2d(d, d, 1) for _ in self.taps)
        self.resample = nn.ModuleList(_resampler(d, p, st) for st in self.strides)

    def forward(self, layer_outputs: list[torch.Tensor]) -> list[torch.Tensor]:
        gh, gw = self.cfg.image_height // self.cfg.patch_size, self.cfg.image_width // self.cfg.patch_size
        maps = []
        for tap, proj, res in zip(self.taps, self.project, self.resample):
            if not 1 <= tap <= len(layer_outputs):
                raise ConfigError(f"tap index {tap} out of range for {len(layer_outputs)} encoder layers")
            tokens = layer_outputs[tap - 1]
            grid = tokens.transpose(1, 2).reshape(tokens.shape[0], -1, gh, gw)
            maps.append(res(proj(grid)))
        return maps


class Fusion(nn.Module):
    """Coarse-to-fine residual fusion of a feature pyramid into one map at stride s."""

    def __init__(self, dim: int, levels: int, out_size: tuple[int, int]):
        super().__init__()
        self.dim = dim
        self.out_size = tuple(out_size)
        self.lateral = nn.ModuleList(ResidualConvUnit(dim) for _ in range(levels))
        self.merge = nn.ModuleList(ResidualConvUnit(dim) for _ in range(levels))

    def forward(self, pyramid: list[torch.Tensor]) -> torch.Tensor:
        if len(pyramid) != len(self.lateral):
            raise ConfigError(f"expected {len(self.lateral)} pyramid levels, got {len(pyramid)}")
        for level in pyramid:
            if level.shape[1] != self.dim:
                raise ConfigError(f"pyramid level has {level.shape[1]} channels, expected {self.dim}")
        out = None
        for level, lateral, merge in zip(pyramid, self.lateral, self.merge):
            x = lateral(level)
            if out is not None:
                x = x + F.interpolate(out, size=level.shape[2:], mode="bilinear", align_corners=False)
            out = merge(x)
        if tuple(out.shape[2:]) != self.out_size:
            out = F.interpolate(out, size=self.out_size, mode="bilinear", align_corners=False)
        return out


class EdgeHead(nn.Module):
    """Stride-s features -> full-resolution probabilities via log2(s) bilinear 2x steps with convs."""

    def __init__(self, dim: int, stride: int, out_channels: int):
        super().__init__()
        hidden = dim
        self.inp = nn.Conv2d(dim, hidden, 3, padding=1)
        self.ups = nn.ModuleList(nn.Conv2d(hidden, hidden, 3, padding=1) for _ in range(int(math.log2(stride))))
        self.out = nn.Conv2d(hidden, out_channels, 1)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.inp(features))
        for conv in self.ups:
            x = F.gelu(conv(upsample2x(x)))
        return self.out(x)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return squash(self.logits(features))


class Stage1(nn.Module):
    """Generic-edge network producing (E^e, M)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg)
        self.encoder = Encoder(cfg)
        self.reassemble = Reassemble(cfg)
        out_size = (cfg.image_height // cfg.feature_stride, cfg.image_width // cfg.feature_stride)
        self.fusion = Fusion(cfg.embed_dim, len(cfg.tap_indices), out_size)
        self.head = EdgeHead(cfg.embed_dim, cfg.feature_stride, 1)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        tokens = self.patch_embed(images)
        layers = self.encoder(tokens)
        features = self.fusion(self.reassemble(layers))
        return self.head(features), features
