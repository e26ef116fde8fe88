"""Stage 2: learned cause tokens, cause-aware decoder stages, residual fusion, fine-grained head."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .config import CAUSE_NAMES, CAUSES, ConfigError, ModelConfig
from .layers import Mlp, MultiHeadAttention, ResidualConvUnit, sinusoidal_2d, upsample2x
from .model_core import EdgeHead

DOWNSAMPLE = 4


@dataclass
class FineGrainedPrediction:
    reflectance: torch.Tensor
    illumination: torch.Tensor
    normal: torch.Tensor
    depth: torch.Tensor

    @classmethod
    def from_tensor(cls, maps: torch.Tensor) -> "FineGrainedPrediction":
        # maps: (B, 4, H, W), channel order r, i, n, d
        if maps.shape[1] != 4:
            raise ValueError(f"expected 4 channels, got {maps.shape[1]}")
        return cls(*(maps[:, k] for k in range(4)))

    def stack(self) -> torch.Tensor:
        return torch.stack([self.reflectance, self.illumination, self.normal, self.depth], dim=1)

    def as_dict(self) -> dict[str, torch.Tensor]:
        return dict(zip(CAUSES, (self.reflectance, self.illumination, self.normal, self.depth)))


@dataclass
class AttentionMapBundle:
    """Head-averaged cross-attention weights, shape (N stages, B, 4 causes, grid_h, grid_w)."""

    weights: torch.Tensor

    @property
    def stages(self) -> int:
        return self.weights.shape[0]

    def map(self, stage: int, cause: str, batch_index: int = 0) -> torch.Tensor:
        return self.weights[stage - 1, batch_index, CAUSES.index(cause)]


class TokenAdapter(nn.Module):
    """Self-attention over the 4 stacked cause tokens with a residual connection."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        h = self.norm(tokens).unsqueeze(0)
        return tokens + self.attn(h, h, h)[0].squeeze(0)


class DecoderStage(nn.Module):
    """Self-attention over image tokens, then image-token queries against cause-token keys/values."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm_sa = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, tokens: torch.Tensor, causes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.norm_sa(tokens)
        m_sa = tokens + self.self_attn(h, h, h)[0]
        kv = self.norm_kv(causes).unsqueeze(0).expand(tokens.shape[0], -1, -1)
        out, weights = self.cross_attn(self.norm_q(m_sa), kv, kv)
        out = m_sa + out
        out = out + self.mlp(self.norm_mlp(out))
        return out, weights

    def zero_residual_branches(self) -> None:
        for lin in (self.self_attn.out_proj, self.cross_attn.out_proj, self.mlp.fc2):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)


class Upsampler(nn.Module):
    """UP(x) = upsample(RCU(x)): one 2x step."""

    def __init__(self, dim: int):
        super().__init__()
        self.rcu = ResidualConvUnit(dim, out_proj=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return upsample2x(self.rcu(x))


class CauseDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.embed_dim
        self.cause_tokens = nn.Parameter(torch.randn(4, d))
        self.adapters = nn.ModuleList(TokenAdapter(d, cfg.decoder_heads) for _ in range(cfg.decoder_stages))
        self.stages = nn.ModuleList(
            DecoderStage(d, cfg.decoder_heads, cfg.mlp_ratio) for _ in range(cfg.decoder_stages)
        )
        self.down = nn.Conv2d(d, d, DOWNSAMPLE, stride=DOWNSAMPLE) if cfg.downsample == "conv" else None
        self.up_first = Upsampler(d)
        self.up_last = Upsampler(d)
        self.up_merge = Upsampler(d)
        self.head = EdgeHead(d, cfg.feature_stride, 4)

    def adapt_tokens(self, stage_index: int, base: torch.Tensor | None = None) -> torch.Tensor:
        """Stage-adapted cause tokens (4 x D) for a 1-based stage index."""
        if not 1 <= stage_index <= self.cfg.decoder_stages:
            raise IndexError(f"stage_index {stage_index} outside [1, {self.cfg.decoder_stages}]")
        base = self.cause_tokens if base is None else base
        if base.shape != (4, self.cfg.embed_dim):
            raise ValueError(f"cause tokens must be 4 x {self.cfg.embed_dim}, got {tuple(base.shape)}")
        if not self.cfg.adaptive_tokens:
            return base
        return self.adapters[stage_index - 1](base)

    def downsample_and_flatten(self, features: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        h, w = features.shape[2:]
        if h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ConfigError(f"feature map {h}x{w} not divisible by {DOWNSAMPLE}")
        if self.down is not None:
            pooled = self.down(features)
        else:
            pooled = F.avg_pool2d(features, DOWNSAMPLE)
        grid = (h // DOWNSAMPLE, w // DOWNSAMPLE)
        return pooled.flatten(2).transpose(1, 2), grid

    def decoder_stage(
        self, tokens: torch.Tensor, adapted: torch.Tensor, stage_index: int
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns updated tokens (B, T, D) and cross-attention weights (B, T, 4)."""
        return self.stages[stage_index - 1](tokens, adapted)

    def residual_fusion(
        self, features: torch.Tensor, first: torch.Tensor, last: torch.Tensor, grid: tuple[int, int]
    ) -> torch.Tensor:
        h, w = features.shape[2:]
        if (grid[0] * DOWNSAMPLE, grid[1] * DOWNSAMPLE) != (h, w):
            raise ValueError(f"token grid {grid} is not 1/{DOWNSAMPLE} of feature map {h}x{w}")
        if first.shape[1] != grid[0] * grid[1] or last.shape[1] != grid[0] * grid[1]:
            raise ValueError("token count does not match grid")

        def to_map(tokens):
            return tokens.transpose(1, 2).reshape(tokens.shape[0], -1, *grid)

        merged = self.up_merge(self.up_last(to_map(last)) + self.up_first(to_map(first)))
        return merged + features

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, AttentionMapBundle]:
        tokens, grid = self.downsample_and_flatten(features)
        pos = sinusoidal_2d(*grid, self.cfg.embed_dim, dtype=tokens.dtype).to(tokens.device)
        tokens = tokens + pos
        first, maps = None, []
        for n in range(1, self.cfg.decoder_stages + 1):
            tokens, weights = self.decoder_stage(tokens, self.adapt_tokens(n), n)
            if first is None:
                first = tokens
            maps.append(weights.transpose(1, 2).reshape(weights.shape[0], 4, *grid))
        fused = self.residual_fusion(features, first, tokens, grid)
        return self.head(fused), AttentionMapBundle(torch.stack(maps))


def export_attention(bundle: AttentionMapBundle, out_dir: str | Path, size: tuple[int, int], batch_index: int = 0) -> list[Path]:
    """Write one 8-bit PNG per (stage, cause), bilinearly upsampled and min-max normalized.

    A constant map is written as uniform mid-gray (128).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for stage in range(1, bundle.stages + 1):
        for cause in CAUSES:
            quantized = quantize_attention(bundle.map(stage, cause, batch_index), size)
            path = out_dir / f"stage{stage}_{CAUSE_NAMES[cause]}.png"
            Image.fromarray(quantized, mode="L").save(path)
            written.append(path)
    return written


def quantize_attention(attn: torch.Tensor, size: tuple[int, int]) -> np.ndarray:
    up = F.interpolate(attn.detach()[None, None].double(), size=size, mode="bilinear", align_corners=False)[0, 0]
    lo, hi = up.min(), up.max()
    if hi - lo <= 1e-12:
        return np.full(size, 128, dtype=np.uint8)
    scaled = (up - lo) / (hi - lo)
    return np.round(scaled.numpy() * 255).astype(np.uint8)
