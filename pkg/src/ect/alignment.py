"""Edge aggregation and alignment: max-aggregation, warping, inverse-transform regressor, Frobenius penalty.

Transforms act on normalized coordinates in [-1, 1] (pixel centers at the extremes,
``align_corners=True``). A transform ``theta`` maps a source point ``x`` to ``theta @ [x, 1]``,
so warping samples the source at ``theta^-1 @ y`` for every output point ``y``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

AFFINE_IDENTITY = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)


def identity_theta(mode: str = "affine", dtype=torch.float32) -> torch.Tensor:
    if mode == "affine":
        return AFFINE_IDENTITY.to(dtype)
    if mode == "homography":
        return torch.eye(3, dtype=dtype)
    raise ValueError(f"unknown transform mode {mode!r}")


def aggregate_max(fine: torch.Tensor) -> torch.Tensor:
    """Pixelwise maximum over the 4 cause channels of (B, 4, H, W) -> (B, 1, H, W).

    The gradient flows only to the winning channel; ties go to the earliest cause (r < i < n < d).
    """
    if fine.ndim != 4 or fine.shape[1] != 4:
        raise ValueError(f"expected (B, 4, H, W), got {tuple(fine.shape)}")
    idx = fine.detach().argmax(dim=1, keepdim=True)
    return fine.gather(1, idx)


def _to_3x3(theta: torch.Tensor) -> torch.Tensor:
    if theta.shape[-2:] == (3, 3):
        return theta
    if theta.shape[-2:] != (2, 3):
        raise ValueError(f"theta must be 2x3 or 3x3, got {tuple(theta.shape)}")
    bottom = torch.zeros(*theta.shape[:-2], 1, 3, dtype=theta.dtype, device=theta.device)
    bottom[..., 0, 2] = 1
    return torch.cat([theta, bottom], dim=-2)


def apply_transform(edge_map: torch.Tensor, theta) -> torch.Tensor:
    """Bilinear warp of (H, W) or (B, 1, H, W) maps with zero padding outside the source."""
    squeeze = edge_map.ndim == 2
    x = edge_map[None, None] if squeeze else edge_map
    theta = torch.as_tensor(theta, dtype=torch.float64)
    mat = _to_3x3(theta)
    if mat.ndim == 2:
        mat = mat.expand(x.shape[0], 3, 3)
    det = torch.linalg.det(mat)
    if (det.abs() < 1e-10).any() or not torch.isfinite(mat).all():
        raise ValueError("transform is singular or not finite")
    inv = torch.linalg.inv(mat)
    h, w = x.shape[-2:]
    ys = torch.linspace(-1, 1, h, dtype=torch.float64) if h > 1 else torch.zeros(1, dtype=torch.float64)
    xs = torch.linspace(-1, 1, w, dtype=torch.float64) if w > 1 else torch.zeros(1, dtype=torch.float64)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    pts = torch.stack([gx, gy, torch.ones_like(gx)], dim=-1).reshape(-1, 3)
    src = pts @ inv.transpose(1, 2)  # (B, HW, 3)
    src = src[..., :2] / src[..., 2:3]
    grid = src.reshape(-1, h, w, 2).to(x.dtype)
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    return out[0, 0] if squeeze else out


def pixel_transform_to_normalized(mat_px: np.ndarray, height: int, width: int) -> np.ndarray:
    """Convert a 3x3 transform in pixel coordinates (x right, y down) to normalized coordinates."""
    sx = 2.0 / (width - 1) if width > 1 else 1.0
    sy = 2.0 / (height - 1) if height > 1 else 1.0
    to_norm = np.array([[sx, 0, -1.0], [0, sy, -1.0], [0, 0, 1.0]])
    return to_norm @ np.asarray(mat_px, dtype=np.float64) @ np.linalg.inv(to_norm)


def translation_theta(dx: float, dy: float, height: int, width: int) -> torch.Tensor:
    """2x3 normalized-coordinate transform for a shift of (dx, dy) pixels."""
    mat = np.array([[1.0, 0, dx], [0, 1.0, dy], [0, 0, 1.0]])
    return torch.as_tensor(pixel_transform_to_normalized(mat, height, width)[:2])


def similarity_theta(dx: float, dy: float, angle_deg: float, scale: float, height: int, width: int) -> torch.Tensor:
    """Rotation and scaling about the image center followed by a pixel shift, as 2x3 normalized."""
    cx, cy = (width - 1) / 2, (height - 1) / 2
    a = math.radians(angle_deg)
    c, s = scale * math.cos(a), scale * math.sin(a)
    mat = np.array(
        [[c, -s, cx - c * cx + s * cy + dx], [s, c, cy - s * cx - c * cy + dy], [0, 0, 1.0]]
    )
    return torch.as_tensor(pixel_transform_to_normalized(mat, height, width)[:2])


def alignment_loss(theta: torch.Tensor) -> torch.Tensor:
    """Frobenius distance to the identity; batched (B, 2|3, 3) inputs are averaged over B."""
    eye = identity_theta("affine" if theta.shape[-2] == 2 else "homography", theta.dtype).to(theta.device)
    diff = theta - eye
    norms = torch.sqrt((diff**2).sum(dim=(-2, -1)))
    return norms if theta.ndim == 2 else norms.mean()


def _gaussian_kernel(sigma: float) -> torch.Tensor:
    radius = max(1, int(math.ceil(3 * sigma)))
    xs = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-(xs**2) / (2 * sigma**2))
    k = k / k.sum()
    return (k[:, None] * k[None, :]).float()


class InverseTransformNet(nn.Module):
    """Regresses the transform taking the first map onto the second from a 2-channel P x P input."""

    def __init__(self, input_size: int = 64, mode: str = "affine", width: int = 32, blur_sigma: float = 1.5):
        super().__init__()
        if mode not in ("affine", "homography"):
            raise ValueError(f"unknown transform mode {mode!r}")
        if input_size % 16:
            raise ValueError("input_size must be a multiple of 16")
        self.input_size = input_size
        self.mode = mode
        self.n_out = 6 if mode == "affine" else 8
        self.register_buffer("blur", _gaussian_kernel(blur_sigma)[None, None].repeat(2, 1, 1, 1))
        c = width
        self.features = nn.Sequential(
            nn.Conv2d(2, c, 5, stride=2, padding=2), nn.GELU(),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(2 * c, 2 * c, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1), nn.GELU(),
        )
        cells = (input_size // 16) ** 2
        self.regressor = nn.Sequential(nn.Linear(4 * c * cells, 128), nn.GELU(), nn.Linear(128, self.n_out))
        nn.init.zeros_(self.regressor[-1].weight)
        nn.init.zeros_(self.regressor[-1].bias)

    def prepare(self, first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
        x = torch.cat([first, second], dim=1)
        if x.shape[-2:] != (self.input_size, self.input_size):
            x = F.interpolate(x, size=(self.input_size,) * 2, mode="bilinear", align_corners=False)
        pad = self.blur.shape[-1] // 2
        return F.conv2d(x, self.blur.to(x.dtype), padding=pad, groups=2)

    def forward(self, first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
        x = self.features(self.prepare(first, second))
        delta = self.regressor(x.flatten(1))
        eye = identity_theta(self.mode, delta.dtype).to(delta.device)
        if self.mode == "affine":
            return eye + delta.view(-1, 2, 3)
        full = torch.cat([delta, torch.zeros_like(delta[:, :1])], dim=1)
        return eye + full.view(-1, 3, 3)


def freeze(net: nn.Module) -> nn.Module:
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def predict_theta(phi: InverseTransformNet, generic: torch.Tensor, aggregated: torch.Tensor) -> torch.Tensor:
    """Transform estimate between E^e and G_rind; differentiable in both maps, never in phi."""
    if generic.shape != aggregated.shape:
        raise ValueError(f"shape mismatch: {tuple(generic.shape)} vs {tuple(aggregated.shape)}")
    if generic.ndim == 2:
        generic, aggregated = generic[None, None], aggregated[None, None]
    if any(p.requires_grad for p in phi.parameters()):
        freeze(phi)
    dtype = next(phi.parameters()).dtype
    theta = phi(generic.to(dtype), aggregated.to(dtype))
    return theta.to(generic.dtype)


@dataclass
class SamplerConfig:
    max_translation: float = 6.0  # pixels
    max_rotation: float = 10.0  # degrees
    scale_range: float = 0.1  # scale drawn from [1 - r, 1 + r]
    identity_fraction: float = 0.2

    def sample(self, rng: np.random.Generator, height: int, width: int, mode: str = "affine") -> torch.Tensor:
        if rng.random() < self.identity_fraction:
            theta = similarity_theta(0, 0, 0, 1, height, width)
        else:
            dx, dy = rng.uniform(-self.max_translation, self.max_translation, size=2)
            ang = rng.uniform(-self.max_rotation, self.max_rotation)
            sc = rng.uniform(1 - self.scale_range, 1 + self.scale_range)
            theta = similarity_theta(dx, dy, ang, sc, height, width)
        return _to_3x3(theta) if mode == "homography" else theta


@dataclass
class PretrainReport:
    final_mse: float
    steps: int
    seed: int
    sampler: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _flat_params(theta: torch.Tensor, mode: str) -> torch.Tensor:
    return theta.reshape(theta.shape[0], -1)[:, : (6 if mode == "affine" else 8)]


def make_pairs(corpus: list[np.ndarray], count: int, sampler: SamplerConfig, rng: np.random.Generator, mode: str):
    maps, warped, targets = [], [], []
    for _ in range(count):
        m = torch.as_tensor(corpus[rng.integers(len(corpus))], dtype=torch.float32)
        theta = sampler.sample(rng, *m.shape, mode=mode)
        maps.append(m)
        warped.append(apply_transform(m, theta))
        targets.append(theta.float())
    return torch.stack(maps)[:, None], torch.stack(warped)[:, None], torch.stack(targets)


def pretrain_inverse_net(
    corpus: list[np.ndarray],
    sampler: SamplerConfig | None = None,
    steps: int = 1500,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    input_size: int = 64,
    mode: str = "affine",
    val_pairs: int = 128,
) -> tuple[InverseTransformNet, PretrainReport]:
    """Train the regressor on synthetic (map, warped map) pairs and return it frozen."""
    if len(corpus) == 0:
        raise ValueError("edge corpus is empty")
    sampler = sampler or SamplerConfig()
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    net = InverseTransformNet(input_size, mode)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps)
    val = make_pairs(corpus, val_pairs, sampler, np.random.default_rng(seed + 1), mode)
    history = []
    for step in range(steps):
        a, b, target = make_pairs(corpus, batch_size, sampler, rng, mode)
        pred = net(a, b)
        loss = F.mse_loss(_flat_params(pred, mode), _flat_params(target, mode))
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if step % 50 == 0 or step == steps - 1:
            history.append([step, loss.item()])
    with torch.no_grad():
        pred = net(val[0], val[1])
        mse = float(F.mse_loss(_flat_params(pred, mode), _flat_params(val[2], mode)))
    report = PretrainReport(final_mse=mse, steps=steps, seed=seed, sampler=asdict(sampler), loss_history=history)
    return freeze(net), report
