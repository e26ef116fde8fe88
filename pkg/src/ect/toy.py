"""Procedural 64x64 scenes with analytic reflectance/illumination/normal/depth edges.

Each scene is a back wall with a two-tone albedo split, an optional disk in front of it, a
two-faced box (a crease between faces), and a box-shaped cast shadow on the wall. Edges are
assigned to the pixel on one fixed side of each discontinuity and then thinned, so every
ground-truth line is exactly one pixel wide.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import imageio
from .config import CAUSE_NAMES, CAUSES
from .metrics import thin_edges

LIGHT = np.array([0.3, -0.3, 1.0]) / np.linalg.norm([0.3, -0.3, 1.0])
SHADOW_FACTOR = 0.45
DEPTH_JUMP = 0.5
CREASE_DEG = 30.0

WALL, DISK, BOX = 1, 2, 3


def _color(rng, avoid=None, min_gap=0.35):
    for _ in range(100):
        c = rng.uniform(0.25, 1.0, size=3)
        if avoid is None or all(np.abs(c - a).sum() > min_gap for a in avoid):
            return c
    return c


def render_scene(seed: int, size: int = 64) -> dict:
    rng = np.random.default_rng(seed)
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w]

    surface = np.full((h, w), WALL)
    face = np.zeros((h, w), dtype=int)  # distinct planar facets
    depth = np.full((h, w), 5.0)
    normal = np.zeros((h, w, 3))
    normal[..., 2] = 1.0
    albedo_id = np.zeros((h, w), dtype=int)

    # wall albedo split
    vertical = rng.random() < 0.5
    cut = int(rng.integers(size // 6, size - size // 6))
    albedo_id[(xx if vertical else yy) >= cut] = 1
    colors = [_color(rng)]
    colors.append(_color(rng, colors))

    # optional disk at 3 m
    if rng.random() < 0.6:
        r = rng.uniform(size * 0.1, size * 0.18)
        cy, cx = rng.uniform(r + 2, size - r - 2, size=2)
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        surface[disk] = DISK
        face[disk] = 1
        depth[disk] = 3.0
        albedo_id[disk] = 2
    colors.append(_color(rng, colors))

    # box at 2 m with a vertical crease; its shadow is the box footprint shifted on the wall
    bh, bw = rng.integers(size // 4, size // 2, size=2)
    r0 = int(rng.integers(2, size - bh - 2))
    c0 = int(rng.integers(2, size - bw - 2))
    box = (yy >= r0) & (yy < r0 + bh) & (xx >= c0) & (xx < c0 + bw)
    crease = c0 + int(bw // 2)
    sdy, sdx = rng.integers(4, 9, size=2) * rng.choice([-1, 1], size=2)
    shadow_fp = (yy >= r0 + sdy) & (yy < r0 + bh + sdy) & (xx >= c0 + sdx) & (xx < c0 + bw + sdx)
    surface[box] = BOX
    depth[box] = 2.0
    left = box & (xx < crease)
    right = box & (xx >= crease)
    face[left], face[right] = 2, 3
    normal[left] = [-0.6, 0.0, 0.8]
    normal[right] = [0.6, 0.0, 0.8]
    albedo_id[box] = 3
    colors.append(_color(rng, colors))

    shadow = shadow_fp & (surface == WALL)

    shading = 0.25 + 0.75 * np.clip(normal @ LIGHT, 0, None)
    image = np.stack(colors)[albedo_id] * shading[..., None]
    image[shadow] *= SHADOW_FACTOR
    image = image.clip(0, 1).astype(np.float32)

    gt = _analytic_edges(surface, face, depth, normal, albedo_id, shadow)
    return {
        "image": image,
        "gt": gt,
        "depth": depth,
        "normal": normal,
        "shadow": shadow.astype(np.uint8),
        "instance": surface.astype(np.int64),
    }


def _neighbor_pairs(shape):
    h, w = shape
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        yq = slice(max(0, dy), h - max(0, -dy))
        xq = slice(max(0, dx), w - max(0, -dx))
        yield (ys, xs), (yq, xq)


def _analytic_edges(surface, face, depth, normal, albedo_id, shadow) -> dict[str, np.ndarray]:
    shape = surface.shape
    out = {c: np.zeros(shape, dtype=bool) for c in CAUSES}
    cos_crease = np.cos(np.radians(CREASE_DEG))
    for p, q in _neighbor_pairs(shape):
        dp, dq = depth[p], depth[q]
        same_surface = np.abs(dp - dq) < DEPTH_JUMP
        # occluding side carries the depth edge
        out["d"][p] |= dq > dp + DEPTH_JUMP
        bend = (normal[p] * normal[q]).sum(-1) < cos_crease
        out["n"][p] |= same_surface & bend & (face[p] < face[q])
        flat = same_surface & ~bend & (face[p] == face[q])
        out["r"][p] |= flat & (albedo_id[p] < albedo_id[q])
        out["i"][p] |= flat & shadow[p] & ~shadow[q]
    # thinning drops redundant corner pixels, so the maps are fixed points of evaluation thinning
    return {c: thin_edges(m).astype(np.uint8) for c, m in out.items()}


def write_toy_dataset(root: str | Path, count: int = 8, seed: int = 0, split: str = "train", size: int = 64) -> list[str]:
    """Write images, cause GT, and auxiliary maps in the loader's directory layout."""
    root = Path(root)
    ids = []
    for k in range(count):
        sid = f"scene{k:02d}"
        scene = render_scene(seed * 1000 + k, size)
        imageio.write_image(root / "images" / split / f"{sid}.png", scene["image"])
        for c in CAUSES:
            imageio.write_binary(root / "gt" / CAUSE_NAMES[c] / split / f"{sid}.png", scene["gt"][c])
        imageio.write_uint16(root / "aux" / "depth" / split / f"{sid}.png", np.round(scene["depth"] * 1000))
        imageio.write_normals(root / "aux" / "normal" / split / f"{sid}.png", scene["normal"])
        imageio.write_binary(root / "aux" / "shadow" / split / f"{sid}.png", scene["shadow"])
        imageio.write_uint16(root / "aux" / "instance" / split / f"{sid}.png", scene["instance"])
        ids.append(sid)
    return ids
