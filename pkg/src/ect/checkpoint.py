"""Named-array archives with a JSON manifest.

``<path>.npz`` holds one ``.npy`` member per array (stage-1 arrays are prefixed ``stage1.``,
stage-2 arrays ``stage2.``, optimizer state ``optim.``); ``<path>.json`` holds the manifest.
Members are written in sorted order with a fixed timestamp, so saving the same arrays twice
produces identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())
    return path


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(Path(path), allow_pickle=False) as data:
        return {k: data[k] for k in data.files}


def module_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    state = module.state_dict()
    wanted = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    missing = sorted(set(state) - set(wanted))
    if missing:
        raise KeyError(f"checkpoint lacks arrays: {missing[:5]}")
    for k, tensor in state.items():
        arr = wanted[k]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ValueError(f"array {prefix}{k} has shape {arr.shape}, model expects {tuple(tensor.shape)}")
    module.load_state_dict({k: torch.from_numpy(np.array(wanted[k])).to(v.dtype) for k, v in state.items()})


def write_manifest(path: str | Path, manifest: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def save_checkpoint(stem: str | Path, arrays: dict[str, np.ndarray], manifest: dict) -> tuple[Path, Path]:
    stem = Path(stem)
    return save_arrays(stem.with_suffix(".npz"), arrays), write_manifest(stem.with_suffix(".json"), manifest)


def load_checkpoint(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    if stem.suffix in (".npz", ".json"):
        stem = stem.with_suffix("")
    arrays = load_arrays(stem.with_suffix(".npz"))
    manifest = json.loads(stem.with_suffix(".json").read_text())
    return arrays, manifest
