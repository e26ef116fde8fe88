"""Dataclass configs and the flat key=value run-config format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

TASKS = ("e", "r", "i", "n", "d")
CAUSES = ("r", "i", "n", "d")
CAUSE_NAMES = {"r": "reflectance", "i": "illumination", "n": "normal", "d": "depth", "e": "generic"}


class ConfigError(ValueError):
    """Raised when a configuration violates its invariants."""


@dataclass
class ModelConfig:
    image_height: int = 64
    image_width: int = 64
    embed_dim: int = 32
    feature_stride: int = 4
    patch_size: int = 8
    encoder_layers: int = 4
    encoder_heads: int = 4
    tap_indices: tuple[int, ...] = (1, 2, 3, 4)
    decoder_stages: int = 4
    decoder_heads: int = 4
    stem_channels: int = 16
    mlp_ratio: int = 2
    downsample: str = "avgpool"  # or "conv"
    adaptive_tokens: bool = True
    seed: int = 0

    def validate(self) -> None:
        h, w, p, s = self.image_height, self.image_width, self.patch_size, self.feature_stride
        if s < 1 or s & (s - 1):
            raise ConfigError(f"feature_stride must be a power of two, got {s}")
        if p < 4 or p % 4:
            raise ConfigError(f"patch_size must be a multiple of 4 (two stride-2 stem convs), got {p}")
        for dim in (h, w):
            if dim % p or dim % (4 * s):
                raise ConfigError(f"image dims {h}x{w} must be divisible by patch_size={p} and 4*stride={4 * s}")
        if self.embed_dim < 1 or self.encoder_layers < 1 or self.decoder_stages < 1:
            raise ConfigError("embed_dim, encoder_layers and decoder_stages must be positive")
        if self.embed_dim % self.encoder_heads or self.embed_dim % self.decoder_heads:
            raise ConfigError("embed_dim must be divisible by encoder_heads and decoder_heads")
        taps = tuple(self.tap_indices)
        if len(taps) != 4:
            raise ConfigError(f"exactly 4 tap indices required, got {taps}")
        if any(b <= a for a, b in zip(taps, taps[1:])):
            raise ConfigError(f"tap indices must be strictly increasing, got {taps}")
        if taps[0] < 1 or taps[-1] > self.encoder_layers:
            raise ConfigError(f"tap indices {taps} out of range [1, {self.encoder_layers}]")
        if self.downsample not in ("avgpool", "conv"):
            raise ConfigError(f"unknown downsample mode {self.downsample!r}")


@dataclass
class LossConfig:
    beta: dict[str, float] = field(default_factory=lambda: {k: 4.0 for k in TASKS})
    gamma: dict[str, float] = field(default_factory=lambda: {k: 0.5 for k in TASKS})
    lam: dict[str, float] = field(default_factory=lambda: {k: 1.0 for k in TASKS})
    lambda_a: float = 0.1
    eps: float = 1e-6
    normalize: bool = False  # divide the per-image pixel sum by the pixel count

    def validate(self) -> None:
        for k in TASKS:
            if self.beta[k] <= 0 or self.gamma[k] <= 0:
                raise ConfigError(f"beta/gamma for task {k!r} must be positive")
            if self.lam[k] < 0:
                raise ConfigError(f"lambda for task {k!r} must be nonnegative")
        if self.lambda_a < 0:
            raise ConfigError("lambda_a must be nonnegative")
        if not 0 < self.eps < 0.5:
            raise ConfigError("eps must lie in (0, 0.5)")


@dataclass
class AugmentConfig:
    enabled: bool = True
    horizontal_flip: bool = True
    scales: tuple[float, ...] = (0.5, 1.0, 1.5)
    rotation_degrees: tuple[int, ...] = (0, 90, 180, 270)
    crop: tuple[int, int] = (64, 64)
    seed: int = 0

    def validate(self) -> None:
        if any(s <= 0 for s in self.scales):
            raise ConfigError("augmentation scales must be positive")
        if any(r % 90 for r in self.rotation_degrees):
            raise ConfigError("only multiples of 90 degrees are supported for rotation")


@dataclass
class DerivationConfig:
    window: int = 2
    tau_depth: float = 0.1
    tau_normal: float = 15.0
    invalid_depth: str = "exclude"

    def validate(self) -> None:
        if self.window < 1:
            raise ConfigError("window half-width must be >= 1")
        if self.tau_depth <= 0:
            raise ConfigError("tau_depth must be positive")
        if not 0 < self.tau_normal < 180:
            raise ConfigError("tau_normal must lie in (0, 180)")
        if self.invalid_depth not in ("exclude", "keep"):
            raise ConfigError(f"unknown invalid_depth mode {self.invalid_depth!r}")


@dataclass
class OptimConfig:
    name: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    steps: int = 2000
    batch_size: int = 8
    grad_clip: float = 0.0

    def validate(self) -> None:
        if self.name not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.name!r}")
        if self.lr <= 0 or self.steps < 1 or self.batch_size < 1:
            raise ConfigError("lr, steps and batch_size must be positive")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    derivation: DerivationConfig = field(default_factory=DerivationConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data_root: str = "data/toy"
    split: str = "train"
    output_dir: str = "runs/default"
    inverse_net: str = ""
    checkpoint_every: int = 500
    log_every: int = 1
    seed: int = 0

    def validate(self) -> None:
        for part in (self.model, self.loss, self.augment, self.derivation, self.optim):
            part.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_flat(self) -> dict[str, object]:
        return to_flat(self)

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for key, value in data.items():
            if key in ("model", "loss", "augment", "derivation", "optim") and isinstance(value, dict):
                sub = getattr(cfg, key)
                for k, v in value.items():
                    _assign(sub, k, v)
            else:
                _assign(cfg, key, value)
        return cfg


# flat keys map to (section, field[, task]); loss keys mirror e.g. beta_r, gamma_d, lambda_a
_SECTIONS = {
    "model": ModelConfig,
    "augment": AugmentConfig,
    "derivation": DerivationConfig,
    "optim": OptimConfig,
}


def _coerce(current, value):
    if isinstance(value, str):
        text = value.strip()
        if isinstance(current, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"not a boolean: {value!r}")
            return text.lower() in ("true", "1", "yes")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            items = [t for t in text.replace("(", "").replace(")", "").split(",") if t.strip()]
            kind = type(current[0]) if current else float
            return tuple(kind(t) for t in items)
        return text
    if isinstance(current, tuple):
        return tuple(value)
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _assign(obj, key: str, value) -> None:
    if not hasattr(obj, key) or key.startswith("_"):
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(obj, key)
    if isinstance(current, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"config key {key!r} expects a mapping")
        merged = dict(current)
        merged.update({k: float(v) for k, v in value.items()})
        setattr(obj, key, merged)
        return
    setattr(obj, key, _coerce(current, value))


def set_flat(cfg: RunConfig, key: str, value) -> None:
    """Assign one flat key such as ``beta_r``, ``lambda_a``, ``model.embed_dim``, ``steps``."""
    if key == "lambda_a":
        cfg.loss.lambda_a = float(value)
        return
    head, _, tail = key.rpartition("_")
    if head in ("beta", "gamma", "lambda") and tail in TASKS:
        table = {"beta": cfg.loss.beta, "gamma": cfg.loss.gamma, "lambda": cfg.loss.lam}[head]
        table[tail] = float(value)
        return
    if key in ("eps", "normalize"):
        _assign(cfg.loss, key, value)
        return
    if "." in key:
        section, name = key.split(".", 1)
        if section == "loss":
            set_flat(cfg, name, value)
            return
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        _assign(getattr(cfg, section), name, value)
        return
    if hasattr(cfg, key):
        _assign(cfg, key, value)
        return
    owners = [s for s, kind in _SECTIONS.items() if key in {f.name for f in dataclasses.fields(kind)}]
    if len(owners) != 1:
        raise ConfigError(f"unknown or ambiguous config key {key!r}")
    _assign(getattr(cfg, owners[0]), key, value)


def to_flat(cfg: RunConfig) -> dict[str, object]:
    out: dict[str, object] = {}
    for section in _SECTIONS:
        for k, v in dataclasses.asdict(getattr(cfg, section)).items():
            out[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
    for k in TASKS:
        out[f"beta_{k}"] = cfg.loss.beta[k]
        out[f"gamma_{k}"] = cfg.loss.gamma[k]
        out[f"lambda_{k}"] = cfg.loss.lam[k]
    out["lambda_a"] = cfg.loss.lambda_a
    out["eps"] = cfg.loss.eps
    out["normalize"] = cfg.loss.normalize
    for f in ("data_root", "split", "output_dir", "inverse_net", "checkpoint_every", "log_every", "seed"):
        out[f] = getattr(cfg, f)
    return out


def load_run_config(path: str | Path) -> RunConfig:
    """Read a run config; JSON if the file parses as JSON, otherwise flat ``key = value`` lines."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = None
    cfg = RunConfig()
    if isinstance(data, dict):
        nested = {k: v for k, v in data.items() if isinstance(v, dict) and k in ("model", "augment", "derivation", "optim")}
        for section, values in nested.items():
            for k, v in values.items():
                _assign(getattr(cfg, section), k, v)
        for k, v in data.items():
            if k not in nested:
                set_flat(cfg, k, v)
    else:
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            set_flat(cfg, key, value)
    cfg.validate()
    return cfg


def dump_run_config(cfg: RunConfig, path: str | Path) -> None:
    lines = []
    for k, v in to_flat(cfg).items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
