"""Training loop minimizing the task-weighted edge loss plus the weighted alignment term."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .alignment import InverseTransformNet, aggregate_max, alignment_loss, freeze, predict_theta
from .config import CAUSES, ConfigError, RunConfig, TASKS
from .data import Sample, augment, batches, to_tensors
from .losses import erind_loss, total_loss
from .network import ECT, ECTOutput, build_model

log = logging.getLogger(__name__)


def task_predictions(out: ECTOutput) -> dict[str, torch.Tensor]:
    preds = {"e": out.generic[:, 0]}
    preds.update({c: out.fine[:, k] for k, c in enumerate(CAUSES)})
    return preds


def compute_losses(
    model: ECT, images: torch.Tensor, gts: dict[str, torch.Tensor], cfg: RunConfig, phi: InverseTransformNet | None
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    out = model(images)
    l_erind = erind_loss(gts, task_predictions(out), cfg.loss)
    if phi is not None:
        theta = predict_theta(phi, out.generic, aggregate_max(out.fine))
        l_align = alignment_loss(theta)
    else:
        l_align = torch.zeros((), dtype=l_erind.dtype)
    return l_erind, l_align, total_loss(l_erind, l_align, cfg.loss.lambda_a)


def load_inverse_net(path: str | Path) -> InverseTransformNet:
    arrays, manifest = ckpt.load_checkpoint(path)
    net = InverseTransformNet(manifest.get("input_size", 64), manifest.get("mode", "affine"))
    ckpt.load_module_arrays(net, arrays)
    return freeze(net)


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1 + math.cos(math.pi * step / total))


@dataclass
class LogEntry:
    step: int
    lr: float
    l_erind: float
    l_alignment: float
    l_total: float


class Trainer:
    def __init__(self, cfg: RunConfig, samples: Sequence[Sample], phi: InverseTransformNet | None = None):
        cfg.validate()
        if cfg.loss.lambda_a > 0 and phi is None:
            raise ConfigError("lambda_a > 0 requires a pretrained inverse transform network (inverse_net)")
        if len(samples) == 0:
            raise ValueError("no training samples")
        self.cfg = cfg
        self.samples = list(samples)
        self.phi = freeze(phi) if phi is not None else None
        self.model = build_model(cfg.model)
        self.model.train()
        params = list(self.model.parameters())
        o = cfg.optim
        if o.name == "sgd":
            self.opt = torch.optim.SGD(params, lr=o.lr, momentum=o.momentum, weight_decay=o.weight_decay)
        else:
            self.opt = torch.optim.Adam(params, lr=o.lr, weight_decay=o.weight_decay)
        self.step = 0
        self.history: list[LogEntry] = []

    def batch_for(self, step: int) -> list[Sample]:
        per_epoch = math.ceil(len(self.samples) / self.cfg.optim.batch_size)
        epoch, index = divmod(step, per_epoch)
        for k, batch in enumerate(batches(self.samples, self.cfg.optim.batch_size, self.cfg.seed, epoch)):
            if k == index:
                break
        rng = np.random.default_rng([self.cfg.seed, step])
        return [augment(s, self.cfg.augment, rng) for s in batch]

    def train_step(self) -> LogEntry:
        lr = cosine_lr(self.cfg.optim.lr, self.step, self.cfg.optim.steps)
        for group in self.opt.param_groups:
            group["lr"] = lr
        images, gts = to_tensors(self.batch_for(self.step))
        l_erind, l_align, l_total = compute_losses(self.model, images, gts, self.cfg, self.phi)
        if not torch.isfinite(l_total):
            raise FloatingPointError(f"non-finite loss at step {self.step}")
        self.opt.zero_grad()
        l_total.backward()
        if self.cfg.optim.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.optim.grad_clip)
        self.opt.step()
        entry = LogEntry(self.step, lr, l_erind.item(), l_align.item(), l_total.item())
        self.history.append(entry)
        self.step += 1
        return entry

    # checkpointing

    def arrays(self) -> dict[str, np.ndarray]:
        arrays = ckpt.module_arrays(self.model.stage1, "stage1.")
        arrays.update(ckpt.module_arrays(self.model.stage2, "stage2."))
        state = self.opt.state_dict()["state"]
        for idx, st in state.items():
            for key, val in st.items():
                if torch.is_tensor(val):
                    arrays[f"optim.{idx}.{key}"] = val.detach().cpu().numpy().copy()
        return arrays

    def manifest(self) -> dict:
        return {
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.hash(),
            "step": self.step,
            "seed": self.cfg.seed,
            "loss_tail": [vars(e) for e in self.history[-10:]],
        }

    def save(self, stem: str | Path) -> tuple[Path, Path]:
        return ckpt.save_checkpoint(stem, self.arrays(), self.manifest())

    def restore(self, stem: str | Path) -> None:
        arrays, manifest = ckpt.load_checkpoint(stem)
        ckpt.load_module_arrays(self.model.stage1, arrays, "stage1.")
        ckpt.load_module_arrays(self.model.stage2, arrays, "stage2.")
        state: dict[int, dict] = {}
        for name, arr in arrays.items():
            if name.startswith("optim."):
                _, idx, key = name.split(".", 2)
                state.setdefault(int(idx), {})[key] = torch.from_numpy(np.array(arr))
        sd = self.opt.state_dict()
        sd["state"] = state
        self.opt.load_state_dict(sd)
        self.step = int(manifest["step"])


def train(cfg: RunConfig, samples: Sequence[Sample], phi: InverseTransformNet | None = None, resume: str | None = None) -> Trainer:
    """Run the configured number of steps, writing log.jsonl and checkpoints under cfg.output_dir."""
    out = Path(cfg.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    trainer = Trainer(cfg, samples, phi)
    if resume:
        trainer.restore(resume)
    mode = "a" if resume else "w"
    with (out / "log.jsonl").open(mode) as fh:
        while trainer.step < cfg.optim.steps:
            entry = trainer.train_step()
            if entry.step % cfg.log_every == 0 or trainer.step == cfg.optim.steps:
                fh.write(json.dumps(vars(entry)) + "\n")
            if cfg.checkpoint_every and trainer.step % cfg.checkpoint_every == 0:
                trainer.save(out / "checkpoints" / f"step{trainer.step:06d}")
    trainer.save(out / "final")
    return trainer


def load_model(stem: str | Path) -> tuple[ECT, RunConfig]:
    arrays, manifest = ckpt.load_checkpoint(stem)
    cfg = RunConfig.from_dict(manifest["config"])
    model = build_model(cfg.model)
    ckpt.load_module_arrays(model.stage1, arrays, "stage1.")
    ckpt.load_module_arrays(model.stage2, arrays, "stage2.")
    model.eval()
    return model, cfg


__all__ = ["Trainer", "train", "load_model", "compute_losses", "task_predictions", "load_inverse_net", "TASKS"]
