"""Overfit the toy model on the bundled scenes and report loss ratio and per-cause ODS."""

import argparse
import json
import time

import torch

from ect.config import load_run_config
from ect.data import load_split, to_tensors
from ect.metrics import evaluate_dataset
from ect.train import Trainer, task_predictions


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/toy_overfit.cfg")
    parser.add_argument("--data-root", default="data/toy")
    parser.add_argument("--log-every", type=int, default=100)
    args = parser.parse_args()
    cfg = load_run_config(args.config)
    samples = load_split(args.data_root, "train")
    trainer = Trainer(cfg, samples)
    start = time.perf_counter()
    while trainer.step < cfg.optim.steps:
        entry = trainer.train_step()
        if entry.step % args.log_every == 0:
            print(f"step {entry.step:5d}  L_total {entry.l_total:10.3f}", flush=True)
    elapsed = time.perf_counter() - start
    trainer.model.eval()
    images, gts = to_tensors(samples)
    with torch.no_grad():
        preds = task_predictions(trainer.model(images))
    ods = {k: evaluate_dataset([p.numpy() for p in preds[k]], [g.numpy() for g in gts[k]]).ods_f for k in preds}
    first, last = trainer.history[0].l_total, trainer.history[-1].l_total
    print(json.dumps({"initial": first, "final": last, "ratio": last / first, "ods": ods, "seconds": elapsed}, indent=2))


if __name__ == "__main__":
    main()
