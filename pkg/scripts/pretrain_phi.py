"""Pretrain the inverse transform network on the bundled toy edge maps and save it."""

import argparse
import time

import numpy as np

from ect import checkpoint as ckpt
from ect.alignment import pretrain_inverse_net
from ect.data import load_split


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-root", default="data/toy")
    parser.add_argument("--out", default="runs/phi")
    parser.add_argument("--steps", type=int, default=600)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    corpus = [m.astype(np.float32) for s in load_split(args.data_root, "train") for m in s.gt.values()]
    start = time.perf_counter()
    net, report = pretrain_inverse_net(corpus, steps=args.steps, seed=args.seed)
    manifest = {"input_size": net.input_size, "mode": net.mode, "report": report.to_dict()}
    ckpt.save_checkpoint(args.out, ckpt.module_arrays(net), manifest)
    print(f"final validation mse {report.final_mse:.5f} after {args.steps} steps, {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
