"""Command-line entry point: ``ect {train,eval,predict,derive,pretrain-inverse,plot-pr,dump-attn}``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 unreadable or missing data.
Every command writes a JSON report whose only run-dependent field is ``timestamp``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from . import imageio
from .alignment import pretrain_inverse_net, SamplerConfig
from .cause_decoder import export_attention
from .config import CAUSE_NAMES, CAUSES, TASKS, ConfigError, DerivationConfig, RunConfig, load_run_config, set_flat
from .data import list_ids, load_split
from .derivation import (
    AuxiliaryMap,
    derive_depth_edges,
    derive_generic_from_instances,
    derive_illumination_edges,
    derive_normal_edges,
)
from .metrics import DEFAULT_TOLERANCE, EvalSummary, evaluate_dataset, pr_curve_export
from .model_core import image_to_tensor
from .train import load_inverse_net, load_model, task_predictions, train

log = logging.getLogger("ect")

DATA_ROOT_ENV = "ECT_DATA_ROOT"
OUTPUT_NAMES = {"e": "generic", **{c: CAUSE_NAMES[c] for c in CAUSES}}
DERIVED_DIRS = {"ie": "illumination", "de": "depth", "ne": "normal", "ge": "generic"}


def _hash(params: dict) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_report(path: Path, command: str, inputs: dict, config_hash: str, results: dict) -> Path:
    report = {
        "command": command,
        "inputs": inputs,
        "config_hash": config_hash,
        "results": results,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def _data_root(flag: str | None, configured: str) -> str:
    return flag or os.environ.get(DATA_ROOT_ENV) or configured


# train


def cmd_train(args) -> dict:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_flat(cfg, key.strip(), value.strip())
    if args.steps is not None:
        cfg.optim.steps = args.steps
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.inverse_net:
        cfg.inverse_net = args.inverse_net
    cfg.data_root = _data_root(args.data_root, cfg.data_root)
    cfg.validate()
    if cfg.loss.lambda_a > 0 and not cfg.inverse_net:
        raise ConfigError("lambda_a > 0 needs a pretrained inverse network: pass --inverse-net or set lambda_a = 0")
    phi = load_inverse_net(cfg.inverse_net) if cfg.loss.lambda_a > 0 else None
    samples = load_split(cfg.data_root, cfg.split)
    trainer = train(cfg, samples, phi, resume=args.resume)
    hist = trainer.history
    results = {
        "steps": trainer.step,
        "initial_total": hist[0].l_total if hist else None,
        "final_total": hist[-1].l_total if hist else None,
        "checkpoint": str(Path(cfg.output_dir) / "final"),
    }
    inputs = {"data_root": cfg.data_root, "split": cfg.split, "resume": args.resume}
    write_report(Path(cfg.output_dir) / "train_report.json", "train", inputs, cfg.hash(), results)
    return results


# eval


def _load_predictions(pred_dir: Path, ids: list[str]) -> dict[str, list[np.ndarray]]:
    out = {k: [] for k in TASKS}
    for i in ids:
        for k in TASKS:
            out[k].append(imageio.read_gray(pred_dir / i / f"{OUTPUT_NAMES[k]}.png"))
    return out


def _model_predictions(stem: str, images: list[np.ndarray]) -> dict[str, list[np.ndarray]]:
    model, _ = load_model(stem)
    out = {k: [] for k in TASKS}
    with torch.no_grad():
        for image in images:
            preds = task_predictions(model(image_to_tensor(image)))
            for k in TASKS:
                out[k].append(preds[k][0].numpy().astype(np.float64))
    return out


def _summary_entry(s: EvalSummary) -> dict:
    return {"ods": s.ods_f, "ois": s.ois_f, "ap": s.ap, "ods_threshold": s.ods_threshold}


def cmd_eval(args) -> dict:
    root = _data_root(args.data_root, "data/toy")
    if (args.pred is None) == (args.checkpoint is None):
        raise ConfigError("eval needs exactly one of --pred or --checkpoint")
    samples = load_split(root, args.split)
    if args.pred:
        preds = _load_predictions(Path(args.pred), [s.id for s in samples])
    else:
        preds = _model_predictions(args.checkpoint, [s.image for s in samples])
    results, curves = {}, {}
    for k in TASKS:
        s = evaluate_dataset(preds[k], [smp.gt[k] for smp in samples], tol=args.tol, do_thin=not args.no_thin,
                             ois_mode=args.ois_mode)
        results[OUTPUT_NAMES[k]] = _summary_entry(s)
        curves[OUTPUT_NAMES[k]] = s.to_dict()
    fine = [results[CAUSE_NAMES[c]] for c in CAUSES]
    results["average"] = {m: float(np.mean([r[m] for r in fine])) for m in ("ods", "ois", "ap")}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curves.json").write_text(json.dumps(curves, sort_keys=True) + "\n")
    params = {"tol": args.tol, "thin": not args.no_thin, "ois_mode": args.ois_mode, "split": args.split}
    inputs = {"data_root": root, "pred": args.pred, "checkpoint": args.checkpoint, "ids": [s.id for s in samples]}
    write_report(out / "summary.json", "eval", inputs, _hash(params), results)
    return results


# predict


def _predict_one(model, cfg, image_path: Path, out_dir: Path, resize: bool) -> list[Path]:
    image = imageio.read_image(image_path)
    h, w = image.shape[:2]
    size = (cfg.model.image_height, cfg.model.image_width)
    if (h, w) != size:
        if not resize:
            raise ConfigError(
                f"{image_path} is {h}x{w} but the model expects {size[0]}x{size[1]}; pass --resize to rescale"
            )
        t = torch.from_numpy(image).permute(2, 0, 1)[None]
        image = F.interpolate(t, size=size, mode="bilinear", align_corners=False)[0].permute(1, 2, 0).numpy()
        image = image.clip(0, 1)
    with torch.no_grad():
        preds = task_predictions(model(image_to_tensor(image)))
    written = []
    for k in TASKS:
        prob = preds[k]  # 1 x H x W
        if (h, w) != size:
            prob = F.interpolate(prob[None], size=(h, w), mode="bilinear", align_corners=False)[0]
        written.append(imageio.write_gray(out_dir / f"{OUTPUT_NAMES[k]}.png", prob[0].numpy()))
    return written


def cmd_predict(args) -> dict:
    model, cfg = load_model(args.checkpoint)
    src = Path(args.image)
    out = Path(args.out)
    if src.is_dir():
        paths = sorted(src.glob("*.png"))
        if not paths:
            raise imageio.DataError(f"no PNG images in {src}")
        written = {p.stem: _predict_one(model, cfg, p, out / p.stem, args.resize) for p in paths}
    else:
        written = {src.stem: _predict_one(model, cfg, src, out, args.resize)}
    results = {k: [p.name for p in v] for k, v in written.items()}
    inputs = {"checkpoint": args.checkpoint, "image": args.image, "resize": args.resize}
    write_report(out / "predict_report.json", "predict", inputs, cfg.hash(), results)
    return results


# derive


def cmd_derive(args) -> dict:
    cfg = DerivationConfig()
    if args.window is not None:
        cfg.window = args.window
    if args.tau is not None:
        if args.kind == "de":
            cfg.tau_depth = args.tau
        elif args.kind == "ne":
            cfg.tau_normal = args.tau
        else:
            raise ConfigError(f"--tau does not apply to derive {args.kind}")
    cfg.validate()
    src, out = Path(args.in_dir), Path(args.out)
    aux = src / "aux"
    source = {"ie": "shadow", "ge": "instance", "de": "instance", "ne": "instance"}[args.kind]
    folder = aux / source / args.split
    if not folder.is_dir():
        raise imageio.DataError(f"missing auxiliary directory: {folder}")
    ids = sorted(p.stem for p in folder.glob("*.png"))
    counts = {}
    for i in ids:
        if args.kind == "ie":
            edges = derive_illumination_edges(AuxiliaryMap("shadow_mask", imageio.read_binary(folder / f"{i}.png", 1)), cfg)
        else:
            ge = derive_generic_from_instances(AuxiliaryMap("instance", imageio.read_uint16(folder / f"{i}.png")))
            if args.kind == "ge":
                edges = ge
            elif args.kind == "de":
                depth, valid = imageio.read_depth(aux / "depth" / args.split / f"{i}.png")
                edges = derive_depth_edges(ge, AuxiliaryMap("depth", depth, valid), cfg)
            else:
                normals = imageio.read_normals(aux / "normal" / args.split / f"{i}.png")
                edges = derive_normal_edges(ge, AuxiliaryMap("normal", normals), cfg)
        imageio.write_binary(out / "gt" / DERIVED_DIRS[args.kind] / args.split / f"{i}.png", edges)
        counts[i] = int(edges.sum())
    inputs = {"in": args.in_dir, "kind": args.kind, "split": args.split}
    write_report(out / f"derive_{args.kind}_report.json", "derive", inputs, _hash(vars(cfg)), {"edge_pixels": counts})
    return counts


# pretrain-inverse


def cmd_pretrain_inverse(args) -> dict:
    root = _data_root(args.data_root, "data/toy")
    samples = load_split(root, args.split)
    corpus = [s.gt[k].astype(np.float32) for s in samples for k in TASKS]
    sampler = SamplerConfig(args.max_translation, args.max_rotation, args.scale_range, args.identity_fraction)
    net, report = pretrain_inverse_net(corpus, sampler, steps=args.steps, seed=args.seed, mode=args.mode)
    stem = Path(args.out)
    arrays = ckpt.module_arrays(net)
    manifest = {"input_size": net.input_size, "mode": net.mode, "report": report.to_dict()}
    ckpt.save_checkpoint(stem, arrays, manifest)
    params = {"steps": args.steps, "seed": args.seed, "mode": args.mode, "sampler": report.sampler}
    results = {"final_mse": report.final_mse, "sampler": report.sampler, "seed": args.seed, "steps": args.steps}
    write_report(stem.parent / f"{stem.name}_report.json", "pretrain-inverse", {"data_root": root, "split": args.split},
                 _hash(params), results)
    return results


# plot-pr


def cmd_plot_pr(args) -> dict:
    path = Path(args.eval_dir) / "curves.json"
    if not path.exists():
        raise imageio.DataError(f"missing {path}; run eval first")
    data = json.loads(path.read_text())
    summaries = {
        name: EvalSummary(d["ods_f"], d["ods_threshold"], d["ois_f"], d["ap"], [tuple(r) for r in d["pr_curve"]])
        for name, d in data.items()
    }
    files = pr_curve_export(summaries, args.out)
    results = {"files": sorted(p.name for p in files)}
    write_report(Path(args.out) / "plot_pr_report.json", "plot-pr", {"eval_dir": args.eval_dir}, _hash({}), results)
    return results


# dump-attn


def cmd_dump_attn(args) -> dict:
    model, cfg = load_model(args.checkpoint)
    image = imageio.read_image(args.image)
    with torch.no_grad():
        out = model(image_to_tensor(image))
    files = export_attention(out.attention, args.out, image.shape[:2])
    results = {"files": [p.name for p in files]}
    inputs = {"checkpoint": args.checkpoint, "image": args.image}
    write_report(Path(args.out) / "dump_attn_report.json", "dump-attn", inputs, cfg.hash(), results)
    return results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ect", description="Two-stage fine-grained edge detection.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a data split")
    p.add_argument("--config", help="flat key = value or JSON run config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--steps", type=int)
    p.add_argument("--data-root")
    p.add_argument("--output-dir")
    p.add_argument("--inverse-net", help="checkpoint stem of a pretrained inverse network")
    p.add_argument("--resume", help="checkpoint stem to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ODS/OIS/AP per task")
    p.add_argument("--pred", help="directory holding {id}/{generic,reflectance,...}.png")
    p.add_argument("--checkpoint", help="evaluate a trained model directly")
    p.add_argument("--data-root")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--no-thin", action="store_true")
    p.add_argument("--ois-mode", choices=("joint", "independent"), default="joint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write the five probability maps for an image or a directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resize", action="store_true", help="rescale inputs to the model size and back")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("derive", help="derive edge maps from auxiliary maps")
    p.add_argument("kind", choices=sorted(DERIVED_DIRS))
    p.add_argument("--in", dest="in_dir", required=True, help="root holding aux/{shadow,depth,normal,instance}/")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--tau", type=float, help="depth (m) or normal (deg) threshold")
    p.add_argument("--window", type=int)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("pretrain-inverse", help="pretrain the inverse transform network")
    p.add_argument("--data-root")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True, help="checkpoint stem")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("affine", "homography"), default="affine")
    p.add_argument("--max-translation", type=float, default=6.0)
    p.add_argument("--max-rotation", type=float, default=10.0)
    p.add_argument("--scale-range", type=float, default=0.1)
    p.add_argument("--identity-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_pretrain_inverse)

    p = sub.add_parser("plot-pr", help="PR curve CSV and PNG per task from an eval directory")
    p.add_argument("--eval-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_pr)

    p = sub.add_parser("dump-attn", help="write per-stage cause attention maps for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
