"""Command-line interface.

Subcommands cover the whole workflow on synthetic data:

    gen-data    generate a phantom dataset
    train       fit the network, writing a checkpoint and epoch CSV
    infer       segment images with Monte Carlo TTA and uncertainty maps
    eval        hard-Dice comparison: plain fixed threshold vs TTA+adaptive
    gradcheck   finite-difference verification of all backward passes

Every command echoes its fully resolved configuration to config.txt in the
output directory, uses no timestamps, and produces byte-identical outputs
when re-run with identical flags and inputs. Exit codes: 0 success,
1 runtime/data error, 2 usage error.
"""

import argparse
import csv
import math
import os
import sys

import numpy as np

from .checkpoint import load_model, save_model
from .errors import FormatError, ShapeError, TrainingError
from .geometry import TransformConfig
from .gradcheck import default_check, format_report
from .imageio import mask_to_bytes, scale_to_bytes, write_pgm
from .inference import McConfig, ThresholdConfig, run_pipeline
from .losses import hard_dice
from .network import ModelConfig, SegModel
from .phantoms import PhantomConfig, generate_dataset, load_dataset, save_dataset
from .rng import derive_stream
from .tensor import load_tensor, save_tensor
from .training import INIT_STREAM, TrainConfig, fit


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _nonneg_float(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _write_config(out_dir, settings):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        for key in sorted(settings):
            f.write(f"{key}={settings[key]}\n")


def _fmt(x):
    """Round-trippable, deterministic float formatting for CSV cells."""
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return repr(x)
    return str(x)


def _add_mc_flags(p):
    p.add_argument("--samples", type=_positive_int, default=16,
                   help="Monte Carlo samples per image (default 16)")
    p.add_argument("--gamma", type=_nonneg_float, default=0.1,
                   help="uncertainty weight in the threshold (default 0.1)")
    p.add_argument("--baseline", type=float, default=0.5,
                   help="baseline foreground threshold (default 0.5)")
    p.add_argument("--t-range", type=_nonneg_float, default=20.0,
                   help="translation range in pixels (default 20)")
    p.add_argument("--r-range", type=_nonneg_float, default=20.0,
                   help="rotation range in degrees (default 20)")
    p.add_argument("--seed", type=int, default=0,
                   help="base seed for transform sampling (default 0)")


def cmd_gen_data(args):
    cfg = PhantomConfig(size=args.size, noise_sigma=args.noise_sigma,
                        bias_amplitude=args.bias_amplitude)
    dataset = generate_dataset(args.seed, args.subjects, args.slices, cfg)
    save_dataset(dataset, args.out)
    _write_config(args.out, {
        "command": "gen-data", "seed": args.seed, "subjects": args.subjects,
        "slices": args.slices, "size": args.size,
        "noise_sigma": args.noise_sigma, "bias_amplitude": args.bias_amplitude,
    })
    print(f"wrote {len(dataset)} phantoms to {args.out}")
    return 0


def cmd_train(args):
    dataset = load_dataset(args.data)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                      dropout_rate=args.dropout, lambda_l1=args.l1,
                      batch_size=args.batch_size, seed=args.seed,
                      holdout_subjects=args.holdout)
    model_cfg = ModelConfig(dropout_rate=args.dropout)
    model = SegModel.create(model_cfg, derive_stream(args.seed, INIT_STREAM))
    result = fit(model, dataset, cfg)

    os.makedirs(args.out, exist_ok=True)
    save_model(model, os.path.join(args.out, "checkpoint"))
    with open(os.path.join(args.out, "epochs.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "train_bce", "train_dice",
                         "val_dice"])
        for row in result.log:
            writer.writerow([row.epoch, _fmt(row.train_loss),
                             _fmt(row.train_bce), _fmt(row.train_dice),
                             _fmt(row.val_dice)])
    with open(os.path.join(args.out, "split.txt"), "w") as f:
        f.write("train " + " ".join(map(str, result.train_subjects)) + "\n")
        f.write("test " + " ".join(map(str, result.test_subjects)) + "\n")
    _write_config(args.out, {
        "command": "train", "data": args.data, "epochs": args.epochs,
        "learning_rate": args.lr, "dropout_rate": args.dropout,
        "lambda_l1": args.l1, "batch_size": args.batch_size,
        "seed": args.seed, "holdout_subjects": args.holdout,
        "widths": ",".join(map(str, model_cfg.widths)),
        "bottleneck": model_cfg.bottleneck,
    })
    if result.log:
        last = result.log[-1]
        print(f"trained {args.epochs} epochs; final train_loss="
              f"{last.train_loss:.4f} val_dice={last.val_dice:.4f}")
    else:
        print("trained 0 epochs; checkpoint holds the initialized model")
    return 0


def _mc_threshold_configs(args):
    mc = McConfig(samples=args.samples,
                  transform=TransformConfig(args.t_range, args.r_range),
                  seed=args.seed)
    th = ThresholdConfig(baseline=args.baseline, gamma=args.gamma)
    return mc, th


def _infer_one(model, image, stem, out_dir, mc, th):
    from .inference import aggregate, adaptive_threshold, mc_predict, segment
    sample = mc_predict(model, image, mc)
    stats = aggregate(sample.stack, sample.validity)
    d = adaptive_threshold(stats, th)
    result = segment(stats, d)

    save_tensor(os.path.join(out_dir, f"{stem}_mask.ntf"), result.mask)
    save_tensor(os.path.join(out_dir, f"{stem}_median.ntf"), result.median)
    save_tensor(os.path.join(out_dir, f"{stem}_sigma.ntf"), result.sigma)
    save_tensor(os.path.join(out_dir, f"{stem}_threshold.ntf"), result.threshold)

    med_bytes, med_peak = scale_to_bytes(result.median)
    sig_bytes, sig_peak = scale_to_bytes(result.sigma)
    write_pgm(os.path.join(out_dir, f"{stem}_mask.pgm"),
              mask_to_bytes(result.mask))
    write_pgm(os.path.join(out_dir, f"{stem}_median.pgm"), med_bytes)
    write_pgm(os.path.join(out_dir, f"{stem}_sigma.pgm"), sig_bytes)

    with open(os.path.join(out_dir, f"{stem}_transforms.csv"), "w",
              newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_index", "t_x", "t_y", "theta"])
        for i, t in enumerate(sample.transforms):
            writer.writerow([i, _fmt(t.t_x), _fmt(t.t_y), _fmt(t.theta)])
    with open(os.path.join(out_dir, f"{stem}_scales.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["map", "max"])
        writer.writerow(["median", _fmt(med_peak)])
        writer.writerow(["sigma", _fmt(sig_peak)])
    return result


def cmd_infer(args):
    model = load_model(args.checkpoint)
    mc, th = _mc_threshold_configs(args)
    os.makedirs(args.out, exist_ok=True)

    jobs = []
    if args.image is not None:
        stem = os.path.splitext(os.path.basename(args.image))[0]
        jobs.append((stem, load_tensor(args.image)))
    else:
        dataset = load_dataset(args.data)
        indices = args.index if args.index else range(len(dataset))
        for i in indices:
            if not (0 <= i < len(dataset)):
                raise IndexError(f"record index {i} out of range "
                                 f"(dataset has {len(dataset)})")
            jobs.append((f"rec{i:04d}", dataset[i].image))

    for stem, image in jobs:
        _infer_one(model, image, stem, args.out, mc, th)
    _write_config(args.out, {
        "command": "infer", "checkpoint": args.checkpoint,
        "data": args.data or "", "image": args.image or "",
        "samples": args.samples, "gamma": args.gamma,
        "baseline": args.baseline, "t_range": args.t_range,
        "r_range": args.r_range, "seed": args.seed,
    })
    print(f"segmented {len(jobs)} image(s) into {args.out}")
    return 0


def evaluate_model(model, records, mc, th):
    """Per-record hard Dice in both modes; returns a list of row dicts.

    ``plain`` thresholds a single forward pass at the baseline; ``adaptive``
    is the full Monte Carlo pipeline with the uncertainty-raised threshold.
    """
    rows = []
    for i, rec in enumerate(records):
        heat, _ = model.forward(rec.image[None, None], train=False)
        plain_mask = (heat[0, 0] > th.baseline).astype(np.float64)
        result = run_pipeline(model, rec.image, mc, th)
        rows.append({
            "index": i,
            "subject_id": rec.subject_id,
            "slice_id": rec.slice_id,
            "dice_plain": hard_dice(rec.mask, plain_mask),
            "dice_adaptive": hard_dice(rec.mask, result.mask),
        })
    return rows


def _read_split_subjects(path):
    with open(path) as f:
        for line in f:
            parts = line.split()
            if parts and parts[0] == "test":
                return [int(v) for v in parts[1:]]
    raise FormatError(f"no 'test' line found in split file {path}")


def cmd_eval(args):
    model = load_model(args.checkpoint)
    records = load_dataset(args.data)
    if args.split is not None:
        keep = set(_read_split_subjects(args.split))
        records = [r for r in records if r.subject_id in keep]
    if not records:
        raise ValueError("no records selected for evaluation")
    mc, th = _mc_threshold_configs(args)
    rows = evaluate_model(model, records, mc, th)

    mean_plain = float(np.mean([r["dice_plain"] for r in rows]))
    mean_adaptive = float(np.mean([r["dice_adaptive"] for r in rows]))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "subject_id", "slice_id", "dice_plain",
                         "dice_adaptive"])
        for r in rows:
            writer.writerow([r["index"], r["subject_id"], r["slice_id"],
                             _fmt(r["dice_plain"]), _fmt(r["dice_adaptive"])])
        writer.writerow(["mean", "", "", _fmt(mean_plain), _fmt(mean_adaptive)])
    _write_config(args.out, {
        "command": "eval", "checkpoint": args.checkpoint, "data": args.data,
        "split": args.split or "", "samples": args.samples,
        "gamma": args.gamma, "baseline": args.baseline,
        "t_range": args.t_range, "r_range": args.r_range, "seed": args.seed,
    })
    print(f"plain_fcn_mean_dice={mean_plain:.4f} "
          f"adaptive_mean_dice={mean_adaptive:.4f} over {len(rows)} images")
    return 0


def cmd_gradcheck(args):
    report, _ = default_check(seed=args.seed, fault_layer=args.inject_fault)
    print(format_report(report))
    return 0 if report.ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ttaseg",
        description="Uncertainty-aware binary segmentation with Monte Carlo "
                    "test-time augmentation and adaptive thresholding.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic phantom dataset")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--subjects", type=_positive_int, default=33)
    p.add_argument("--slices", type=_positive_int, default=10)
    p.add_argument("--size", type=_positive_int, default=64)
    p.add_argument("--noise-sigma", type=_nonneg_float, default=0.05)
    p.add_argument("--bias-amplitude", type=_nonneg_float, default=0.10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the segmentation network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=_nonneg_int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--l1", type=_nonneg_float, default=1e-5)
    p.add_argument("--batch-size", type=_positive_int, default=8)
    p.add_argument("--holdout", type=_nonneg_int, default=5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="segment images with uncertainty maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory to read images from")
    src.add_argument("--image", help="a single NTF1 image file")
    p.add_argument("--index", type=_nonneg_int, action="append",
                   help="dataset record index (repeatable; default: all)")
    _add_mc_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="hard-Dice evaluation on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", help="split.txt from training; keeps only its "
                                   "test subjects")
    _add_mc_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, IndexError, KeyError, ShapeError,
            FormatError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
