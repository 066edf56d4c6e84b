"""Command-line interface.

Subcommands: ``simulate``, ``make-masks``, ``train``, ``reconstruct``,
``evaluate``, ``report``. Exit codes: 0 success, 2 configuration error,
3 data-format error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import h5py
import numpy as np
import torch

from . import cotrain, data, evaluate, masks
from .errors import (
    ContractError,
    DataFormatError,
    InvalidConfigError,
    InvalidInputError,
    TrainingDivergedError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comri",
        description="Co-trained dual-branch unrolled reconstruction for "
        "multi-coil MRI",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic phantom dataset")
    p.add_argument("--n", type=int, required=True, help="number of volumes")
    p.add_argument("--slices", type=int, required=True, help="slices per volume")
    p.add_argument("--H", type=int, required=True, help="image height")
    p.add_argument("--W", type=int, required=True, help="image width")
    p.add_argument("--C", type=int, required=True, help="number of coils")
    p.add_argument("--noise", type=float, default=0.0, help="k-space noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split-seed", type=int, default=None,
                   help="also write manifest.txt with this split seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-masks", help="generate an undersampling mask")
    p.add_argument("--kind", choices=["1d", "2d"], required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--R", type=float, required=True, help="acceleration rate")
    p.add_argument("--acs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output HDF5 path")
    p.set_defaults(func=cmd_make_masks)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="JSON file echoing the training config")
    p.add_argument("--regime", choices=sorted(cotrain.REGIMES),
                   help="overrides the config regime")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--manifest", default=None,
                   help="split manifest (default: <data>/manifest.txt)")
    p.add_argument("--mask", required=True, help="acquisition mask HDF5")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct a split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--mask", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="metrics, summaries and error maps")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--mask", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--methods", nargs="+", default=["zero-filled", "cg-sense"],
                   help="any of: zero-filled, cg-sense, model")
    p.add_argument("--checkpoint", default=None,
                   help="required when 'model' is among the methods")
    p.add_argument("--cg-lambda", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summarize a metrics.csv")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", default=None, help="write summary JSON here")
    p.set_defaults(func=cmd_report)

    return parser


def cmd_simulate(args) -> int:
    ids = data.simulate_phantom_dataset(
        args.out, args.n, args.slices, args.H, args.W, args.C,
        args.noise, args.seed,
    )
    print(f"wrote {len(ids)} volumes to {args.out}")
    if args.split_seed is not None:
        manifest = data.split_dataset(ids, args.split_seed)
        data.save_manifest(os.path.join(args.out, "manifest.txt"), manifest)
        print(
            f"split {len(manifest.train)}/{len(manifest.val)}/"
            f"{len(manifest.test)} -> manifest.txt"
        )
    return EXIT_OK


def cmd_make_masks(args) -> int:
    make = masks.make_1d_random_mask if args.kind == "1d" else masks.make_2d_random_mask
    omega = make(args.height, args.width, args.R, args.acs, args.seed)
    masks.save_mask(args.out, omega)
    print(
        f"{args.kind} mask {args.height}x{args.width}: "
        f"{omega.num_sampled()} samples "
        f"(effective R={masks.effective_acceleration(omega):.2f}) -> {args.out}"
    )
    return EXIT_OK


def _load_manifest(args) -> data.DatasetManifest:
    path = args.manifest or os.path.join(args.data, "manifest.txt")
    if not os.path.exists(path):
        raise DataFormatError(f"manifest not found: {path}")
    return data.load_manifest(path)


def cmd_train(args) -> int:
    cfg_dict = {}
    if args.config:
        with open(args.config) as f:
            try:
                cfg_dict = json.load(f)
            except json.JSONDecodeError as e:
                raise InvalidConfigError(f"{args.config}: {e}") from e
    cfg = cotrain.TrainConfig.from_dict(cfg_dict)
    if args.regime:
        cfg.regime = args.regime
    cfg.validate()

    manifest = _load_manifest(args)
    acq_mask = masks.load_mask(args.mask)
    train_pool = data.build_slice_pool(args.data, manifest.train)
    val_pool = data.build_slice_pool(args.data, manifest.val)
    H, W = train_pool.image_shape
    if (H, W) != acq_mask.shape:
        raise InvalidConfigError(
            f"mask {acq_mask.shape} does not match data {H}x{W}"
        )
    model = cotrain.build_model(H, W, cfg)
    print(
        f"training regime={cfg.regime} on {train_pool.num_slices} slices "
        f"(val {val_pool.num_slices}), {cfg.epochs} epochs"
    )
    result = cotrain.train(model, train_pool, val_pool, acq_mask, cfg, args.out)
    print(
        f"best val {result.monitor_kind}={result.best_monitor:.4f} "
        f"at epoch {result.best_epoch}"
        + (" (early stop)" if result.stopped_early else "")
    )
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    ckpt = cotrain.load_checkpoint(args.checkpoint)
    model = cotrain.model_from_checkpoint(ckpt)
    manifest = _load_manifest(args)
    acq_mask = masks.load_mask(args.mask)
    mask_t = torch.from_numpy(acq_mask.pattern).to(torch.float32)
    os.makedirs(args.out, exist_ok=True)
    ids = getattr(manifest, args.split)
    for vol_id in ids:
        pool = data.build_slice_pool(args.data, [vol_id])
        recon = []
        with torch.no_grad():
            for i in range(pool.num_slices):
                y = pool.kspace[i] * mask_t
                recon.append(
                    cotrain.reconstruct(model, y, mask_t, pool.sens[i])
                )
        out_path = os.path.join(args.out, f"{vol_id}_recon.h5")
        with h5py.File(out_path, "w") as f:
            f.create_dataset(
                "reconstruction",
                data=torch.stack(recon).numpy().astype(np.complex64),
            )
        print(f"{vol_id}: {len(recon)} slices -> {out_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = _load_manifest(args)
    acq_mask = masks.load_mask(args.mask)
    pool = data.build_slice_pool(args.data, getattr(manifest, args.split))

    methods: dict = {}
    for name in args.methods:
        if name == "zero-filled":
            methods[name] = evaluate.reconstruct_zero_filled
        elif name == "cg-sense":
            methods[name] = (
                lambda y, m, s: evaluate.reconstruct_cg_sense(
                    y, m, s, lam=args.cg_lambda
                )
            )
        elif name == "model":
            if not args.checkpoint:
                raise InvalidConfigError("--checkpoint required for method 'model'")
            model = cotrain.model_from_checkpoint(
                cotrain.load_checkpoint(args.checkpoint)
            )
            methods[name] = (
                lambda y, m, s: cotrain.reconstruct(model, y, m, s)
            )
        else:
            raise InvalidConfigError(f"unknown method {name!r}")

    records, summary = evaluate.evaluate_pool(pool, acq_mask, methods, args.out)
    _print_summary(summary)
    print(f"wrote metrics for {len(records)} slice-method pairs to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    records = evaluate.read_metrics_csv(args.metrics)
    summary = evaluate.summarize(records)
    _print_summary(summary)
    if args.out:
        with open(args.out, "w") as f:
            json.dump(summary, f, indent=2)
        print(f"summary -> {args.out}")
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    header = f"{'method':<16} {'n':>4}  {'PSNR (dB)':>18}  {'SSIM':>16}"
    print(header)
    print("-" * len(header))
    for method, stats in summary.items():
        p, s = stats["psnr_db"], stats["ssim"]
        print(
            f"{method:<16} {stats['n_slices']:>4}  "
            f"{p['mean']:>8.3f} ± {p['std']:<7.3f}  "
            f"{s['mean']:>7.4f} ± {s['std']:<6.4f}"
        )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfigError, InvalidInputError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
