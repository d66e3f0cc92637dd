#!/usr/bin/env python3
"""Desk-scale ablation matrix over bottleneck type, translation stage, and
loss presets, mirroring the architecture/loss comparison tables."""

import argparse
import json
from pathlib import Path

from cloudgan.cli import main as cloudgan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="ablation_run")
    ap.add_argument("--pairs", type=int, default=16)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--base-channels", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    if not (data / "sar").exists():
        from cloudgan.demo import make_demo_dataset
        make_demo_dataset(data, args.pairs, args.size, args.seed)

    if args.size % 8 or (args.size // 8) & (args.size // 8 - 1):
        raise SystemExit("--size must be 8 * 2^k for the unet baseline")
    unet_depth = (args.size // 8).bit_length() - 1
    config = {
        "data": {"root": str(data), "split_seed": args.seed,
                 "train_fraction": 1.0},
        "model": {"base_channels": args.base_channels,
                  "unet_extra_depth": unet_depth},
        "synth": {"seed": args.seed},
        "train": {"cloud": {"max_steps": args.steps, "seed": args.seed}},
        "eval": {"split": "train"},
        "ablate": {"bottlenecks": ["drib", "unet"],
                   "sar2opt_flags": [True, False],
                   "loss_presets": ["L1", "SSIM", "SSIM+L1"]},
        "output": {"dir": str(work / "runs")},
    }
    cfg_path = work / "config.json"
    work.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(json.dumps(config, indent=1))

    for argv in (["synth", "-c", str(cfg_path)],
                 ["ablate", "-c", str(cfg_path)]):
        code = cloudgan(argv)
        if code != 0:
            raise SystemExit(code)
    print((work / "runs" / "ablate" / "ablation.csv").read_text())


if __name__ == "__main__":
    main()
