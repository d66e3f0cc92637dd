#!/usr/bin/env python3
"""Desk-scale end-to-end run: demo data -> cloud synthesis -> stage-1 and
stage-2 training -> evaluation report and comparison grids.

Finishes in a few minutes on a laptop CPU with the default settings.
"""

import argparse
import json
from pathlib import Path

from cloudgan.cli import main as cloudgan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="desk_run")
    ap.add_argument("--pairs", type=int, default=8)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--base-channels", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    if not (data / "sar").exists():
        from cloudgan.demo import make_demo_dataset
        make_demo_dataset(data, args.pairs, args.size, args.seed)

    ckpt1 = work / "runs" / "train-sar2opt" / f"ckpt-{args.steps}"
    config = {
        "data": {"root": str(data), "split_seed": args.seed,
                 "train_fraction": 0.75},
        "model": {"base_channels": args.base_channels},
        "synth": {"seed": args.seed},
        "train": {
            "sar2opt": {"max_steps": args.steps, "seed": args.seed},
            "cloud": {"max_steps": args.steps, "seed": args.seed,
                      "stage1_checkpoint": str(ckpt1)},
        },
        "eval": {"split": "test", "grid_rows": 2},
        "output": {"dir": str(work / "runs")},
    }
    cfg_path = work / "config.json"
    work.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(json.dumps(config, indent=1))

    def run(*argv):
        code = cloudgan(list(argv))
        if code != 0:
            raise SystemExit(code)

    run("synth", "-c", str(cfg_path))
    run("train", "-c", str(cfg_path), "--stage", "sar2opt")
    run("train", "-c", str(cfg_path), "--stage", "cloud")
    ckpt2 = work / "runs" / "train-cloud" / f"ckpt-{args.steps}"
    run("eval", "-c", str(cfg_path), "--ckpt", str(ckpt2), "--grid")
    print(f"done; see {work / 'runs'}")


if __name__ == "__main__":
    main()
