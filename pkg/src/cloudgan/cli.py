"""Command-line front end binding synthesis, training, evaluation, and
ablation into reproducible runs.

Every command validates its JSON config, writes the fully resolved document
into its run directory, and is deterministic given (config, input files).
Exit codes: 0 success, 2 config/schema error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from . import models
from .clouds import generate_mask, load_mask_asset, make_composite
from .data import (
    SamplePair,
    export_grid,
    image_to_tensor,
    load_checkpoint,
    load_dataset,
    read_image,
    tensor_to_image,
    write_image,
)
from .errors import (
    CloudGanError,
    ConfigurationError,
    DataError,
    NumericalError,
)
from .evaluation import (
    MetricConfig,
    cloud_removal_predictor,
    evaluate,
    sar2opt_predictor,
)
from .losses import SSIMParams
from .training import AblationCell, ablate, train_cloud_removal, train_sar2opt


def _metric_config(resolved: dict) -> MetricConfig:
    ev = resolved["eval"]
    return MetricConfig(max_i=ev["max_i"], region_tau=ev["region_tau"],
                        ssim=SSIMParams(window_size=ev["ssim_window"],
                                        sigma=ev["ssim_sigma"]))


def _paired_stems(root: Path) -> list[str]:
    sar = {p.stem for p in (root / "sar").glob("*.png")}
    opt = {p.stem for p in (root / "opt").glob("*.png")}
    orphans = sorted(sar ^ opt)
    if orphans:
        raise DataError(f"unpaired sar/opt files: {', '.join(orphans)}")
    if not sar:
        raise DataError(f"no sar/opt pairs under {root}")
    return sorted(sar)


def cmd_synth(args, resolved: dict) -> int:
    root = Path(resolved["data"]["root"])
    synth = resolved["synth"]
    rdir = cfgmod.run_dir(resolved, "synth")
    cfgmod.write_resolved(resolved, rdir)

    stems = _paired_stems(root)
    coverages = synth["coverages"]
    assets = []
    if synth["asset_dir"]:
        assets = sorted(Path(synth["asset_dir"]).glob("*.png"))
        if not assets:
            raise DataError(f"no mask assets in {synth['asset_dir']}")
    histogram: Counter = Counter()
    for i, stem in enumerate(stems):
        clean = image_to_tensor(read_image(root / "opt" / f"{stem}.png"))
        size = clean.shape[-1]
        target = coverages[i % len(coverages)]
        if assets:
            mask = load_mask_asset(assets[i % len(assets)], size,
                                   seed=synth["seed"] + i)
        else:
            mask = generate_mask(synth["seed"] + i, size, target,
                                 tau=synth["region_tau"],
                                 edge_width=synth["edge_width"])
        comp = make_composite(clean, seed=synth["seed"] + i,
                              target_coverage=target, mask=mask)
        write_image(root / "cloudy" / f"{stem}.png",
                    tensor_to_image(comp.cloudy))
        write_image(root / "mask" / f"{stem}.png",
                    np.clip(np.rint(mask.alpha * 255), 0, 255).astype(np.uint8))
        histogram[round(mask.coverage(synth["region_tau"]), 2)] += 1
    print("coverage histogram: "
          + ", ".join(f"{k:.2f}: {v}" for k, v in sorted(histogram.items())))
    print(f"wrote {len(stems)} cloudy/mask pairs under {root}")
    return 0


def _latest_checkpoint(run_directory: Path) -> Path:
    candidates = sorted(run_directory.glob("ckpt-*"),
                        key=lambda p: int(p.name.split("-")[1]))
    if not candidates:
        raise ConfigurationError(f"no checkpoint to resume in {run_directory}")
    return candidates[-1]


def _load_stage1(resolved: dict):
    path = resolved["train"]["cloud"]["stage1_checkpoint"]
    if not path:
        raise ConfigurationError(
            "cloud stage needs train.cloud.stage1_checkpoint "
            "(or use_sar2opt_stage=false)")
    net, meta, _ = load_checkpoint(path)
    if not isinstance(net.spec, models.GeneratorSpec) \
            or net.spec.in_channels != 1:
        raise ConfigurationError(
            f"{path} is not a stage-1 (SAR input) generator checkpoint")
    return net


def cmd_train(args, resolved: dict) -> int:
    stage = "sar2opt" if args.stage == "sar2opt" else "cloud_removal"
    rdir = cfgmod.run_dir(resolved, f"train-{args.stage}")
    cfgmod.write_resolved(resolved, rdir)
    dataset = load_dataset(resolved["data"]["root"],
                           resolved["data"]["split_seed"], "train",
                           resolved["data"]["train_fraction"])
    cfg = cfgmod.make_train_config(resolved, stage)
    resume_from = _latest_checkpoint(rdir) if args.resume else None
    if stage == "sar2opt":
        result = train_sar2opt(cfg, dataset, out_dir=rdir,
                               resume_from=resume_from)
    else:
        translator = _load_stage1(resolved) if cfg.use_sar2opt_stage else None
        result = train_cloud_removal(cfg, dataset, translator, out_dir=rdir,
                                     resume_from=resume_from)
    result.log.to_csv(rdir / "trainlog.csv")
    last = result.log.records[-1] if result.log.records else None
    tail = f"final loss_g={last.loss_g:.4f}" if last else "no steps run"
    print(f"checkpoint: {result.checkpoint_dir}; {tail}")
    return 0


def _build_predictor(resolved: dict, net) -> tuple:
    """Returns (predictor, stage, translator-or-None) for a checkpoint."""
    spec = net.spec
    if not isinstance(spec, models.GeneratorSpec):
        raise ConfigurationError("checkpoint is not a generator")
    if spec.in_channels == 1:
        return sar2opt_predictor(net), "sar2opt", None
    translator = None
    if spec.in_channels == 6:
        translator = _load_stage1(resolved)
    return cloud_removal_predictor(net, translator), "cloud_removal", translator


def _grid_rows_for(sample: SamplePair, pred, stage: str):
    if stage == "sar2opt":
        return [sample.sar, pred, sample.optical], ["sar", "output", "target"]
    return [sample.cloudy, pred, sample.optical], \
        ["cloudy", "output", "target"]


def _write_grid(predictor, stage, dataset, limit, path) -> Path:
    rows, labels = [], None
    for sample in dataset[:limit]:
        tiles, labels = _grid_rows_for(sample, predictor(sample), stage)
        rows.append(tiles)
    if not rows:
        raise DataError("no samples available for the grid")
    return export_grid(rows, path, labels=labels)


def cmd_eval(args, resolved: dict) -> int:
    rdir = cfgmod.run_dir(resolved, "eval")
    cfgmod.write_resolved(resolved, rdir)
    net, meta, _ = load_checkpoint(args.ckpt)
    predictor, stage, _ = _build_predictor(resolved, net)
    dataset = load_dataset(resolved["data"]["root"],
                           resolved["data"]["split_seed"],
                           resolved["eval"]["split"],
                           resolved["data"]["train_fraction"])
    report = evaluate(predictor, dataset, _metric_config(resolved),
                      stage=stage,
                      config_echo={"checkpoint": str(args.ckpt),
                                   "step": meta.get("step", ""),
                                   "split": resolved["eval"]["split"],
                                   "split_seed": resolved["data"]["split_seed"]})
    path = report.to_csv(rdir / "report.csv")
    if args.grid:
        grid_path = _write_grid(predictor, stage, dataset,
                                resolved["eval"]["grid_rows"],
                                rdir / "grid.png")
        print(f"grid: {grid_path}")
    summary = report.summary()
    mean_psnr = summary["mean_psnr"]
    psnr_txt = "inf-only" if mean_psnr is None else f"{mean_psnr:.4f}"
    print(f"report: {path}; mean psnr={psnr_txt} "
          f"ssim={summary['mean_ssim']:.4f}")
    return 0


def cmd_grid(args, resolved: dict) -> int:
    rdir = cfgmod.run_dir(resolved, "grid")
    cfgmod.write_resolved(resolved, rdir)
    net, _, _ = load_checkpoint(args.ckpt)
    predictor, stage, _ = _build_predictor(resolved, net)
    dataset = load_dataset(resolved["data"]["root"],
                           resolved["data"]["split_seed"],
                           resolved["eval"]["split"],
                           resolved["data"]["train_fraction"])
    path = _write_grid(predictor, stage, dataset,
                       resolved["eval"]["grid_rows"], rdir / "grid.png")
    print(f"grid: {path}")
    return 0


def cmd_ablate(args, resolved: dict) -> int:
    rdir = cfgmod.run_dir(resolved, "ablate")
    cfgmod.write_resolved(resolved, rdir)
    ab = resolved["ablate"]
    cells = []
    for bottleneck in ab["bottlenecks"]:
        for flag in ab["sar2opt_flags"]:
            for preset in ab["loss_presets"]:
                name = f"{bottleneck}-{'s1' if flag else 'nos1'}-{preset}"
                cells.append(AblationCell(name, bottleneck, flag, preset))
    train_set = load_dataset(resolved["data"]["root"],
                             resolved["data"]["split_seed"], "train",
                             resolved["data"]["train_fraction"])
    eval_set = load_dataset(resolved["data"]["root"],
                            resolved["data"]["split_seed"],
                            resolved["eval"]["split"],
                            resolved["data"]["train_fraction"])
    base_cfg = cfgmod.make_train_config(resolved, "cloud_removal")
    rows = ablate(cells, train_set, eval_set, base_cfg, rdir,
                  _metric_config(resolved))
    failures = sum(1 for r in rows if r["error"])
    print(f"ablation matrix: {rdir / 'ablation.csv'} "
          f"({len(rows)} cells, {failures} failed)")
    return 0


def cmd_infer(args, resolved: dict) -> int:
    rdir = cfgmod.run_dir(resolved, "infer")
    cfgmod.write_resolved(resolved, rdir)
    sar_u8 = read_image(args.sar)
    if sar_u8.ndim != 2:
        raise DataError(f"{args.sar} must be a single-channel SAR image")
    sar = image_to_tensor(sar_u8)
    cloudy_u8 = read_image(args.cloudy)
    if cloudy_u8.ndim != 3:
        raise DataError(f"{args.cloudy} must be an RGB cloudy image")
    cloudy = image_to_tensor(cloudy_u8)

    stage1, _, _ = load_checkpoint(args.stage1_ckpt)
    stage2, _, _ = load_checkpoint(args.stage2_ckpt)
    translated = stage1.forward(sar[None])[0]
    stage1.clear_caches()
    second = translated if stage2.spec.in_channels == 6 else sar
    cond = np.concatenate([cloudy, second])[None]
    restored = stage2.forward(cond.astype(np.float32))[0]
    stage2.clear_caches()

    write_image(rdir / "translated.png", tensor_to_image(translated))
    write_image(rdir / "restored.png", tensor_to_image(restored))
    export_grid([[cloudy, translated, restored]], rdir / "summary.png",
                labels=["cloudy", "translated", "restored"])
    print(f"outputs in {rdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", default=None,
                        help="JSON run config (defaults apply if omitted)")
    common.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config key, e.g. model.base_channels=8")

    parser = argparse.ArgumentParser(
        prog="cloudgan",
        description="Two-stage GAN pipeline for cloud removal in satellite "
                    "imagery (SAR-to-optical translation + cloud removal).")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common],
                   help="composite synthetic clouds onto the dataset"
                   ).set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", parents=[common],
                             help="train one stage")
    p_train.add_argument("--stage", choices=["sar2opt", "cloud"],
                         required=True)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the latest checkpoint in the "
                              "run directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", parents=[common],
                            help="metric report for a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--grid", action="store_true",
                        help="also write a comparison grid image")
    p_eval.set_defaults(func=cmd_eval)

    sub.add_parser("ablate", parents=[common],
                   help="architecture/loss ablation matrix"
                   ).set_defaults(func=cmd_ablate)

    p_infer = sub.add_parser("infer", parents=[common],
                             help="run one image through both stages")
    p_infer.add_argument("--sar", required=True)
    p_infer.add_argument("--cloudy", required=True)
    p_infer.add_argument("--stage1-ckpt", required=True)
    p_infer.add_argument("--stage2-ckpt", required=True)
    p_infer.set_defaults(func=cmd_infer)

    p_grid = sub.add_parser("grid", parents=[common],
                            help="comparison grid for a checkpoint")
    p_grid.add_argument("--ckpt", required=True)
    p_grid.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        resolved = cfgmod.load_config(args.config, args.set)
        single = all(resolved["train"][s]["single_threaded"]
                     for s in ("sar2opt", "cloud"))
        if single:
            with threadpool_limits(limits=1):
                return args.func(args, resolved)
        return args.func(args, resolved)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except CloudGanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
