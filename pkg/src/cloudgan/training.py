"""Two-stage training orchestration and the ablation matrix runner.

Stage 1 trains SAR-to-optical translation; stage 2 trains cloud removal
conditioned on the cloudy image concatenated with the (frozen) stage-1
translation, or with the raw SAR channel when the translation stage is
ablated.  Each batch takes exactly one discriminator update followed by one
generator update; all randomness derives from (seed, stream, step) tuples so
an interrupted run resumes on the exact trajectory.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import losses as L
from . import models
from .data import SamplePair, load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DataError, NumericalError
from .evaluation import (
    MetricConfig,
    cloud_removal_predictor,
    evaluate,
    sar2opt_predictor,
)
from .nn import Adam, Module
from .nn import functional as F

LOSS_PRESETS = {"L1": (100.0, 0.0), "SSIM": (0.0, 100.0),
                "SSIM+L1": (100.0, 100.0)}

_DROPOUT_STREAM = 7
_SHUFFLE_STREAM = 11


@dataclass
class TrainConfig:
    stage: str = "sar2opt"  # "sar2opt" | "cloud_removal"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    dropout: float = 0.5
    epochs: int = 1
    max_steps: int | None = None  # overrides epochs when set
    seed: int = 0
    lambda_l1: float = 100.0
    lambda_ssim: float = 100.0
    bottleneck: str = "drib"
    base_channels: int = 64
    unet_extra_depth: int = 5
    use_sar2opt_stage: bool = True
    cgan_enabled: bool = True
    single_threaded: bool = True
    checkpoint_every: int = 0  # 0: final checkpoint only

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigurationError(
                f"batch_size must be >= 1, got {self.batch_size}")
        if self.stage not in ("sar2opt", "cloud_removal"):
            raise ConfigurationError(f"unknown stage {self.stage!r}")

    def loss_weights(self) -> L.LossWeights:
        return L.LossWeights(self.lambda_l1, self.lambda_ssim)


@dataclass
class StepRecord:
    step: int
    loss_d: float
    loss_g: float
    l1: float
    ssim_loss: float
    cgan_g: float
    seconds: float


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord) -> None:
        for name in ("loss_d", "loss_g", "l1", "ssim_loss", "cgan_g"):
            if not math.isfinite(getattr(record, name)):
                raise NumericalError(
                    f"non-finite {name} at step {record.step}")
        self.records.append(record)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["step,loss_d,loss_g,l1,ssim_loss,cgan_g,seconds"]
        for r in self.records:
            lines.append(f"{r.step},{r.loss_d:.8f},{r.loss_g:.8f},"
                         f"{r.l1:.8f},{r.ssim_loss:.8f},{r.cgan_g:.8f},"
                         f"{r.seconds:.4f}")
        path.write_text("\n".join(lines) + "\n")
        return path


@dataclass
class TrainResult:
    generator: Module
    discriminator: Module
    log: TrainLog
    checkpoint_dir: Path | None
    config: TrainConfig


def _generator_spec(cfg: TrainConfig, in_channels: int) -> models.GeneratorSpec:
    return models.GeneratorSpec(
        in_channels=in_channels, base_channels=cfg.base_channels,
        bottleneck=cfg.bottleneck, unet_extra_depth=cfg.unet_extra_depth,
        dropout=cfg.dropout)


def _stage_channels(cfg: TrainConfig) -> int:
    if cfg.stage == "sar2opt":
        return 1
    return 6 if cfg.use_sar2opt_stage else 4


def translate_frozen(translator: Module, samples: Sequence[SamplePair],
                     batch_size: int = 8) -> list[np.ndarray]:
    """Run the frozen stage-1 generator in eval mode over all samples."""
    outs: list[np.ndarray] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = np.stack([s.sar for s in chunk])
        pred = translator.forward(batch)
        translator.clear_caches()
        outs.extend(pred[i] for i in range(pred.shape[0]))
    return outs


class _Run:
    """One stage's training loop over prepared (condition, target) pairs."""

    def __init__(self, cfg: TrainConfig, conditions: list[np.ndarray],
                 targets: list[np.ndarray], out_dir: Path | None,
                 resume_from: str | Path | None):
        if not conditions:
            raise DataError("training dataset is empty")
        self.cfg = cfg
        self.conditions = conditions
        self.targets = targets
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.log = TrainLog()
        self.start_step = 0
        self.last_checkpoint: Path | None = None

        cond_ch = conditions[0].shape[0]
        init_rng = np.random.default_rng(cfg.seed)
        self.gen = models.build_generator(_generator_spec(cfg, cond_ch),
                                          init_rng)
        self.disc = models.build_discriminator(
            models.DiscriminatorSpec(condition_channels=cond_ch,
                                     base_channels=cfg.base_channels),
            init_rng)
        self.adam_g = Adam(self.gen, lr=cfg.lr, beta1=cfg.beta1,
                           beta2=cfg.beta2)
        self.adam_d = Adam(self.disc, lr=cfg.lr, beta1=cfg.beta1,
                           beta2=cfg.beta2)
        if resume_from is not None:
            self._load_resume_state(Path(resume_from))

    # -- persistence ------------------------------------------------------

    def _aux_tensors(self) -> dict[str, np.ndarray]:
        aux = {f"disc.{k}": v for k, v in self.disc.named_state().items()}
        for tag, opt in (("adam_g", self.adam_g), ("adam_d", self.adam_d)):
            for k, v in opt.state_tensors().items():
                aux[f"{tag}.{k}"] = v
        return aux

    def _meta(self, step: int) -> dict:
        return {"step": step, "stage": self.cfg.stage, "seed": self.cfg.seed,
                "lambda_l1": self.cfg.lambda_l1,
                "lambda_ssim": self.cfg.lambda_ssim,
                "adam_g_steps": self.adam_g.step_count,
                "adam_d_steps": self.adam_d.step_count,
                "discriminator_arch": models.discriminator_spec_to_dict(
                    self.disc.spec),
                "train_config": asdict(self.cfg)}

    def save(self, step: int) -> Path:
        assert self.out_dir is not None
        path = save_checkpoint(self.gen, self._meta(step),
                               self.out_dir / f"ckpt-{step}",
                               aux_tensors=self._aux_tensors())
        self.last_checkpoint = path
        return path

    def _load_resume_state(self, ckpt: Path) -> None:
        gen, meta, aux = load_checkpoint(
            ckpt, expected_arch=models.generator_spec_to_dict(self.gen.spec))
        self.gen = gen
        self.adam_g = Adam(self.gen, lr=self.cfg.lr, beta1=self.cfg.beta1,
                           beta2=self.cfg.beta2)
        disc_state = {k[len("disc."):]: v for k, v in aux.items()
                      if k.startswith("disc.")}
        self.disc.load_state(disc_state)
        self.adam_g.load_state_tensors(
            {k[len("adam_g."):]: v for k, v in aux.items()
             if k.startswith("adam_g.")}, meta["adam_g_steps"])
        self.adam_d.load_state_tensors(
            {k[len("adam_d."):]: v for k, v in aux.items()
             if k.startswith("adam_d.")}, meta["adam_d_steps"])
        self.start_step = meta["step"]

    # -- the loop ---------------------------------------------------------

    def _batch_indices(self, step: int) -> np.ndarray:
        n = len(self.conditions)
        per_epoch = math.ceil(n / self.cfg.batch_size)
        epoch, slot = divmod(step, per_epoch)
        perm = np.random.default_rng(
            [self.cfg.seed, _SHUFFLE_STREAM, epoch]).permutation(n)
        return perm[slot * self.cfg.batch_size:
                    (slot + 1) * self.cfg.batch_size]

    def total_steps(self) -> int:
        if self.cfg.max_steps is not None:
            return self.cfg.max_steps
        per_epoch = math.ceil(len(self.conditions) / self.cfg.batch_size)
        return self.cfg.epochs * per_epoch

    def run(self) -> None:
        if self.cfg.single_threaded:
            with threadpool_limits(limits=1):
                self._run_loop()
        else:
            self._run_loop()

    def _run_loop(self) -> None:
        cfg = self.cfg
        weights = cfg.loss_weights()
        try:
            for step in range(self.start_step, self.total_steps()):
                t0 = time.perf_counter()
                idx = self._batch_indices(step)
                cond = np.stack([self.conditions[i] for i in idx])
                real = np.stack([self.targets[i] for i in idx])
                rng = np.random.default_rng([cfg.seed, _DROPOUT_STREAM, step])

                fake = self.gen.forward(cond, train=True, rng=rng)

                loss_d = 0.0
                if cfg.cgan_enabled:
                    self.disc.zero_grad()
                    logits_real = self.disc.forward_pair(cond, real,
                                                         train=True)
                    logits_fake = self.disc.forward_pair(cond, fake,
                                                         train=True)
                    loss_d = L.cgan_loss_d(logits_real, logits_fake)
                    d_real, d_fake = L.cgan_loss_d_backward(logits_real,
                                                            logits_fake)
                    self.disc.backward(d_fake)
                    self.disc.backward(d_real)
                    self.adam_d.step()

                self.gen.zero_grad()
                cgan_g = 0.0
                l1 = L.l1_loss(fake, real)
                ssim = L.ssim_loss(fake, real)
                dfake = (weights.lambda_l1 * L.l1_loss_backward(fake, real)
                         + weights.lambda_ssim
                         * L.ssim_loss_backward(fake, real))
                if cfg.cgan_enabled:
                    self.disc.zero_grad()  # scratch grads; D is not stepped here
                    logits = self.disc.forward_pair(cond, fake, train=True)
                    cgan_g = L.cgan_loss_g(logits)
                    dinput = self.disc.backward(L.cgan_loss_g_backward(logits))
                    dfake = dfake + dinput[:, cond.shape[1]:]
                self.gen.backward(dfake.astype(fake.dtype, copy=False))
                self.adam_g.step()

                loss_g = cgan_g + weights.lambda_l1 * l1 \
                    + weights.lambda_ssim * ssim
                self.log.append(StepRecord(
                    step=step, loss_d=loss_d, loss_g=loss_g, l1=l1,
                    ssim_loss=ssim, cgan_g=cgan_g,
                    seconds=time.perf_counter() - t0))

                done = step + 1
                if self.out_dir is not None and cfg.checkpoint_every and \
                        done % cfg.checkpoint_every == 0 and \
                        done < self.total_steps():
                    self.save(done)
        except NumericalError as exc:
            hint = (f"; last good checkpoint: {self.last_checkpoint}"
                    if self.last_checkpoint else "; no checkpoint written")
            raise NumericalError(str(exc) + hint) from exc
        if self.out_dir is not None:
            self.save(self.total_steps())


def train_sar2opt(cfg: TrainConfig, dataset: Sequence[SamplePair],
                  out_dir: str | Path | None = None,
                  resume_from: str | Path | None = None) -> TrainResult:
    """Stage 1: generator maps 1-channel SAR to RGB optical."""
    if cfg.stage != "sar2opt":
        raise ConfigurationError(f"config stage is {cfg.stage!r}")
    conditions = [s.sar for s in dataset]
    targets = [s.optical for s in dataset]
    run = _Run(cfg, conditions, targets, _maybe_path(out_dir), resume_from)
    run.run()
    return TrainResult(run.gen, run.disc, run.log, run.last_checkpoint, cfg)


def train_cloud_removal(cfg: TrainConfig, dataset: Sequence[SamplePair],
                        sar2opt_generator: Module | None = None,
                        out_dir: str | Path | None = None,
                        resume_from: str | Path | None = None) -> TrainResult:
    """Stage 2: generator input is cloudy+translation (or cloudy+SAR when
    the translation stage is ablated); the stage-1 network stays frozen."""
    if cfg.stage != "cloud_removal":
        raise ConfigurationError(f"config stage is {cfg.stage!r}")
    for s in dataset:
        if s.cloudy is None:
            raise DataError(f"sample {s.id!r} lacks a cloudy image")
    if cfg.use_sar2opt_stage:
        if sar2opt_generator is None:
            raise ConfigurationError(
                "cloud_removal with use_sar2opt_stage=true needs a stage-1 "
                "generator or checkpoint")
        translated = translate_frozen(sar2opt_generator, dataset)
        conditions = [F.concat_channels(s.cloudy[None], t[None])[0]
                      for s, t in zip(dataset, translated)]
    else:
        conditions = [F.concat_channels(s.cloudy[None], s.sar[None])[0]
                      for s in dataset]
    targets = [s.optical for s in dataset]
    run = _Run(cfg, conditions, targets, _maybe_path(out_dir), resume_from)
    run.run()
    return TrainResult(run.gen, run.disc, run.log, run.last_checkpoint, cfg)


def _maybe_path(p) -> Path | None:
    return Path(p) if p is not None else None


@dataclass(frozen=True)
class AblationCell:
    name: str
    bottleneck: str = "drib"
    use_sar2opt_stage: bool = True
    loss_preset: str = "SSIM+L1"

    def weights(self) -> tuple[float, float]:
        if self.loss_preset not in LOSS_PRESETS:
            raise ConfigurationError(
                f"unknown loss preset {self.loss_preset!r}; "
                f"choose from {sorted(LOSS_PRESETS)}")
        return LOSS_PRESETS[self.loss_preset]


def ablate(cells: Sequence[AblationCell], train_set: Sequence[SamplePair],
           eval_set: Sequence[SamplePair], base_cfg: TrainConfig,
           out_dir: str | Path,
           metric_cfg: MetricConfig = MetricConfig()) -> list[dict]:
    """Train/evaluate every cell with a shared seed; per-cell failures are
    recorded in the output without aborting the rest.

    Writes ablation.csv plus per-cell train logs and checkpoints under
    ``out_dir``; returns the row dicts.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage1_cache: dict[tuple, TrainResult] = {}
    rows = []
    for cell in cells:
        row = {"cell": cell.name, "bottleneck": cell.bottleneck,
               "sar2opt": "yes" if cell.use_sar2opt_stage else "no",
               "loss_preset": cell.loss_preset, "error": "",
               "psnr": "", "ssim": "", "psnr_cloudy": "", "psnr_noncloudy": ""}
        cell_dir = out_dir / "cells" / cell.name
        try:
            lam1, lam2 = cell.weights()
            translator = None
            if cell.use_sar2opt_stage:
                key = (cell.bottleneck, lam1, lam2)
                if key not in stage1_cache:
                    cfg1 = _cell_cfg(base_cfg, cell, lam1, lam2, "sar2opt")
                    stage1_cache[key] = train_sar2opt(
                        cfg1, train_set,
                        out_dir=out_dir / "stage1" / cell.bottleneck
                        / cell.loss_preset)
                translator = stage1_cache[key].generator
            cfg2 = _cell_cfg(base_cfg, cell, lam1, lam2, "cloud_removal")
            result = train_cloud_removal(cfg2, train_set, translator,
                                         out_dir=cell_dir)
            result.log.to_csv(cell_dir / "trainlog.csv")
            (cell_dir / "config.json").write_text(json.dumps(
                {"cell": asdict(cell), "train": asdict(cfg2)},
                indent=1, sort_keys=True) + "\n")
            predictor = cloud_removal_predictor(result.generator, translator)
            report = evaluate(predictor, eval_set, metric_cfg,
                              stage="cloud_removal",
                              config_echo={"cell": cell.name})
            report.to_csv(cell_dir / "report.csv")
            summary = report.summary()
            for key in ("psnr", "ssim", "psnr_cloudy", "psnr_noncloudy"):
                mean = summary[f"mean_{key}"]
                row[key] = "" if mean is None else f"{mean:.6f}"
        except Exception as exc:  # noqa: BLE001 - cell isolation by contract
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    header = ["cell", "bottleneck", "sar2opt", "loss_preset", "psnr", "ssim",
              "psnr_cloudy", "psnr_noncloudy", "error"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row[h]) for h in header))
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n")
    return rows


def _cell_cfg(base: TrainConfig, cell: AblationCell, lam1: float,
              lam2: float, stage: str) -> TrainConfig:
    d = asdict(base)
    d.update(stage=stage, bottleneck=cell.bottleneck, lambda_l1=lam1,
             lambda_ssim=lam2, use_sar2opt_stage=cell.use_sar2opt_stage)
    return TrainConfig(**d)


__all__ = [
    "LOSS_PRESETS",
    "AblationCell",
    "StepRecord",
    "TrainConfig",
    "TrainLog",
    "TrainResult",
    "ablate",
    "train_cloud_removal",
    "train_sar2opt",
    "translate_frozen",
    "sar2opt_predictor",
    "cloud_removal_predictor",
]
