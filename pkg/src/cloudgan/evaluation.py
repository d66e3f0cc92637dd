"""Quality metrics (PSNR, SSIM, cloudy/non-cloudy PSNR split) and reports.

All metrics operate on [0, 1]-scaled images with ``max_i`` defaulting to 1;
:func:`evaluate` remaps model-range outputs itself.  Identical images yield
an infinite-PSNR sentinel that is excluded from means (with a count); an
empty region yields ``None`` rather than a number.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .clouds import DEFAULT_REGION_TAU, binarize
from .data import SamplePair
from .errors import ConfigurationError, DataError
from .losses import SSIMParams, ssim_map, to_unit_interval
from .nn import functional as F


@dataclass(frozen=True)
class MetricConfig:
    max_i: float = 1.0
    region_tau: float = DEFAULT_REGION_TAU
    ssim: SSIMParams = field(default_factory=SSIMParams)

    def __post_init__(self):
        if self.max_i <= 0:
            raise ConfigurationError(f"max_i must be positive, got {self.max_i}")


def psnr(pred: np.ndarray, target: np.ndarray,
         cfg: MetricConfig = MetricConfig()) -> float:
    """20 log10(max_i / sqrt(MSE)) on [0, 1]-scaled images; inf when equal."""
    if pred.shape != target.shape:
        raise ConfigurationError(
            f"psnr shapes must match, got {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred.astype(np.float64) - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.max_i ** 2 / mse)


def masked_psnr(pred: np.ndarray, target: np.ndarray, region: np.ndarray,
                cfg: MetricConfig = MetricConfig()) -> float | None:
    """PSNR over the pixels where ``region`` is True (all channels there).

    Returns None for an empty region (metric undefined).
    """
    if region.shape != pred.shape[-2:]:
        raise ConfigurationError(
            f"region {region.shape} does not match image {pred.shape}")
    if not region.any():
        return None
    diff = pred.astype(np.float64) - target
    mse = float(np.mean(diff[..., region] ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.max_i ** 2 / mse)


def ssim_metric(pred: np.ndarray, target: np.ndarray,
                cfg: MetricConfig = MetricConfig()) -> float:
    """Mean SSIM over pixels/channels of [0, 1]-scaled images."""
    return float(np.mean(ssim_map(pred, target, cfg.ssim)))


@dataclass
class EvalRow:
    id: str
    psnr: float
    ssim: float
    psnr_cloudy: float | None = None
    psnr_noncloudy: float | None = None
    n_cloudy: int = 0
    n_noncloudy: int = 0


@dataclass
class EvalReport:
    rows: list[EvalRow]
    config_echo: dict
    aggregation: str = "per-image mean; infinite PSNR excluded with a count"

    def _mean(self, key: str) -> tuple[float | None, int]:
        values = [getattr(r, key) for r in self.rows]
        finite = [v for v in values if v is not None and math.isfinite(v)]
        excluded = len(values) - len(finite)
        if not finite:
            return None, excluded
        return float(np.mean(finite)), excluded

    def summary(self) -> dict:
        out = {}
        for key in ("psnr", "ssim", "psnr_cloudy", "psnr_noncloudy"):
            mean, excluded = self._mean(key)
            out[f"mean_{key}"] = mean
            out[f"excluded_{key}"] = excluded
        return out

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        summary = self.summary()
        with open(path, "w", newline="") as fh:
            for key, value in sorted(self.config_echo.items()):
                fh.write(f"# {key}={value}\n")
            fh.write(f"# aggregation={self.aggregation}\n")
            for key, value in sorted(summary.items()):
                fh.write(f"# {key}={_fmt(value)}\n")
            writer = csv.writer(fh)
            writer.writerow(["id", "psnr", "ssim", "psnr_cloudy",
                             "psnr_noncloudy"])
            for r in self.rows:
                writer.writerow([r.id, _fmt(r.psnr), _fmt(r.ssim),
                                 _fmt(r.psnr_cloudy), _fmt(r.psnr_noncloudy)])
        return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return str(v)


Predictor = Callable[[SamplePair], np.ndarray]


def sar2opt_predictor(generator) -> Predictor:
    """Translation inference: SAR in, synthetic optical out (eval mode)."""
    def predict(sample: SamplePair) -> np.ndarray:
        out = generator.forward(sample.sar[None])[0]
        generator.clear_caches()
        return out
    return predict


def cloud_removal_predictor(generator, translator=None) -> Predictor:
    """Cloud-removal inference conditioned on (cloudy, translation) or, when
    no translator is given, on (cloudy, sar)."""
    def predict(sample: SamplePair) -> np.ndarray:
        if sample.cloudy is None:
            raise DataError(f"sample {sample.id!r} has no cloudy image")
        if translator is not None:
            translated = translator.forward(sample.sar[None])[0]
            translator.clear_caches()
            cond = F.concat_channels(sample.cloudy[None], translated[None])
        else:
            cond = F.concat_channels(sample.cloudy[None], sample.sar[None])
        out = generator.forward(cond)[0]
        generator.clear_caches()
        return out
    return predict


def evaluate(predictor: Predictor, dataset: Sequence[SamplePair],
             cfg: MetricConfig = MetricConfig(), *, stage: str = "sar2opt",
             config_echo: dict | None = None) -> EvalReport:
    """Run inference over the dataset and fill per-image and mean metrics.

    Stage ``cloud_removal`` additionally splits PSNR over the binarized
    cloud region and its complement.
    """
    if stage not in ("sar2opt", "cloud_removal"):
        raise ConfigurationError(f"unknown stage {stage!r}")
    rows = []
    for sample in dataset:
        if stage == "cloud_removal" and (sample.cloudy is None
                                         or sample.mask is None):
            raise DataError(
                f"stage {stage!r} needs cloudy+mask data, sample "
                f"{sample.id!r} lacks it")
        pred = to_unit_interval(predictor(sample))
        target = to_unit_interval(sample.optical)
        row = EvalRow(id=sample.id, psnr=psnr(pred, target, cfg),
                      ssim=ssim_metric(pred, target, cfg))
        if stage == "cloud_removal":
            region = binarize(sample.mask, cfg.region_tau)
            channels = pred.shape[0]
            row.psnr_cloudy = masked_psnr(pred, target, region, cfg)
            row.psnr_noncloudy = masked_psnr(pred, target, ~region, cfg)
            row.n_cloudy = int(region.sum()) * channels
            row.n_noncloudy = int((~region).sum()) * channels
        rows.append(row)
    echo = {"max_i": cfg.max_i, "region_tau": cfg.region_tau, "stage": stage}
    echo.update(config_echo or {})
    return EvalReport(rows=rows, config_echo=echo)
