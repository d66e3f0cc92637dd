"""Procedural stand-in data for desk-scale runs: smooth pseudo-optical
patches with a deterministic pseudo-SAR companion derived from them."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .clouds import make_composite, value_noise
from .data import denormalize, write_image


def make_demo_pair(seed: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns (sar (1,H,W), optical (3,H,W)) on the model scale [-1, 1]."""
    rng = np.random.default_rng(seed)
    bands = [value_noise(size, rng) for _ in range(3)]
    optical = 2.0 * np.stack(bands) - 1.0
    luminance = optical.mean(axis=0)
    speckle = 0.25 * (value_noise(size, rng, base_cells=8) - 0.5)
    sar = np.clip(luminance + speckle, -1.0, 1.0)[None]
    return sar.astype(np.float32), optical.astype(np.float32)


def make_demo_dataset(root: str | Path, count: int, size: int, seed: int, *,
                      coverages: list[float] | None = None) -> list[str]:
    """Write ``count`` sar/opt pairs (and cloudy/mask quadruples when
    ``coverages`` is given, cycled per sample) in the dataset layout."""
    root = Path(root)
    ids = []
    for i in range(count):
        stem = f"patch{i:04d}"
        sar, optical = make_demo_pair(seed + i, size)
        write_image(root / "sar" / f"{stem}.png", denormalize(sar[0]))
        write_image(root / "opt" / f"{stem}.png",
                    denormalize(optical).transpose(1, 2, 0))
        if coverages:
            cov = coverages[i % len(coverages)]
            comp = make_composite(optical, seed=seed + 10_000 + i,
                                  target_coverage=cov)
            write_image(root / "cloudy" / f"{stem}.png",
                        denormalize(comp.cloudy).transpose(1, 2, 0))
            write_image(root / "mask" / f"{stem}.png",
                        np.clip(np.rint(comp.mask.alpha * 255), 0,
                                255).astype(np.uint8))
        ids.append(stem)
    return ids
