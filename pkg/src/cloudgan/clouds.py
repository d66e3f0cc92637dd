"""Synthetic thick-cloud masks and alpha-blend compositing.

Masks come from multi-octave value noise, smooth-thresholded so a target
fraction of pixels is covered and cloud cores saturate at alpha 1 (thick
cover carries no surface information).  Real mask assets can be loaded from
single-channel image files instead.  Everything is seed-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, CoverageError, DataError

DEFAULT_REGION_TAU = 0.1  # alpha at or above this counts as cloudy
NOISE_OCTAVES = 4
NOISE_PERSISTENCE = 0.5
NOISE_BASE_CELLS = 4
EDGE_WIDTH = 0.08  # noise-value span of the smoothstep cloud edge

TEXTURE_BASE = 0.85      # near-white cloud level on the [0, 1] scale
TEXTURE_AMPLITUDE = 0.1  # low-frequency modulation around the base


@dataclass(frozen=True)
class CloudMask:
    """Alpha matte in [0, 1] with the seed that produced it."""
    alpha: np.ndarray
    seed: int

    def coverage(self, tau: float = DEFAULT_REGION_TAU) -> float:
        """Fraction of pixels at or above ``tau``; always recomputed."""
        return float(np.mean(self.alpha >= tau))


@dataclass(frozen=True)
class CloudComposite:
    """A clean patch, its mask/texture, and the blended cloudy patch."""
    clean: np.ndarray
    mask: CloudMask
    cloud_texture: np.ndarray
    cloudy: np.ndarray
    texture_seed: int = field(default=0)


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _smoothstep_inverse(tau: float) -> float:
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if 3 * mid * mid - 2 * mid ** 3 < tau:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _interp_grid(grid: np.ndarray, size: int) -> np.ndarray:
    """Smoothstep-bilinear upsampling of a value grid to size x size."""
    cells = grid.shape[0] - 1
    pos = np.arange(size) * cells / size
    i0 = pos.astype(int)
    t = _smoothstep(pos - i0)
    g00 = grid[np.ix_(i0, i0)]
    g10 = grid[np.ix_(i0 + 1, i0)]
    g01 = grid[np.ix_(i0, i0 + 1)]
    g11 = grid[np.ix_(i0 + 1, i0 + 1)]
    ti = t[:, None]
    tj = t[None, :]
    return ((1 - ti) * (1 - tj) * g00 + ti * (1 - tj) * g10
            + (1 - ti) * tj * g01 + ti * tj * g11)


def value_noise(size: int, rng: np.random.Generator,
                octaves: int = NOISE_OCTAVES,
                persistence: float = NOISE_PERSISTENCE,
                base_cells: int = NOISE_BASE_CELLS) -> np.ndarray:
    """Multi-octave value noise, min-max normalized to [0, 1]."""
    total = np.zeros((size, size))
    amp, norm = 1.0, 0.0
    for octave in range(octaves):
        cells = base_cells * 2 ** octave
        grid = rng.random((cells + 1, cells + 1))
        total += amp * _interp_grid(grid, size)
        norm += amp
        amp *= persistence
    total /= norm
    span = total.max() - total.min()
    if span <= 0:
        return np.zeros_like(total)
    return (total - total.min()) / span


def _alpha_from_noise(noise: np.ndarray, threshold: float,
                      edge_width: float) -> np.ndarray:
    return _smoothstep((noise - threshold) / edge_width)


def generate_mask(seed: int, size: int, target_coverage: float,
                  thickness: str = "thick", *,
                  tau: float = DEFAULT_REGION_TAU,
                  edge_width: float = EDGE_WIDTH) -> CloudMask:
    """Procedural thick-cloud mask with coverage within +/-0.05 of target.

    Coverage is measured as the fraction of pixels with alpha >= ``tau``.
    Deterministic per seed.
    """
    if thickness != "thick":
        raise ConfigurationError(f"unsupported cloud thickness {thickness!r}")
    if not 0.0 <= target_coverage <= 0.95:
        raise ConfigurationError(
            f"target coverage must be in [0, 0.95], got {target_coverage}")
    if target_coverage == 0.0:
        return CloudMask(np.zeros((size, size)), seed)

    noise = value_noise(size, np.random.default_rng(seed))
    # place the smoothstep edge so that alpha == tau right at the requested
    # coverage quantile of the noise field
    threshold = (float(np.quantile(noise, 1.0 - target_coverage))
                 - edge_width * _smoothstep_inverse(tau))
    alpha = _alpha_from_noise(noise, threshold, edge_width)
    achieved = float(np.mean(alpha >= tau))

    if abs(achieved - target_coverage) > 0.02:  # bounded corrective search
        lo, hi = float(noise.min()) - edge_width, float(noise.max())
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            cov = float(np.mean(_alpha_from_noise(noise, mid, edge_width) >= tau))
            if cov > target_coverage:
                lo = mid
            else:
                hi = mid
        threshold = 0.5 * (lo + hi)
        alpha = _alpha_from_noise(noise, threshold, edge_width)
        achieved = float(np.mean(alpha >= tau))
        if abs(achieved - target_coverage) > 0.05:
            raise CoverageError(target_coverage, achieved)
    return CloudMask(alpha, seed)


def load_mask_asset(path: str | Path, patch_size: int, seed: int) -> CloudMask:
    """Mask from a single-channel image file, seeded random crop + flips."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataError(f"cannot read mask asset {path}: {exc}") from exc
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.float64) / 255.0
    elif img.mode in ("I", "I;16"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    else:
        raise DataError(
            f"mask asset {path} must be single-channel, got mode {img.mode!r}")
    h, w = arr.shape
    if h < patch_size or w < patch_size:
        raise DataError(
            f"mask asset {path} is {h}x{w}, smaller than patch "
            f"{patch_size}x{patch_size}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - patch_size + 1))
    left = int(rng.integers(0, w - patch_size + 1))
    crop = arr[top:top + patch_size, left:left + patch_size]
    if rng.random() < 0.5:
        crop = crop[:, ::-1]
    if rng.random() < 0.5:
        crop = crop[::-1, :]
    return CloudMask(np.ascontiguousarray(np.clip(crop, 0.0, 1.0)), seed)


def alpha_blend(clean: np.ndarray, texture: np.ndarray,
                mask: CloudMask) -> np.ndarray:
    """Per-pixel convex combination alpha*texture + (1-alpha)*clean."""
    if clean.shape != texture.shape:
        raise ConfigurationError(
            f"clean and texture shapes differ: {clean.shape} vs {texture.shape}")
    if clean.shape[-2:] != mask.alpha.shape:
        raise ConfigurationError(
            f"mask {mask.alpha.shape} does not match image {clean.shape}")
    alpha = mask.alpha[None, :, :] if clean.ndim == 3 else mask.alpha
    return (alpha * texture + (1.0 - alpha) * clean).astype(clean.dtype)


def binarize(mask: CloudMask, tau: float = DEFAULT_REGION_TAU) -> np.ndarray:
    """Boolean cloudy-region map {alpha >= tau}; complement is non-cloudy."""
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must be in (0, 1), got {tau}")
    return mask.alpha >= tau


def make_cloud_texture(seed: int, size: int, *, base: float = TEXTURE_BASE,
                       amplitude: float = TEXTURE_AMPLITUDE) -> np.ndarray:
    """Near-white noisy texture on the model scale [-1, 1], shape (3, H, W)."""
    noise = value_noise(size, np.random.default_rng(seed))
    level = np.clip(base + amplitude * (2.0 * noise - 1.0), 0.0, 1.0)
    return np.repeat((2.0 * level - 1.0)[None, :, :], 3, axis=0)


def make_composite(clean: np.ndarray, seed: int, target_coverage: float, *,
                   texture_seed: int | None = None,
                   tau: float = DEFAULT_REGION_TAU,
                   mask: CloudMask | None = None) -> CloudComposite:
    """Generate (or accept) a mask, synthesize a texture, and blend."""
    size = clean.shape[-1]
    if clean.shape[-2] != size:
        raise ConfigurationError(f"expected square patches, got {clean.shape}")
    if mask is None:
        mask = generate_mask(seed, size, target_coverage, tau=tau)
    if texture_seed is None:
        texture_seed = seed + 7_919_001  # decouple texture from mask stream
    texture = make_cloud_texture(texture_seed, size).astype(clean.dtype)
    cloudy = alpha_blend(clean, texture, mask)
    return CloudComposite(clean=clean, mask=mask, cloud_texture=texture,
                          cloudy=cloudy, texture_seed=texture_seed)
