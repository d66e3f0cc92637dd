"""Adversarial, pixel, and structural-similarity objectives.

The generator objective is ``cgan + lambda_l1 * L1 + lambda_ssim * SSIM-loss``
with both weights defaulting to 100.  Adversarial terms operate on raw
discriminator logits in the numerically stable softplus form; the generator
uses the non-saturating variant.  SSIM runs on images remapped from the model
range [-1, 1] to [0, 1], with an 11x11 Gaussian window (sigma 1.5),
reflect-padded so the map matches the input size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .nn import functional as F


def to_unit_interval(x: np.ndarray) -> np.ndarray:
    """Remap model-range [-1, 1] values to [0, 1]."""
    return (x + 1.0) * 0.5


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def cgan_loss_d(logits_real: np.ndarray, logits_fake: np.ndarray) -> float:
    """Discriminator objective: -mean[log sig(real) + log(1 - sig(fake))]."""
    if logits_real.shape != logits_fake.shape:
        raise ConfigurationError(
            f"logit maps must match, got {logits_real.shape} vs "
            f"{logits_fake.shape}")
    return float(np.mean(_softplus(-logits_real))
                 + np.mean(_softplus(logits_fake)))


def cgan_loss_d_backward(logits_real: np.ndarray, logits_fake: np.ndarray,
                         ) -> tuple[np.ndarray, np.ndarray]:
    d_real = (-_sigmoid(-logits_real) / logits_real.size).astype(
        logits_real.dtype)
    d_fake = (_sigmoid(logits_fake) / logits_fake.size).astype(
        logits_fake.dtype)
    return d_real, d_fake


def cgan_loss_g(logits_fake: np.ndarray) -> float:
    """Non-saturating generator term: -mean log sig(fake)."""
    return float(np.mean(_softplus(-logits_fake)))


def cgan_loss_g_backward(logits_fake: np.ndarray) -> np.ndarray:
    return (-_sigmoid(-logits_fake) / logits_fake.size).astype(
        logits_fake.dtype)


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ConfigurationError(
            f"l1 shapes must match, got {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def l1_loss_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return (np.sign(pred - target) / pred.size).astype(pred.dtype)


def gaussian_window(size: int = 11, sigma: float = 1.5,
                    dtype=np.float64) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    return win.astype(dtype)


@dataclass(frozen=True)
class SSIMParams:
    """Window and stabilizer constants on the [0, dynamic_range] scale."""
    window_size: int = 11
    sigma: float = 1.5
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def window(self, dtype=np.float64) -> np.ndarray:
        return gaussian_window(self.window_size, self.sigma, dtype)


def _reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")


def _reflect_pad_adjoint(g: np.ndarray, pad: int) -> np.ndarray:
    """Scatter-add padded-array gradients back onto the source pixels."""
    out = g
    for axis in (2, 3):
        n = out.shape[axis] - 2 * pad
        idx = np.pad(np.arange(n), pad, mode="reflect")
        moved = np.moveaxis(out, axis, 0)
        acc = np.zeros((n, *moved.shape[1:]), dtype=out.dtype)
        np.add.at(acc, idx, moved)
        out = np.moveaxis(acc, 0, axis)
    return out


def _depthwise_valid_corr(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    flat = x.reshape(b * c, 1, h, w)
    y = F.conv2d(flat, win[None, None].astype(x.dtype))
    return y.reshape(b, c, y.shape[2], y.shape[3])


def _gauss_filter(x: np.ndarray, win: np.ndarray, pad: int) -> np.ndarray:
    return _depthwise_valid_corr(_reflect_pad(x, pad), win)


def _gauss_filter_adjoint(g: np.ndarray, win: np.ndarray,
                          pad: int) -> np.ndarray:
    k = win.shape[0]
    gz = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    t = _depthwise_valid_corr(gz, win[::-1, ::-1])
    return _reflect_pad_adjoint(t, pad)


def _ssim_terms(x: np.ndarray, y: np.ndarray, p: SSIMParams) -> dict:
    """Windowed means/variances/covariance and the two SSIM factors.

    Inputs are expected on the [0, dynamic_range] scale, (B, C, H, W) or
    (C, H, W); minimum spatial size is window_size//2 + 1 (reflect padding
    bound).
    """
    if x.shape != y.shape:
        raise ConfigurationError(
            f"ssim shapes must match, got {x.shape} vs {y.shape}")
    if x.ndim == 3:
        x = x[None]
        y = y[None]
    elif x.ndim != 4:
        raise ConfigurationError(f"ssim expects rank 3 or 4, got {x.shape}")
    pad = p.window_size // 2
    win = p.window(x.dtype)
    mu_x = _gauss_filter(x, win, pad)
    mu_y = _gauss_filter(y, win, pad)
    g_xx = _gauss_filter(x * x, win, pad)
    g_yy = _gauss_filter(y * y, win, pad)
    g_xy = _gauss_filter(x * y, win, pad)
    var_x = g_xx - mu_x * mu_x
    var_y = g_yy - mu_y * mu_y
    cov = g_xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + p.c1
    a2 = 2.0 * cov + p.c2
    b1 = mu_x * mu_x + mu_y * mu_y + p.c1
    b2 = var_x + var_y + p.c2
    s = (a1 * a2) / (b1 * b2)
    return {"mu_x": mu_x, "mu_y": mu_y, "a1": a1, "a2": a2, "b1": b1,
            "b2": b2, "s": s, "win": win, "pad": pad}


def ssim_map(x: np.ndarray, y: np.ndarray,
             p: SSIMParams = SSIMParams()) -> np.ndarray:
    """Per-pixel, per-channel SSIM on [0, dynamic_range]-scaled images."""
    s = _ssim_terms(x, y, p)["s"]
    return s[0] if x.ndim == 3 else s


def ssim_loss(pred: np.ndarray, target: np.ndarray,
              p: SSIMParams = SSIMParams()) -> float:
    """mean(1 - SSIM) over all pixels/channels; inputs in model range [-1, 1]."""
    s = ssim_map(to_unit_interval(pred), to_unit_interval(target), p)
    return float(np.mean(1.0 - s))


def ssim_loss_backward(pred: np.ndarray, target: np.ndarray,
                       p: SSIMParams = SSIMParams()) -> np.ndarray:
    """d ssim_loss / d pred, chaining through the [0,1] remap."""
    squeeze = pred.ndim == 3
    x = to_unit_interval(pred[None] if squeeze else pred)
    y = to_unit_interval(target[None] if squeeze else target)
    t = _ssim_terms(x, y, p)
    u = np.full_like(t["s"], -1.0 / t["s"].size)  # dL/dS for L = mean(1 - S)

    denom = t["b1"] * t["b2"]
    d_a1 = u * t["a2"] / denom
    d_a2 = u * t["a1"] / denom
    d_b1 = -u * t["s"] / t["b1"]
    d_b2 = -u * t["s"] / t["b2"]

    d_mu_x = 2.0 * t["mu_y"] * (d_a1 - d_a2) + 2.0 * t["mu_x"] * (d_b1 - d_b2)
    d_gxx = d_b2          # B2 carries G(x^2) - mu_x^2
    d_gxy = 2.0 * d_a2    # A2 carries 2 (G(xy) - mu_x mu_y)

    win, pad = t["win"], t["pad"]
    dx = (_gauss_filter_adjoint(d_mu_x, win, pad)
          + 2.0 * x * _gauss_filter_adjoint(d_gxx, win, pad)
          + y * _gauss_filter_adjoint(d_gxy, win, pad))
    dx = (0.5 * dx).astype(pred.dtype)  # remap chain: dx/dpred = 1/2
    return dx[0] if squeeze else dx


@dataclass(frozen=True)
class LossWeights:
    """Pixel and structural term weights (lambda_1, lambda_2)."""
    lambda_l1: float = 100.0
    lambda_ssim: float = 100.0

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_ssim < 0:
            raise ConfigurationError("loss weights must be non-negative")


@dataclass(frozen=True)
class GeneratorLoss:
    total: float
    cgan: float
    l1: float
    ssim: float


def generator_objective(logits_fake: np.ndarray | None, pred: np.ndarray,
                        target: np.ndarray, weights: LossWeights,
                        p: SSIMParams = SSIMParams()) -> GeneratorLoss:
    """Composite generator loss with its component breakdown.

    ``logits_fake`` may be None when the adversarial term is disabled.
    """
    cgan = cgan_loss_g(logits_fake) if logits_fake is not None else 0.0
    l1 = l1_loss(pred, target)
    ssim = ssim_loss(pred, target, p)
    total = cgan + weights.lambda_l1 * l1 + weights.lambda_ssim * ssim
    return GeneratorLoss(total=total, cgan=cgan, l1=l1, ssim=ssim)
