"""Pure array-level forward/backward pairs for the layer primitives.

All functions take and return plain ``numpy`` arrays in NCHW layout and keep
the caller's dtype.  Nothing here holds state: random masks, batch statistics
and so on are passed explicitly so every pair ``f`` / ``f_backward`` is a pure
function.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError

PadPair = tuple[int, int]


def as_pad_pair(padding: int | PadPair) -> PadPair:
    """Normalize padding to a (leading, trailing) pair applied to both axes."""
    if isinstance(padding, (tuple, list)):
        lead, trail = padding
        return int(lead), int(trail)
    return int(padding), int(padding)


def conv_output_size(size: int, kernel: int, stride: int, dilation: int,
                     padding: int | PadPair) -> int:
    lead, trail = as_pad_pair(padding)
    return (size + lead + trail - dilation * (kernel - 1) - 1) // stride + 1


def deconv_output_size(size: int, kernel: int, stride: int, dilation: int,
                       padding: int | PadPair) -> int:
    lead, trail = as_pad_pair(padding)
    return (size - 1) * stride + dilation * (kernel - 1) + 1 - lead - trail


def _windows(xp: np.ndarray, kernel: int, stride: int, dilation: int) -> np.ndarray:
    """Read-only sliding-window view of a padded NCHW array.

    Shape (B, C, k, k, Ho, Wo); axis order chosen so kernel taps are adjacent
    for the tensordot contractions below.
    """
    b, c, hp, wp = xp.shape
    ho = (hp - dilation * (kernel - 1) - 1) // stride + 1
    wo = (wp - dilation * (kernel - 1) - 1) // stride + 1
    sb, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kernel, kernel, ho, wo),
        strides=(sb, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def _pad_input(x: np.ndarray, padding: int | PadPair) -> np.ndarray:
    lead, trail = as_pad_pair(padding)
    if lead == 0 and trail == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (lead, trail), (lead, trail)))


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, dilation: int = 1,
           padding: int | PadPair = 0) -> np.ndarray:
    """Cross-correlation of ``x`` (B,Cin,H,W) with ``weight`` (Cout,Cin,k,k)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError(
            f"conv2d expects rank-4 input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ConfigurationError(
            f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    k = weight.shape[2]
    ho = conv_output_size(x.shape[2], k, stride, dilation, padding)
    wo = conv_output_size(x.shape[3], k, stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"conv2d output would be {ho}x{wo} for input {x.shape}, "
            f"kernel {weight.shape}, stride {stride}, dilation {dilation}, "
            f"padding {padding}")
    xp = _pad_input(x, padding)
    win = _windows(xp, k, stride, dilation)
    # (B,C,k,k,Ho,Wo) x (O,C,k,k) -> (B,Ho,Wo,O)
    y = np.tensordot(win, weight, axes=([1, 2, 3], [1, 2, 3]))
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def conv2d_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray,
                    stride: int = 1, dilation: int = 1,
                    padding: int | PadPair = 0,
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dweight, dbias) of conv2d for upstream ``dy``."""
    k = weight.shape[2]
    lead, trail = as_pad_pair(padding)
    xp = _pad_input(x, padding)
    win = _windows(xp, k, stride, dilation)
    ho, wo = dy.shape[2], dy.shape[3]

    dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 4, 5]))  # (O,C,k,k)
    db = dy.sum(axis=(0, 2, 3))

    # Scatter dy back through each kernel tap.
    dwin = np.tensordot(weight, dy, axes=([0], [1]))  # (C,k,k,B,Ho,Wo)
    dxp = np.zeros_like(xp)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki * dilation: ki * dilation + stride * ho: stride,
                kj * dilation: kj * dilation + stride * wo: stride] += \
                dwin[:, ki, kj].transpose(1, 0, 2, 3)
    h, w = x.shape[2], x.shape[3]
    dx = dxp[:, :, lead: lead + h, lead: lead + w]
    return np.ascontiguousarray(dx), dw.astype(weight.dtype, copy=False), db


def conv2d_transpose(x: np.ndarray, weight: np.ndarray,
                     bias: np.ndarray | None = None, stride: int = 1,
                     dilation: int = 1,
                     padding: int | PadPair = 0) -> np.ndarray:
    """Transposed convolution; ``weight`` is (Cin,Cout,k,k).

    Algebraic adjoint of :func:`conv2d` with the same stride/dilation/padding
    and shared (transposed) weights.  ``padding`` crops the full output, with
    an optionally asymmetric (leading, trailing) split.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError(
            f"conv2d_transpose expects rank-4 input and weight, got {x.shape} "
            f"and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ConfigurationError(
            f"conv2d_transpose channel mismatch: input {x.shape} vs weight "
            f"{weight.shape}")
    b, _, h, w = x.shape
    k = weight.shape[2]
    lead, trail = as_pad_pair(padding)
    ho = deconv_output_size(h, k, stride, dilation, padding)
    wo = deconv_output_size(w, k, stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"conv2d_transpose output would be {ho}x{wo} for input {x.shape}, "
            f"kernel {weight.shape}, stride {stride}, padding {padding}")
    hf = (h - 1) * stride + dilation * (k - 1) + 1
    wf = (w - 1) * stride + dilation * (k - 1) + 1
    cols = np.tensordot(x, weight, axes=([1], [0]))  # (B,H,W,O,k,k)
    out_ch = weight.shape[1]
    full = np.zeros((b, out_ch, hf, wf), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            full[:, :, ki * dilation: ki * dilation + stride * h: stride,
                 kj * dilation: kj * dilation + stride * w: stride] += \
                cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(full[:, :, lead: hf - trail, lead: wf - trail])
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def conv2d_transpose_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray,
                              stride: int = 1, dilation: int = 1,
                              padding: int | PadPair = 0,
                              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dweight, dbias) of conv2d_transpose."""
    b, _, h, w = x.shape
    k = weight.shape[2]
    lead, trail = as_pad_pair(padding)
    hf = (h - 1) * stride + dilation * (k - 1) + 1
    wf = (w - 1) * stride + dilation * (k - 1) + 1
    dfull = np.zeros((b, weight.shape[1], hf, wf), dtype=dy.dtype)
    dfull[:, :, lead: hf - trail, lead: wf - trail] = dy

    dcols = np.empty((b, weight.shape[1], k, k, h, w), dtype=dy.dtype)
    for ki in range(k):
        for kj in range(k):
            dcols[:, :, ki, kj] = \
                dfull[:, :, ki * dilation: ki * dilation + stride * h: stride,
                      kj * dilation: kj * dilation + stride * w: stride]
    dx = np.tensordot(dcols, weight, axes=([1, 2, 3], [1, 2, 3]))  # (B,H,W,I)
    dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
    dw = np.tensordot(x, dcols, axes=([0, 2, 3], [0, 4, 5]))  # (I,O,k,k)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw.astype(weight.dtype, copy=False), db


def batch_norm_train(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                     eps: float) -> tuple[np.ndarray, dict]:
    """Normalize per channel over (batch, H, W); returns output and cache."""
    n = x.shape[0] * x.shape[2] * x.shape[3]
    if n < 2:
        raise ConfigurationError(
            f"batch norm needs batch*H*W >= 2 in train mode, got {n} "
            f"for input {x.shape}")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "n": n,
             "mean": mean, "var": var}
    return y, cache


def batch_norm_train_backward(dy: np.ndarray, cache: dict,
                              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    n = cache["n"]
    mean_dy = dy.mean(axis=(0, 2, 3))
    mean_dy_xhat = (dy * xhat).mean(axis=(0, 2, 3))
    dx = (gamma * inv_std)[None, :, None, None] * (
        dy - mean_dy[None, :, None, None]
        - xhat * mean_dy_xhat[None, :, None, None])
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


def batch_norm_eval(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                    running_mean: np.ndarray, running_var: np.ndarray,
                    eps: float) -> np.ndarray:
    scale = gamma / np.sqrt(running_var + eps)
    shift = beta - running_mean * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, x * np.asarray(slope, dtype=x.dtype))


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray,
                        slope: float = 0.2) -> np.ndarray:
    return dy * np.where(x >= 0, np.asarray(1, dtype=dy.dtype),
                         np.asarray(slope, dtype=dy.dtype))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Backward from the cached *output* y = tanh(x)."""
    return dy * (1 - y * y)


def dropout(x: np.ndarray, rate: float, train: bool,
            rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout; returns (output, mask). Mask is None when inactive."""
    if not 0 <= rate < 1:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x, None
    if rng is None:
        raise ConfigurationError("dropout in train mode requires an rng")
    keep = (rng.random(x.shape) >= rate)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return dy
    return dy * mask


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Channel concatenation with ``a`` in the leading block."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ConfigurationError(
            f"concat_channels needs matching batch and spatial dims, got "
            f"{a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(x: np.ndarray, first: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of concat_channels; backward pass routing helper."""
    return x[:, :first], x[:, first:]
