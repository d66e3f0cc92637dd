"""Finite-difference verification of analytic gradients.

The module under test must be in a deterministic mode (dropout off; batch
norm either eval mode or train mode with a full-batch loss), since the same
forward is re-evaluated many times with perturbed inputs.

The analytic pass runs in the requested ``dtype`` (float32 checks measure the
production-precision backward), while the finite-difference reference always
runs with float64 state and accumulation.
"""

from __future__ import annotations

import numpy as np

from .layers import Module


def _sample_indices(size: int, max_samples: int,
                    rng: np.random.Generator) -> np.ndarray:
    if size <= max_samples:
        return np.arange(size)
    return rng.choice(size, size=max_samples, replace=False)


def _rel_err(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    scale = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / scale


def grad_check(module: Module, x: np.ndarray, epsilon: float = 1e-3, *,
               train: bool = False, max_samples: int = 64,
               check_params: bool = True, seed: int = 0,
               dtype=np.float64) -> float:
    """Max relative error between analytic and central-difference gradients.

    The scalar loss is a fixed random projection of the output; input and
    (optionally) parameter coordinates are sampled.
    """
    rng = np.random.default_rng(seed)

    # Analytic pass at the requested precision.
    x_t = x.astype(dtype)
    for _, p in module.named_parameters():
        p.data = p.data.astype(dtype)
        p.grad = np.zeros_like(p.data)
    y = module.forward(x_t, train=train)
    proj = rng.standard_normal(y.shape)
    module.clear_caches()
    module.zero_grad()
    y = module.forward(x_t, train=train)
    dx = module.backward(proj.astype(dtype))
    analytic_input = dx.astype(np.float64)
    analytic_params = {name: p.grad.astype(np.float64)
                       for name, p in module.named_parameters()}

    # Reference state in float64 for the finite differences.
    x64 = x.astype(np.float64)
    for _, p in module.named_parameters():
        p.data = p.data.astype(np.float64)

    def loss() -> float:
        out = module.forward(x64, train=train)
        module.clear_caches()
        return float(np.sum(out * proj, dtype=np.float64))

    def central_diff(flat: np.ndarray, idx: int) -> float:
        orig = flat[idx]
        flat[idx] = orig + epsilon
        lp = loss()
        flat[idx] = orig - epsilon
        lm = loss()
        flat[idx] = orig
        return (lp - lm) / (2 * epsilon)

    pairs: list[tuple[float, float]] = []
    flat_x = x64.reshape(-1)
    flat_dx = analytic_input.reshape(-1)
    for idx in _sample_indices(x64.size, max_samples, rng):
        pairs.append((flat_dx[idx], central_diff(flat_x, idx)))

    if check_params:
        per_param = max(4, max_samples // 8)
        for name, p in module.named_parameters():
            flat = p.data.reshape(-1)
            gflat = analytic_params[name].reshape(-1)
            for idx in _sample_indices(flat.size, per_param, rng):
                pairs.append((gflat[idx], central_diff(flat, idx)))

    # the floor absorbs dtype rounding noise on (near-)zero-gradient
    # coordinates, measured against the overall gradient scale
    gmax = max((max(abs(a), abs(n)) for a, n in pairs), default=0.0)
    floor = max(1e-6, 1e-4 * gmax)
    return max((_rel_err(a, n, floor) for a, n in pairs), default=0.0)
