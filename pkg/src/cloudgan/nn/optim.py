"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .layers import Module, Parameter


class Adam:
    """Standard Adam over a fixed set of named parameters.

    Moment buffers are keyed by parameter name so they can round-trip through
    checkpoints; the step counter is incremented before bias correction.
    """

    def __init__(self, params: dict[str, Parameter] | Module, lr: float = 2e-4,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        if isinstance(params, Module):
            params = dict(params.named_parameters())
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        """Apply one update from the accumulated gradients."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericalError(
                    f"non-finite gradient for '{name}' at optimizer step {t}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(
                p.data.dtype, copy=False)

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moment buffers under stable names, for checkpointing."""
        out = {}
        for k in self.params:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray],
                           step_count: int) -> None:
        for k in self.params:
            self.m[k][...] = tensors[f"m.{k}"]
            self.v[k][...] = tensors[f"v.{k}"]
        self.step_count = step_count
