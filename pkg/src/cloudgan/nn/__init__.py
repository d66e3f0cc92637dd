"""Differentiable layer primitives: forward/backward ops, layers, Adam."""

from . import functional
from .gradcheck import grad_check
from .layers import (
    INIT_STD,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dropout,
    LeakyReLU,
    Module,
    ModuleList,
    Parameter,
    ReLU,
    Sequential,
    Tanh,
)
from .optim import Adam

__all__ = [
    "functional",
    "grad_check",
    "INIT_STD",
    "Adam",
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose2d",
    "Dropout",
    "LeakyReLU",
    "Module",
    "ModuleList",
    "Parameter",
    "ReLU",
    "Sequential",
    "Tanh",
]
