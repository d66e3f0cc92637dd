"""Network builders: the dilated-residual-inception generator, the patch
discriminator, and a plain U-net-bottleneck baseline for ablations.

Layer schedule (filters, kernel, stride) at base width 64:

    encoder       conv 64/128/256 stride 2, then conv 512 stride 1
    bottleneck    8 dilated residual inception blocks at 512 channels
    decoder       deconv 256 stride 1, deconv 128/64 stride 2, deconv 3 stride 2
    discriminator conv 64/128/256/512 stride 2, conv 1 k3 stride 1

Stride-1 k4 layers keep spatial size via an asymmetric (1, 2) pad/trim on the
trailing edge.  Skip concatenations feed encoder stages 1..3 into the decoder
as documented on :class:`Generator`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .nn import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dropout,
    LeakyReLU,
    Module,
    ModuleList,
    ReLU,
    Sequential,
    Tanh,
)
from .nn import functional as F


@dataclass(frozen=True)
class DRIBSpec:
    """One bottleneck block: three 1x1->3x3-dilated branches fused by 1x1.

    ``fuse_channels`` defaults to ``in_channels`` (required for the residual
    add)."""
    in_channels: int = 512
    branch_channels: int = 256
    dilation_rates: tuple[int, ...] = (1, 2, 3)
    fuse_channels: int | None = None

    def __post_init__(self):
        if self.fuse_channels is None:
            object.__setattr__(self, "fuse_channels", self.in_channels)


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 1
    out_channels: int = 3
    base_channels: int = 64
    bottleneck: str = "drib"  # "drib" | "unet"
    num_blocks: int = 8
    dilation_rates: tuple[int, ...] = (1, 2, 3)
    unet_extra_depth: int = 5  # stride-2 pairs below H/8; 5 suits 256-px inputs
    dropout: float = 0.5
    leaky_slope: float = 0.2

    def drib_spec(self) -> DRIBSpec:
        b = self.base_channels
        return DRIBSpec(8 * b, 4 * b, tuple(self.dilation_rates), 8 * b)


@dataclass(frozen=True)
class DiscriminatorSpec:
    condition_channels: int
    target_channels: int = 3
    base_channels: int = 64
    leaky_slope: float = 0.2

    @property
    def in_channels(self) -> int:
        return self.condition_channels + self.target_channels


def generator_spec_to_dict(spec: GeneratorSpec) -> dict:
    d = asdict(spec)
    d["kind"] = "generator"
    return d


def discriminator_spec_to_dict(spec: DiscriminatorSpec) -> dict:
    d = asdict(spec)
    d["kind"] = "discriminator"
    return d


def spec_from_dict(d: dict) -> GeneratorSpec | DiscriminatorSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "generator":
        d["dilation_rates"] = tuple(d.get("dilation_rates", (1, 2, 3)))
        return GeneratorSpec(**d)
    if kind == "discriminator":
        return DiscriminatorSpec(**d)
    raise ConfigurationError(f"unknown network kind {kind!r}")


def _cbl(in_ch, out_ch, kernel, stride, padding, slope, rng, norm=True):
    steps = [Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding,
                    rng=rng)]
    if norm:
        steps.append(BatchNorm2d(out_ch, rng=rng))
    steps.append(LeakyReLU(slope))
    return Sequential(*steps)


def _dbr(in_ch, out_ch, kernel, stride, padding, rng, dropout=0.0,
         norm=True, final=None):
    steps = [ConvTranspose2d(in_ch, out_ch, kernel, stride=stride,
                             padding=padding, rng=rng)]
    if norm:
        steps.append(BatchNorm2d(out_ch, rng=rng))
    steps.append(final if final is not None else ReLU())
    if dropout > 0:
        steps.append(Dropout(dropout))
    return Sequential(*steps)


class DilatedResidualInceptionBlock(Module):
    """Shape-preserving residual block over parallel dilated branches.

    Each branch is 1x1 conv+BN+ReLU down to ``branch_channels`` followed by a
    3x3 stride-1 dilated conv+BN+ReLU; branch outputs are concatenated in
    ascending dilation order, fused by a 1x1 conv+BN (no activation), and
    added to the input.  Fuse width must equal the input width.
    """

    def __init__(self, spec: DRIBSpec, *, rng: np.random.Generator):
        super().__init__()
        if spec.fuse_channels != spec.in_channels:
            raise ConfigurationError(
                f"residual add needs fuse_channels == in_channels, got "
                f"{spec.fuse_channels} vs {spec.in_channels}")
        self.spec = spec
        self.branches = ModuleList([
            Sequential(
                Conv2d(spec.in_channels, spec.branch_channels, 1, rng=rng),
                BatchNorm2d(spec.branch_channels, rng=rng),
                ReLU(),
                Conv2d(spec.branch_channels, spec.branch_channels, 3,
                       stride=1, dilation=r, padding=r, rng=rng),
                BatchNorm2d(spec.branch_channels, rng=rng),
                ReLU(),
            )
            for r in spec.dilation_rates
        ])
        self.fuse_conv = Conv2d(
            spec.branch_channels * len(spec.dilation_rates),
            spec.fuse_channels, 1, rng=rng)
        self.fuse_bn = BatchNorm2d(spec.fuse_channels, rng=rng)

    def forward(self, x, train: bool = False, rng=None):
        parts = [br.forward(x, train=train, rng=rng) for br in self.branches]
        cat = np.concatenate(parts, axis=1)
        fused = self.fuse_bn.forward(
            self.fuse_conv.forward(cat, train=train, rng=rng),
            train=train, rng=rng)
        return x + fused

    def backward(self, dy):
        dcat = self.fuse_conv.backward(self.fuse_bn.backward(dy))
        width = self.spec.branch_channels
        dx = dy.copy()
        for i, br in reversed(list(enumerate(self.branches))):
            dx += br.backward(dcat[:, i * width:(i + 1) * width])
        return dx


class UNetBottleneck(Module):
    """Conventional deeper middle: ``depth`` stride-2 conv/deconv pairs with
    skip concatenations, in place of the residual blocks.  Built for a fixed
    input scale (depth 5 reaches 1x1 from a 256-px patch)."""

    def __init__(self, channels: int, depth: int, *,
                 rng: np.random.Generator, leaky_slope: float = 0.2):
        super().__init__()
        if depth < 1:
            raise ConfigurationError(f"unet bottleneck depth must be >= 1, got {depth}")
        self.channels = channels
        self.depth = depth
        # innermost down skips BN (its map can be 1x1, degenerate for stats)
        self.downs = ModuleList([
            _cbl(channels, channels, 4, 2, 1, leaky_slope, rng,
                 norm=(i < depth - 1))
            for i in range(depth)
        ])
        self.ups = ModuleList([
            _dbr(channels if i == 0 else 2 * channels, channels, 4, 2, 1, rng)
            for i in range(depth)
        ])

    def forward(self, x, train: bool = False, rng=None):
        outs = []
        h = x
        for down in self.downs:
            h = down.forward(h, train=train, rng=rng)
            outs.append(h)
        h = self.ups[0].forward(h, train=train, rng=rng)
        for i in range(1, self.depth):
            h = self.ups[i].forward(
                F.concat_channels(h, outs[self.depth - 1 - i]),
                train=train, rng=rng)
        return h

    def backward(self, dy):
        skip_grads: dict[int, np.ndarray] = {}
        d = dy
        for i in range(self.depth - 1, 0, -1):
            d, dskip = F.split_channels(self.ups[i].backward(d), self.channels)
            skip_grads[self.depth - 1 - i] = dskip
        g = self.ups[0].backward(d)
        for j in range(self.depth - 1, -1, -1):
            total = g if j == self.depth - 1 else g + skip_grads[j]
            g = self.downs[j].backward(total)
        return g


class Generator(Module):
    """Encoder, bottleneck, decoder with skip concatenations.

    Skips: encoder stage 1 (width b, H/2) feeds the final deconv; stage 2
    (2b, H/4) feeds decoder layer 3; stage 3 (4b, H/8) feeds decoder layer 1.
    Encoder stage 4 (8b, H/8, stride 1) feeds the bottleneck only.  Output is
    tanh-bounded to (-1, 1).
    """

    def __init__(self, spec: GeneratorSpec, *, rng: np.random.Generator):
        super().__init__()
        if spec.bottleneck not in ("drib", "unet"):
            raise ConfigurationError(f"unknown bottleneck {spec.bottleneck!r}")
        self.spec = spec
        b = spec.base_channels
        s = spec.leaky_slope
        self.enc1 = _cbl(spec.in_channels, b, 4, 2, 1, s, rng, norm=False)
        self.enc2 = _cbl(b, 2 * b, 4, 2, 1, s, rng)
        self.enc3 = _cbl(2 * b, 4 * b, 4, 2, 1, s, rng)
        self.enc4 = _cbl(4 * b, 8 * b, 4, 1, (1, 2), s, rng)
        if spec.bottleneck == "drib":
            self.bottleneck = Sequential(*[
                DilatedResidualInceptionBlock(spec.drib_spec(), rng=rng)
                for _ in range(spec.num_blocks)
            ])
        else:
            self.bottleneck = UNetBottleneck(
                8 * b, spec.unet_extra_depth, rng=rng, leaky_slope=s)
        self.dec1 = _dbr(12 * b, 4 * b, 4, 1, (1, 2), rng, dropout=spec.dropout)
        self.dec2 = _dbr(4 * b, 2 * b, 4, 2, 1, rng, dropout=spec.dropout)
        self.dec3 = _dbr(4 * b, b, 4, 2, 1, rng)
        self.dec4 = _dbr(2 * b, spec.out_channels, 4, 2, 1, rng, norm=False,
                         final=Tanh())

    def forward(self, x, train: bool = False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ConfigurationError(
                f"generator expects (B, {self.spec.in_channels}, H, W), got "
                f"{x.shape}")
        h, w = x.shape[2], x.shape[3]
        if h % 8 or w % 8 or h < 8 or w < 8:
            raise ConfigurationError(
                f"generator input spatial size must be a multiple of 8, got "
                f"{h}x{w}")
        e1 = self.enc1.forward(x, train=train, rng=rng)
        e2 = self.enc2.forward(e1, train=train, rng=rng)
        e3 = self.enc3.forward(e2, train=train, rng=rng)
        e4 = self.enc4.forward(e3, train=train, rng=rng)
        z = self.bottleneck.forward(e4, train=train, rng=rng)
        d1 = self.dec1.forward(F.concat_channels(z, e3), train=train, rng=rng)
        d2 = self.dec2.forward(d1, train=train, rng=rng)
        d3 = self.dec3.forward(F.concat_channels(d2, e2), train=train, rng=rng)
        out = self.dec4.forward(F.concat_channels(d3, e1), train=train, rng=rng)
        return out

    def backward(self, dy):
        b = self.spec.base_channels
        dd3, de1 = F.split_channels(self.dec4.backward(dy), b)
        dd2, de2 = F.split_channels(self.dec3.backward(dd3), 2 * b)
        dd1 = self.dec2.backward(dd2)
        dz, de3 = F.split_channels(self.dec1.backward(dd1), 8 * b)
        de4 = self.bottleneck.backward(dz)
        g3 = self.enc4.backward(de4) + de3
        g2 = self.enc3.backward(g3) + de2
        g1 = self.enc2.backward(g2) + de1
        return self.enc1.backward(g1)


class Discriminator(Module):
    """Patch discriminator emitting a grid of raw real/fake logits.

    The input is the channel concatenation of condition and target; four
    stride-2 halvings then a same-padded k3 conv give one logit per 16x16
    input patch region.  No sigmoid here; the loss applies it stably.
    """

    def __init__(self, spec: DiscriminatorSpec, *, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        b = spec.base_channels
        s = spec.leaky_slope
        self.net = Sequential(
            _cbl(spec.in_channels, b, 4, 2, 1, s, rng),
            _cbl(b, 2 * b, 4, 2, 1, s, rng),
            _cbl(2 * b, 4 * b, 4, 2, 1, s, rng),
            _cbl(4 * b, 8 * b, 4, 2, 1, s, rng),
            Conv2d(8 * b, 1, 3, stride=1, padding=1, rng=rng),
        )

    def forward(self, x, train: bool = False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ConfigurationError(
                f"discriminator expects (B, {self.spec.in_channels}, H, W), "
                f"got {x.shape}")
        return self.net.forward(x, train=train, rng=rng)

    def forward_pair(self, condition, target, train: bool = False, rng=None):
        return self.forward(F.concat_channels(condition, target),
                            train=train, rng=rng)

    def backward(self, dy):
        return self.net.backward(dy)


def build_generator(spec: GeneratorSpec, rng: np.random.Generator) -> Generator:
    return Generator(spec, rng=rng)


def build_drib(spec: DRIBSpec, rng: np.random.Generator,
               ) -> DilatedResidualInceptionBlock:
    return DilatedResidualInceptionBlock(spec, rng=rng)


def build_discriminator(spec: DiscriminatorSpec,
                        rng: np.random.Generator) -> Discriminator:
    return Discriminator(spec, rng=rng)


def build_unet_baseline(in_channels: int, rng: np.random.Generator, *,
                        base_channels: int = 64,
                        input_size: int = 256) -> Generator:
    """Baseline generator with the residual blocks swapped for a deeper
    U-net middle reaching 1x1 at ``input_size``-px inputs."""
    scale = input_size // 8
    depth = int(scale).bit_length() - 1
    if input_size % 8 or 8 * 2 ** depth != input_size:
        raise ConfigurationError(
            f"unet baseline input_size must be 8 * 2^k, got {input_size}")
    spec = GeneratorSpec(in_channels=in_channels, base_channels=base_channels,
                         bottleneck="unet", unet_extra_depth=depth)
    return Generator(spec, rng=rng)


def param_count(net: Module) -> int:
    """Total learnable scalars (weights, biases, BN affine terms)."""
    return net.param_count()
