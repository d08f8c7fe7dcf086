"""Declarative network topology: blocks, shape inference, lightweight
grouped-convolution (LWC) replacement blocks, and exact size/BOPs accounting.

Reference topology: an encoder front end, a 3x3 stride-1 stem convolution,
a chain of prunable two-conv blocks (stride-2 channel-doubling conv plus a
stride-1 conv, each with batch norm and a binary activation), and a flatten
plus binary linear classifier.

An LWC block is a g-group 3x3 stride-2 convolution that doubles the channel
count, followed by batch norm, a binary activation, and a channel shuffle
when g > 1. It replaces a two-conv block without changing output shape.

Conventions (recorded in the config schema):
  - stride-2 convs use padding 1, so spatial dims go ceil(n/2);
  - 1 binary MAC = 1 BOP; the classifier's binary matvec is included;
  - size accounting reports binary weight bits and 32-bit real parameters
    (batch-norm affine pairs, learned-thermometer latents) separately.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

CONFIG_VERSION = 1

KIND_DOUBLE_CONV = "double_conv"
KIND_LWC = "lwc"

ENC_GLT = "glt"
ENC_FT = "ft"
ENC_BASE2 = "base2"


class TopologyError(ValueError):
    """Invalid or inconsistent network configuration."""


class ReplacementError(TopologyError):
    """Block replacement rejected (not prunable or shape mismatch)."""


def channel_shuffle(x: np.ndarray, groups: int) -> np.ndarray:
    """Interleave channel groups: reshape (g, C/g) -> transpose -> flatten.

    Output channel j comes from input channel (j mod g)*(C/g) + j//g.
    Works on (..., C, H, W); identity for groups == 1.
    """
    if groups == 1:
        return x
    c = x.shape[-3]
    if c % groups:
        raise TopologyError(f"channels {c} not divisible by groups {groups}")
    lead = x.shape[:-3]
    h, w = x.shape[-2:]
    return (x.reshape(lead + (groups, c // groups, h, w))
             .swapaxes(-4, -3)
             .reshape(lead + (c, h, w)))


def shuffle_permutation(c: int, groups: int) -> np.ndarray:
    """Channel index permutation applied by channel_shuffle."""
    if c % groups:
        raise TopologyError(f"channels {c} not divisible by groups {groups}")
    j = np.arange(c)
    return (j % groups) * (c // groups) + j // groups


@dataclass
class EncoderSpec:
    method: str = ENC_GLT       # glt | ft | base2
    planes: int = 8             # M (for base2 this is forced to adc_bits)
    adc_bits: int = 8           # Nb
    gamma: float | None = None  # gamma inversion exponent, None = off

    def __post_init__(self):
        if self.method not in (ENC_GLT, ENC_FT, ENC_BASE2):
            raise TopologyError(f"unknown encoder method {self.method!r}")
        if self.method == ENC_BASE2:
            self.planes = self.adc_bits


@dataclass
class Block:
    """One prunable trunk stage. double_conv: stride-s channel-doubling
    3x3 conv + stride-1 3x3 conv; lwc: single grouped stride-s 3x3 conv
    with channel shuffle."""

    kind: str
    in_channels: int
    out_channels: int
    stride: int = 2
    prunable: bool = True
    groups: int = 1             # LWC group count (double_conv ignores it)

    def __post_init__(self):
        if self.kind not in (KIND_DOUBLE_CONV, KIND_LWC):
            raise TopologyError(f"unknown block kind {self.kind!r}")
        if self.kind == KIND_LWC:
            if self.out_channels != 2 * self.in_channels:
                raise TopologyError(
                    f"LWC must double channels: {self.in_channels} -> "
                    f"{self.out_channels}")
            if self.in_channels % self.groups or self.out_channels % self.groups:
                raise TopologyError(
                    f"channels ({self.in_channels}, {self.out_channels}) not "
                    f"divisible by groups {self.groups}")

    @property
    def shuffle(self) -> bool:
        return self.kind == KIND_LWC and self.groups > 1


@dataclass
class NetConfig:
    input_size: tuple[int, int, int]    # (H, W, C)
    encoder: EncoderSpec
    stem_channels: int
    blocks: list[Block]
    classes: int
    stem_stride: int = 1
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.input_size = tuple(self.input_size)
        self.infer_shapes()

    @property
    def input_planes(self) -> int:
        return self.input_size[2] * self.encoder.planes

    def infer_shapes(self) -> list[tuple[int, int, int]]:
        """(C, H, W) after the stem and after every block; validates chain."""
        h, w, _ = self.input_size
        h = (h + 2 - 3) // self.stem_stride + 1  # stem: 3x3 pad 1
        w = (w + 2 - 3) // self.stem_stride + 1
        shapes = [(self.stem_channels, h, w)]
        c = self.stem_channels
        for i, b in enumerate(self.blocks, start=1):
            if b.in_channels != c:
                raise TopologyError(
                    f"block {i} expects {b.in_channels} input channels, "
                    f"got {c}")
            h = (h + 2 - 3) // b.stride + 1
            w = (w + 2 - 3) // b.stride + 1
            if h <= 0 or w <= 0:
                raise TopologyError(f"block {i} collapses spatial dims")
            c = b.out_channels
            shapes.append((c, h, w))
        return shapes

    def feature_size(self) -> int:
        c, h, w = self.infer_shapes()[-1]
        return c * h * w

    def to_dict(self) -> dict:
        d = {
            "version": self.version,
            "input": {"height": self.input_size[0],
                      "width": self.input_size[1],
                      "channels": self.input_size[2]},
            "encoder": {k: v for k, v in asdict(self.encoder).items()},
            "stem_channels": self.stem_channels,
            "stem_stride": self.stem_stride,
            "blocks": [asdict(b) for b in self.blocks],
            "classes": self.classes,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        if d.get("version") != CONFIG_VERSION:
            raise TopologyError(
                f"unsupported config version {d.get('version')!r}")
        inp = d["input"]
        return cls(
            input_size=(inp["height"], inp["width"], inp["channels"]),
            encoder=EncoderSpec(**d["encoder"]),
            stem_channels=d["stem_channels"],
            blocks=[Block(**b) for b in d["blocks"]],
            classes=d["classes"],
            stem_stride=d.get("stem_stride", 1),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    @classmethod
    def load(cls, path) -> "NetConfig":
        with open(path) as f:
            d = yaml.safe_load(f)
        return cls.from_dict(d)


def replace_block(cfg: NetConfig, index: int, groups: int) -> NetConfig:
    """Swap 1-based block `index` for an LWC block with `groups` groups.

    The LWC keeps the original block's output shape; all other blocks are
    untouched and the whole chain is re-validated.
    """
    if not (1 <= index <= len(cfg.blocks)):
        raise ReplacementError(f"block index {index} out of range")
    old = cfg.blocks[index - 1]
    if not old.prunable:
        raise ReplacementError(f"block {index} is not prunable")
    new = Block(KIND_LWC, old.in_channels, old.out_channels,
                stride=old.stride, prunable=old.prunable, groups=groups)
    old_shapes = cfg.infer_shapes()
    out = copy.deepcopy(cfg)
    out.blocks[index - 1] = new
    new_shapes = out.infer_shapes()
    if old_shapes != new_shapes:
        raise ReplacementError(
            f"replacement changes shapes: {old_shapes} -> {new_shapes}")
    return out


# ---------------------------------------------------------------------------
# Size and BOPs accounting


@dataclass
class SizeBreakdown:
    binary_bits: int
    real_bits: int
    ledger: list[tuple[str, int, str]] = field(default_factory=list)

    @property
    def total_bits(self) -> int:
        return self.binary_bits + self.real_bits


def _conv_weight_bits(c_out: int, c_in: int, k: int, groups: int) -> int:
    return c_out * (c_in // groups) * k * k


def count_model_size(cfg: NetConfig) -> SizeBreakdown:
    """Exact bit count: 1 bit per binary weight, 32 bits per real parameter
    (BN affine pairs and learned-thermometer latents)."""
    ledger: list[tuple[str, int, str]] = []
    binary = 0
    real = 0

    def add_bin(name, bits):
        nonlocal binary
        binary += bits
        ledger.append((name, bits, "binary"))

    def add_real(name, bits):
        nonlocal real
        real += bits
        ledger.append((name, bits, "real"))

    if cfg.encoder.method == ENC_GLT:
        add_real("glt_latent",
                 cfg.input_size[2] * (cfg.encoder.planes + 1) * 32)

    add_bin("stem.conv",
            _conv_weight_bits(cfg.stem_channels, cfg.input_planes, 3, 1))
    add_real("stem.bn", 2 * cfg.stem_channels * 32)

    for i, b in enumerate(cfg.blocks, start=1):
        if b.kind == KIND_DOUBLE_CONV:
            add_bin(f"block{i}.conv1",
                    _conv_weight_bits(b.out_channels, b.in_channels, 3, 1))
            add_real(f"block{i}.bn1", 2 * b.out_channels * 32)
            add_bin(f"block{i}.conv2",
                    _conv_weight_bits(b.out_channels, b.out_channels, 3, 1))
            add_real(f"block{i}.bn2", 2 * b.out_channels * 32)
        else:
            add_bin(f"block{i}.gconv",
                    _conv_weight_bits(b.out_channels, b.in_channels, 3,
                                      b.groups))
            add_real(f"block{i}.bn", 2 * b.out_channels * 32)

    add_bin("classifier", cfg.feature_size() * cfg.classes)
    return SizeBreakdown(binary, real, ledger)


def count_bops(cfg: NetConfig, input_hw: tuple[int, int] | None = None) -> int:
    """Binary-MAC count: sum over binary layers of
    H_out*W_out*C_out*(C_in/g)*k*k, plus the classifier matvec."""
    if input_hw is None:
        h, w = cfg.input_size[:2]
    else:
        h, w = input_hw
    h = (h + 2 - 3) // cfg.stem_stride + 1
    w = (w + 2 - 3) // cfg.stem_stride + 1
    bops = h * w * cfg.stem_channels * cfg.input_planes * 9
    for b in cfg.blocks:
        h = (h + 2 - 3) // b.stride + 1
        w = (w + 2 - 3) // b.stride + 1
        if b.kind == KIND_DOUBLE_CONV:
            bops += h * w * b.out_channels * b.in_channels * 9
            bops += h * w * b.out_channels * b.out_channels * 9
        else:
            bops += h * w * b.out_channels * (b.in_channels // b.groups) * 9
    bops += cfg.feature_size() * cfg.classes
    return bops


# ---------------------------------------------------------------------------
# Reference topologies


def reference_toy_config(classes: int = 10, size: int = 32,
                         method: str = ENC_GLT, planes: int = 8,
                         gamma: float | None = 2.2) -> NetConfig:
    """Small residual-free 3-block trunk used by the desk-scale experiments."""
    return NetConfig(
        input_size=(size, size, 3),
        encoder=EncoderSpec(method=method, planes=planes, gamma=gamma),
        stem_channels=16,
        stem_stride=2,
        blocks=[
            Block(KIND_DOUBLE_CONV, 16, 32, stride=2),
            Block(KIND_DOUBLE_CONV, 32, 64, stride=2),
            Block(KIND_DOUBLE_CONV, 64, 128, stride=2),
        ],
        classes=classes,
    )
