"""Exact integer deployment path: fold batch norm + Heaviside into integer
thresholds and run the network on the bit-packed XNOR/popcount kernels.

Folding: after a binary conv with integer output s, the float pipeline
computes bit = 1 iff gamma*(s - mu)/sqrt(var + eps) + beta >= 0, i.e.
a*s + c >= 0 with a = gamma/sigma, c = beta - gamma*mu/sigma. Over the
integer domain of s this is equivalent to:

  a > 0:  s >= ceil(-c/a)
  a < 0:  s <= floor(-c/a); realized by flipping the filter's weight bits
          (s -> -s) and comparing -s >= ceil(c/a), keeping a single >=
          comparison form
  a = 0:  the bit is the constant (c >= 0)

so each channel gets one int32 threshold plus an optional weight flip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bitcore
from .bitcore import BitTensor, THRESHOLD_ALWAYS
from .layers import Model, BinConv2d, BatchNorm2d, Activation, ChannelShuffle, \
    Flatten, BinLinear, EncoderLayer, sign01
from .topology import shuffle_permutation

THRESHOLD_NEVER = np.iinfo(np.int32).max  # above any reachable accumulator


def fold_bn_heaviside(w_sign: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      mean: np.ndarray, var: np.ndarray,
                      eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Returns (possibly sign-flipped +-1 weights, int32 thresholds)."""
    sigma = np.sqrt(var.astype(np.float64) + eps)
    a = gamma.astype(np.float64) / sigma
    c = beta.astype(np.float64) - gamma.astype(np.float64) * mean / sigma
    w_out = w_sign.copy()
    tau = np.empty(len(a), dtype=np.int32)
    for j in range(len(a)):
        if a[j] > 0:
            tau[j] = int(math.ceil(-c[j] / a[j]))
        elif a[j] < 0:
            w_out[j] = -w_out[j]
            tau[j] = int(math.ceil(c[j] / a[j]))
        else:
            tau[j] = THRESHOLD_ALWAYS if c[j] >= 0 else THRESHOLD_NEVER
    return w_out, tau


@dataclass
class CompiledConv:
    weights: BitTensor          # signed, possibly bit-flipped per filter
    tau: np.ndarray             # int32 per output channel
    stride: int
    padding: int
    groups: int


@dataclass
class CompiledShuffle:
    permutation: np.ndarray


@dataclass
class CompiledNet:
    """Integer-only network: thermometer thresholds for the front end,
    folded conv stages, and a binary classifier matvec."""

    thresholds: np.ndarray      # (C, M) float thresholds for encoding
    stages: list
    classifier: BitTensor       # signed (classes, features)

    def forward_planes(self, planes_signed: BitTensor) -> np.ndarray:
        """Integer logits from signed (C*M, H, W) input planes."""
        x = planes_signed
        for stage in self.stages:
            if isinstance(stage, CompiledConv):
                acc = bitcore.bin_conv2d(x, stage.weights, stage.stride,
                                         stage.padding, stage.groups)
                x = bitcore.heaviside_threshold(acc, stage.tau)
            else:
                bits = x.bits()[stage.permutation]
                x = BitTensor.pack(2 * bits.astype(np.int8) - 1,
                                   bitcore.SIGNED)
        feat = BitTensor.pack(x.unpack().reshape(-1), bitcore.SIGNED)
        return bitcore.popcount_linear(feat, self.classifier)

    def forward_image(self, image: np.ndarray) -> np.ndarray:
        """Integer logits from an (H, W, C) image in [0, 1] (gamma already
        applied if the training pipeline used it)."""
        from .encoders import encode_thermometer
        enc = encode_thermometer(image, self.thresholds)
        planes = BitTensor(enc.planes.shape, enc.planes.data, bitcore.SIGNED)
        return self.forward_planes(planes)


def compile_binary_net(model: Model) -> CompiledNet:
    """Fold a trained binary-mode model into the integer kernel pipeline.

    Uses running (inference) normalization statistics; equals the float
    binary-mode eval forward bit-for-bit on the layers' integer domain.
    """
    layers = model.layers
    stages = []
    classifier = None
    i = 0
    thresholds = None
    while i < len(layers):
        layer = layers[i]
        if isinstance(layer, EncoderLayer):
            thresholds = layer.thresholds()
            i += 1
        elif isinstance(layer, BinConv2d):
            bn = layers[i + 1]
            act = layers[i + 2]
            if not isinstance(bn, BatchNorm2d) or not isinstance(act, Activation):
                raise ValueError(f"unfoldable layer sequence at {layer.name}")
            w_sign = sign01(layer.params["weight"].astype(np.float64))
            w_folded, tau = fold_bn_heaviside(
                w_sign, bn.params["gamma"], bn.params["beta"],
                bn.buffers["running_mean"].astype(np.float64),
                bn.buffers["running_var"].astype(np.float64), bn.eps)
            stages.append(CompiledConv(BitTensor.pack(w_folded), tau,
                                       layer.stride, layer.padding,
                                       layer.groups))
            i += 3
        elif isinstance(layer, ChannelShuffle):
            # permutation resolved at run time needs the channel count;
            # record it from the preceding conv stage
            c = stages[-1].weights.shape[0]
            stages.append(CompiledShuffle(shuffle_permutation(c,
                                                              layer.groups)))
            i += 1
        elif isinstance(layer, Flatten):
            i += 1
        elif isinstance(layer, BinLinear):
            classifier = BitTensor.pack(sign01(layer.params["weight"]
                                               .astype(np.float64)))
            i += 1
        else:
            raise ValueError(f"cannot compile layer {layer.name}")
    if classifier is None or thresholds is None:
        raise ValueError("model lacks encoder or classifier")
    return CompiledNet(thresholds, stages, classifier)
