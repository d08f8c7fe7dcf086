"""Layer stack and model assembly for the training engine.

A model is an ordered list of layers built from a NetConfig. Every layer
implements forward(x, ctx) and backward(dout); parameters and gradients live
in per-layer dicts and are exposed flat under "layername.param" keys.

Modes:
  - "real": pretrain stage, real-valued conv/linear weights, ReLU
    activations (the input is still encoded bit planes in {-1,+1});
  - "binary": sign(latent weight) in every conv/linear forward, Heaviside
    activations emitting {-1,+1}, straight-through gradients (identity on
    |u| <= 1, zero outside; sign(0) = +1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoders, nnops
from .topology import (KIND_DOUBLE_CONV, NetConfig, channel_shuffle,
                       shuffle_permutation, ENC_GLT, ENC_FT, ENC_BASE2)

DTYPE = np.float32


@dataclass
class Ctx:
    mode: str = "binary"        # "real" | "binary"
    training: bool = True
    check_binary: bool = False  # assert +-1 operands feed binary MACs


def sign01(u: np.ndarray) -> np.ndarray:
    """sign with the deterministic tie-break sign(0) = +1."""
    return np.where(u >= 0, 1.0, -1.0).astype(u.dtype)


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, ctx: Ctx):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class EncoderLayer(Layer):
    """Input binarization front end. Consumes (N, H, W, C) images in [0, 1]
    and emits (N, C*M, H, W) activations in {-1, +1}. In GLT mode the
    latent thresholds are trainable; the image itself never receives
    gradients (it is data)."""

    name = "encoder"

    def __init__(self, spec, channels: int):
        super().__init__()
        self.spec = spec
        self.channels = channels
        self.thermo: encoders.ThermoParams | None = None
        self.surrogate = encoders.SurrogateConfig()
        if spec.method == ENC_GLT:
            self.thermo = encoders.glt_init_params(channels, spec.planes,
                                                   spec.adc_bits)
            self.params["latent"] = self.thermo.latent
        self._cache = None

    def thresholds(self) -> np.ndarray:
        if self.spec.method == ENC_GLT:
            return self.thermo.thresholds()
        return np.tile(encoders.fixed_ramp(self.spec.planes,
                                           self.spec.adc_bits),
                       (self.channels, 1))

    def forward(self, x, ctx: Ctx):
        n, h, w, c = x.shape
        m = self.spec.planes
        if self.spec.gamma is not None and self.spec.method != ENC_BASE2:
            x = encoders.gamma_inverse(x, self.spec.gamma)
        if self.spec.method == ENC_BASE2:
            ints = np.rint(x * ((1 << self.spec.adc_bits) - 1)).astype(np.int64)
            shifts = np.arange(m)
            bits = ((ints.transpose(0, 3, 1, 2)[:, :, None]
                     >> shifts[None, None, :, None, None]) & 1)
        else:
            t = self.thresholds()
            bits = (x.transpose(0, 3, 1, 2)[:, :, None]
                    >= t[None, :, :, None, None])
            if ctx.training and self.spec.method == ENC_GLT:
                self._cache = x
        out = (2.0 * bits.reshape(n, c * m, h, w) - 1.0).astype(DTYPE)
        return out

    def backward(self, dout):
        if self.spec.method == ENC_GLT and self._cache is not None:
            # d(plane)/d(bit) = 2 since activations are 2b - 1
            self.grads["latent"] = encoders.glt_backward_batch(
                2.0 * dout, self._cache, self.thermo, self.surrogate)
            self._cache = None
        return None  # input is data


class BinConv2d(Layer):
    """Conv with latent real weights; binary mode uses sign(w) and pads
    with -1, real mode uses w directly and pads with 0."""

    def __init__(self, name: str, c_in: int, c_out: int, k: int = 3,
                 stride: int = 1, padding: int = 1, groups: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.name = name
        self.stride, self.padding, self.groups = stride, padding, groups
        fan_in = (c_in // groups) * k * k
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = (rng.standard_normal(
            (c_out, c_in // groups, k, k)) / np.sqrt(fan_in)).astype(DTYPE)
        self._cache = None

    def forward(self, x, ctx: Ctx):
        w = self.params["weight"]
        if ctx.mode == "binary":
            if ctx.check_binary:
                assert np.all(np.abs(x) == 1), f"{self.name}: non-binary input"
            w_eff = sign01(w)
            pad_value = -1.0
        else:
            w_eff = w
            pad_value = 0.0
        out, conv_cache = nnops.conv2d_forward(x, w_eff, self.stride,
                                               self.padding, pad_value,
                                               self.groups)
        self._cache = (conv_cache, w_eff, ctx.mode)
        return out

    def backward(self, dout):
        conv_cache, w_eff, mode = self._cache
        dx, dw = nnops.conv2d_backward(dout, w_eff, conv_cache)
        if mode == "binary":
            dw = dw * (np.abs(self.params["weight"]) <= 1.0)
        self.grads["weight"] = dw
        self._cache = None
        return dx


class BatchNorm2d(Layer):
    def __init__(self, name: str, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5):
        super().__init__()
        self.name = name
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=DTYPE)
        self.params["beta"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(channels, dtype=DTYPE)
        self._cache = None

    def forward(self, x, ctx: Ctx):
        out, self._cache = nnops.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            ctx.training, self.momentum, self.eps)
        return out

    def backward(self, dout):
        dx, dgamma, dbeta = nnops.batchnorm_backward(dout, self._cache)
        self.grads["gamma"] = dgamma
        self.grads["beta"] = dbeta
        self._cache = None
        return dx


class Activation(Layer):
    """Heaviside emitting {-1,+1} with a clipped straight-through gradient
    (binary mode), or ReLU (real mode)."""

    def __init__(self, name: str):
        super().__init__()
        self.name = name
        self._cache = None

    def forward(self, x, ctx: Ctx):
        self._cache = (x, ctx.mode)
        if ctx.mode == "binary":
            return sign01(x)
        return np.maximum(x, 0)

    def backward(self, dout):
        x, mode = self._cache
        self._cache = None
        if mode == "binary":
            return dout * (np.abs(x) <= 1.0)
        return dout * (x > 0)


class ChannelShuffle(Layer):
    def __init__(self, name: str, groups: int):
        super().__init__()
        self.name = name
        self.groups = groups

    def forward(self, x, ctx: Ctx):
        return channel_shuffle(x, self.groups)

    def backward(self, dout):
        c = dout.shape[1]
        perm = shuffle_permutation(c, self.groups)
        inv = np.argsort(perm)
        # forward picked input channel perm[j]; route gradients back
        dx = np.empty_like(dout)
        dx[:, perm] = dout
        return dx


class Flatten(Layer):
    name = "flatten"

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, ctx: Ctx):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class BinLinear(Layer):
    """Classifier head. Binary mode uses sign(w); logits are scaled by the
    constant 1/sqrt(fan_in) in both modes so the softmax sees O(1) values.
    The constant is uniform across classes, so deployed integer-accumulator
    argmax is unchanged."""

    def __init__(self, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.name = name
        self.scale = 1.0 / np.sqrt(n_in)
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = (rng.standard_normal((n_out, n_in))
                                 / np.sqrt(n_in)).astype(DTYPE)
        self._cache = None

    def forward(self, x, ctx: Ctx):
        w = self.params["weight"]
        if ctx.mode == "binary":
            if ctx.check_binary:
                assert np.all(np.abs(x) == 1), f"{self.name}: non-binary input"
            w_eff = sign01(w)
        else:
            w_eff = w
        self._cache = (x, w_eff, ctx.mode)
        return (x @ w_eff.T) * self.scale

    def backward(self, dout):
        x, w_eff, mode = self._cache
        self._cache = None
        dw = (dout.T @ x) * self.scale
        if mode == "binary":
            dw = dw * (np.abs(self.params["weight"]) <= 1.0)
        self.grads["weight"] = dw
        return (dout @ w_eff) * self.scale


class Model:
    """Ordered layer stack built from a NetConfig."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = EncoderLayer(cfg.encoder, cfg.input_size[2])
        self.layers: list[Layer] = [self.encoder]
        self.layers.append(BinConv2d("stem.conv", cfg.input_planes,
                                     cfg.stem_channels,
                                     stride=cfg.stem_stride, rng=rng))
        self.layers.append(BatchNorm2d("stem.bn", cfg.stem_channels))
        self.layers.append(Activation("stem.act"))
        for i, b in enumerate(cfg.blocks, start=1):
            self.layers.extend(build_block_layers(i, b, rng))
        self.layers.append(Flatten())
        self.layers.append(BinLinear("classifier", cfg.feature_size(),
                                     cfg.classes, rng=rng))

    # -- parameter plumbing -------------------------------------------------

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for k, v in layer.params.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for k, v in layer.buffers.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def collect_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for k, v in layer.grads.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def load_arrays(self, params: dict[str, np.ndarray],
                    buffers: dict[str, np.ndarray] | None = None,
                    strict: bool = True) -> None:
        """Copy values into existing parameter/buffer storage (aliasing with
        any attached optimizer is preserved)."""
        for layer in self.layers:
            for k in layer.params:
                key = f"{layer.name}.{k}"
                if key in params:
                    np.copyto(layer.params[k], params[key])
                elif strict:
                    raise KeyError(f"missing parameter {key}")
            for k in layer.buffers:
                key = f"{layer.name}.{k}"
                if buffers and key in buffers:
                    np.copyto(layer.buffers[k], buffers[key])
                elif buffers is not None and strict:
                    raise KeyError(f"missing buffer {key}")
        if self.encoder.thermo is not None:
            self.encoder.thermo.latent = self.encoder.params["latent"]

    def snapshot(self) -> dict[str, np.ndarray]:
        snap = {k: v.copy() for k, v in self.named_params().items()}
        snap.update({f"buf.{k}": v.copy()
                     for k, v in self.named_buffers().items()})
        return snap

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        params = {k: v for k, v in snap.items() if not k.startswith("buf.")}
        buffers = {k[4:]: v for k, v in snap.items() if k.startswith("buf.")}
        self.load_arrays(params, buffers)

    # -- execution ----------------------------------------------------------

    def forward(self, images: np.ndarray, ctx: Ctx) -> np.ndarray:
        x = images
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def backward(self, dlogits: np.ndarray) -> None:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)


def build_block_layers(index: int, block, rng) -> list[Layer]:
    prefix = f"block{index}"
    if block.kind == KIND_DOUBLE_CONV:
        return [
            BinConv2d(f"{prefix}.conv1", block.in_channels,
                      block.out_channels, stride=block.stride, rng=rng),
            BatchNorm2d(f"{prefix}.bn1", block.out_channels),
            Activation(f"{prefix}.act1"),
            BinConv2d(f"{prefix}.conv2", block.out_channels,
                      block.out_channels, stride=1, rng=rng),
            BatchNorm2d(f"{prefix}.bn2", block.out_channels),
            Activation(f"{prefix}.act2"),
        ]
    layers: list[Layer] = [
        BinConv2d(f"{prefix}.gconv", block.in_channels, block.out_channels,
                  stride=block.stride, groups=block.groups, rng=rng),
        BatchNorm2d(f"{prefix}.bn", block.out_channels),
        Activation(f"{prefix}.act"),
    ]
    if block.shuffle:
        layers.append(ChannelShuffle(f"{prefix}.shuffle", block.groups))
    return layers
