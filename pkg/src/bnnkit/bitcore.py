"""Bit-packed tensors and exact XNOR/popcount compute kernels.

Bits are packed into uint8 words, little-endian bit order within each byte,
row-major with each innermost row padded to a byte boundary. Two semantics:
``plane01`` stores raw {0,1} bit planes; ``signed`` interprets bit b as the
value 2b-1 in {-1,+1}.

Integer accumulator outputs are plain ``numpy.int32`` arrays. Receptive
fields in scope (<= 3x3x512) cannot overflow 32-bit accumulation.

Padding in binary convolutions contributes the signed value -1 (bit 0):
the {-1,+1} algebra has no zero, so a fixed convention keeps the kernels
exact and testable. All kernels are pure functions over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PLANE01 = "plane01"
SIGNED = "signed"

# Sentinel threshold meaning "always fires" (compare against int32 minimum).
THRESHOLD_ALWAYS = np.iinfo(np.int32).min


class DimensionError(ValueError):
    """Shape or length mismatch between kernel operands."""


class KernelConfigError(ValueError):
    """Invalid kernel configuration (e.g. indivisible group counts)."""


def _packed_bytes(n: int) -> int:
    return (n + 7) // 8


def _row_mask(n: int) -> np.ndarray:
    """Mask selecting the n valid bits of a packed row (little bit order)."""
    nbytes = _packed_bytes(n)
    mask = np.full(nbytes, 0xFF, dtype=np.uint8)
    rem = n % 8
    if rem:
        mask[-1] = (1 << rem) - 1
    return mask


@dataclass(frozen=True)
class BitTensor:
    """Bit-packed multi-dimensional array of {0,1} planes or {-1,+1} values."""

    shape: tuple[int, ...]
    data: np.ndarray  # uint8, shape[:-1] + (ceil(shape[-1]/8),)
    semantics: str = SIGNED

    def __post_init__(self):
        if self.semantics not in (PLANE01, SIGNED):
            raise ValueError(f"unknown semantics {self.semantics!r}")
        expect = tuple(self.shape[:-1]) + (_packed_bytes(self.shape[-1]),)
        if tuple(self.data.shape) != expect:
            raise DimensionError(
                f"packed data shape {self.data.shape} != expected {expect}"
            )

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @classmethod
    def pack(cls, values, semantics: str = SIGNED) -> "BitTensor":
        """Pack an array of {0,1} (plane01) or {-1,+1} (signed) values."""
        arr = np.asarray(values)
        if semantics == SIGNED:
            bits = (arr > 0).astype(np.uint8)
        else:
            bits = arr.astype(np.uint8)
            if not np.all((bits == 0) | (bits == 1)):
                raise ValueError("plane01 values must be 0 or 1")
        data = np.packbits(bits, axis=-1, bitorder="little")
        return cls(shape=tuple(arr.shape), data=data, semantics=semantics)

    def unpack(self) -> np.ndarray:
        """Inverse of pack: int8 array of {0,1} or {-1,+1} values."""
        bits = np.unpackbits(self.data, axis=-1, count=self.shape[-1],
                             bitorder="little").astype(np.int8)
        if self.semantics == SIGNED:
            return (2 * bits - 1).astype(np.int8)
        return bits

    def bits(self) -> np.ndarray:
        """Raw {0,1} bits regardless of semantics."""
        return np.unpackbits(self.data, axis=-1, count=self.shape[-1],
                             bitorder="little")

    def as_signed(self) -> "BitTensor":
        return BitTensor(self.shape, self.data, SIGNED)

    def as_plane01(self) -> "BitTensor":
        return BitTensor(self.shape, self.data, PLANE01)

    def __eq__(self, other) -> bool:
        return (isinstance(other, BitTensor)
                and self.shape == other.shape
                and self.semantics == other.semantics
                and np.array_equal(self.data, other.data))


def xnor_dot(a: BitTensor, b: BitTensor) -> int:
    """Dot product of two signed +-1 bit vectors: 2*popcount(XNOR) - n."""
    if a.shape != b.shape or len(a.shape) != 1:
        raise DimensionError(f"xnor_dot length mismatch: {a.shape} vs {b.shape}")
    if a.semantics != SIGNED or b.semantics != SIGNED:
        raise ValueError("xnor_dot requires signed semantics")
    n = a.shape[0]
    x = np.bitwise_not(np.bitwise_xor(a.data, b.data)) & _row_mask(n)
    return int(2 * int(np.bitwise_count(x).sum()) - n)


def popcount_linear(x: BitTensor, w: BitTensor) -> np.ndarray:
    """Row-wise xnor_dot of a signed vector x[n] against a matrix w[m, n]."""
    if len(x.shape) != 1 or len(w.shape) != 2 or w.shape[1] != x.shape[0]:
        raise DimensionError(f"popcount_linear shapes: x{x.shape} w{w.shape}")
    if x.semantics != SIGNED or w.semantics != SIGNED:
        raise ValueError("popcount_linear requires signed semantics")
    n = x.shape[0]
    xn = np.bitwise_not(np.bitwise_xor(w.data, x.data[None, :])) & _row_mask(n)
    pc = np.bitwise_count(xn).sum(axis=-1, dtype=np.int64)
    return (2 * pc - n).astype(np.int32)


def heaviside_threshold(x: np.ndarray, tau: np.ndarray) -> BitTensor:
    """Channel-wise integer threshold: bit = 1 iff x[c, ...] >= tau[c].

    Pass THRESHOLD_ALWAYS for a channel to force all-ones.
    """
    x = np.asarray(x)
    tau = np.asarray(tau)
    if tau.ndim != 1 or tau.shape[0] != x.shape[0]:
        raise DimensionError(
            f"threshold count {tau.shape} != channel count {x.shape[0]}")
    t = tau.reshape((-1,) + (1,) * (x.ndim - 1))
    bits = (x >= t).astype(np.int8)
    return BitTensor.pack(2 * bits - 1, SIGNED)


def bin_conv2d(x: BitTensor, w: BitTensor, stride: int = 1, padding: int = 0,
               groups: int = 1) -> np.ndarray:
    """Exact 2-D cross-correlation over +-1 values via XNOR/popcount.

    x: signed BitTensor (C_in, H, W); w: signed BitTensor
    (C_out, C_in/groups, k, k). Spatial padding contributes -1 (bit 0).
    Returns int32 (C_out, H', W').
    """
    if x.semantics != SIGNED or w.semantics != SIGNED:
        raise ValueError("bin_conv2d requires signed semantics")
    if len(x.shape) != 3 or len(w.shape) != 4:
        raise DimensionError(f"bin_conv2d shapes: x{x.shape} w{w.shape}")
    c_in, h, wd = x.shape
    c_out, c_in_g, kh, kw = w.shape
    if c_in % groups or c_out % groups:
        raise KernelConfigError(
            f"C_in={c_in}, C_out={c_out} not divisible by groups={groups}")
    if c_in_g != c_in // groups:
        raise DimensionError(
            f"weight group width {c_in_g} != C_in/groups {c_in // groups}")

    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise DimensionError("empty output spatial extent")

    # Repack channel-last so each spatial site's group-channel slice is a
    # contiguous byte run; padding bits stay 0 (= signed -1) by construction.
    xbits = x.bits()  # (C, H, W) of {0,1}
    padded = np.zeros((c_in, h + 2 * padding, wd + 2 * padding), dtype=np.uint8)
    padded[:, padding:padding + h, padding:padding + wd] = xbits

    mask = _row_mask(c_in_g)
    n_per_site = c_in_g
    wbits = w.bits()  # (C_out, C_in/g, kh, kw)
    c_out_g = c_out // groups
    out = np.empty((c_out, h_out, w_out), dtype=np.int32)

    for g in range(groups):
        xg = padded[g * c_in_g:(g + 1) * c_in_g]               # (c_in_g, H2, W2)
        xgp = np.packbits(np.moveaxis(xg, 0, -1), axis=-1,
                          bitorder="little")                   # (H2, W2, B)
        wg = wbits[g * c_out_g:(g + 1) * c_out_g]              # (c_out_g, c_in_g, kh, kw)
        wgp = np.packbits(np.moveaxis(wg, 1, -1), axis=-1,
                          bitorder="little")                   # (c_out_g, kh, kw, B)
        pc = np.zeros((c_out_g, h_out, w_out), dtype=np.int64)
        for dy in range(kh):
            for dx in range(kw):
                patch = xgp[dy:dy + (h_out - 1) * stride + 1:stride,
                            dx:dx + (w_out - 1) * stride + 1:stride, :]
                xn = np.bitwise_not(
                    np.bitwise_xor(patch[None], wgp[:, dy, dx, None, None, :])
                ) & mask
                pc += np.bitwise_count(xn).sum(axis=-1, dtype=np.int64)
        out[g * c_out_g:(g + 1) * c_out_g] = (
            2 * pc - kh * kw * n_per_site).astype(np.int32)
    return out
