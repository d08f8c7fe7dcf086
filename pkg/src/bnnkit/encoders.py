"""Input-data binarization: learned thermometer (GLT), fixed linear
thermometer, base-2 fixed-point, and gamma preprocessing.

Learned thresholds are parameterized by positive latent values: normalize to
sum 1, then take the cumulative sum of the first M entries. This guarantees
0 < t_1 < ... < t_M < 1 as long as every latent stays positive. Latents are
kept >= EPSILON_MIN by projection after each optimizer step.

Encoded planes are concatenated channel-major: all M planes of channel 0,
then channel 1, etc. This ordering is part of the checkpoint format.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bitcore import BitTensor, PLANE01

EPSILON_MIN = 0.05

TAG_GLT = "GLT"
TAG_FT = "FT"
TAG_BASE2 = "base2"


class LatentDomainError(ValueError):
    """Latent threshold parameters outside the valid positive domain."""


class InitError(ValueError):
    """Incompatible (M, Nb, k) combination for latent initialization."""


@dataclass
class SurrogateConfig:
    """Bell-shaped clipped surrogate for the Heaviside derivative.

    p controls the narrowness of the bell, m clips the peak. beta scales
    the latent-threshold gradient; None selects 2/sqrt(H*W*M) per channel.
    """

    p: float = 2.0
    m: float = 5.0
    beta: float | None = None

    def __post_init__(self):
        if self.p <= 1:
            raise ValueError("surrogate exponent p must be > 1")
        if self.m <= 0:
            raise ValueError("surrogate clip m must be > 0")


@dataclass
class ThermoParams:
    """Per-channel latent thresholds and derived quantities."""

    channels: int
    planes: int                 # M bit planes per channel
    latent: np.ndarray          # (channels, M+1), all >= EPSILON_MIN
    adc_bits: int = 8           # Nb
    epsilon_min: float = EPSILON_MIN

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=np.float64)
        if self.latent.shape != (self.channels, self.planes + 1):
            raise ValueError(
                f"latent shape {self.latent.shape} != "
                f"({self.channels}, {self.planes + 1})")
        if np.any(self.latent < self.epsilon_min):
            raise LatentDomainError(
                f"latent values must be >= {self.epsilon_min}")

    def thresholds(self) -> np.ndarray:
        """(channels, M) strictly increasing thresholds in (0, 1)."""
        return np.stack([thresholds_from_latent(l) for l in self.latent])

    def project(self) -> None:
        """Clamp latents up to epsilon_min (applied after optimizer steps)."""
        np.maximum(self.latent, self.epsilon_min, out=self.latent)

    def copy(self) -> "ThermoParams":
        return ThermoParams(self.channels, self.planes, self.latent.copy(),
                            self.adc_bits, self.epsilon_min)


@dataclass
class EncodedPlanes:
    """Bit planes (channels*M, H, W) in plane01 semantics plus provenance."""

    planes: BitTensor
    channels: int
    planes_per_channel: int
    source: str                 # TAG_GLT | TAG_FT | TAG_BASE2
    clamped: int = 0            # out-of-range input pixels clamped

    @property
    def shape(self) -> tuple[int, ...]:
        return self.planes.shape


def thresholds_from_latent(latent: np.ndarray) -> np.ndarray:
    """Normalize positive latents to sum 1, cumulative-sum the first M."""
    latent = np.asarray(latent, dtype=np.float64)
    if np.any(latent <= 0):
        raise LatentDomainError("latent threshold parameters must be > 0")
    norm = latent / latent.sum()
    return np.cumsum(norm[:-1])


def threshold_jacobian(latent: np.ndarray) -> np.ndarray:
    """Closed-form d t_i / d latent_j, shape (M, M+1).

    With S = sum(latent): d t_i / d latent_j = (1[j <= i] - t_i) / S.
    """
    latent = np.asarray(latent, dtype=np.float64)
    m = latent.shape[0] - 1
    t = thresholds_from_latent(latent)
    ind = (np.arange(m + 1)[None, :] <= np.arange(m)[:, None]).astype(np.float64)
    return (ind - t[:, None]) / latent.sum()


def fixed_ramp(m: int, nb: int = 8) -> np.ndarray:
    """Linear-ramp thresholds t_i = s*(i - 0.5)/(2^Nb - 1), s = 2^Nb / M."""
    if m < 1 or (1 << nb) % m:
        raise InitError(f"M={m} must be a positive divisor of 2^Nb={1 << nb}")
    s = (1 << nb) / m
    i = np.arange(1, m + 1, dtype=np.float64)
    return s * (i - 0.5) / ((1 << nb) - 1)


def glt_init(m: int, nb: int = 8, k: float | None = None) -> np.ndarray:
    """Latent init (length M+1) whose derived thresholds are the linear ramp.

    k balances stabilization against updatability; default M/1280 keeps
    every initial latent above the EPSILON_MIN clip.
    """
    if m < 1 or (1 << nb) % m:
        raise InitError(f"M={m} must be a positive divisor of 2^Nb={1 << nb}")
    if k is None:
        k = m / 1280.0
    s = (1 << nb) / m
    lat = np.empty(m + 1, dtype=np.float64)
    lat[0] = 0.5 * s * k
    lat[1:m] = s * k
    lat[m] = (0.5 * s - 1.0) * k
    if np.any(lat <= EPSILON_MIN):
        raise InitError(
            f"init latents fall at/below {EPSILON_MIN} for M={m}, Nb={nb}, "
            f"k={k}; choose a larger k")
    return lat


def glt_init_params(channels: int, m: int, nb: int = 8,
                    k: float | None = None) -> ThermoParams:
    lat = glt_init(m, nb, k)
    return ThermoParams(channels, m, np.tile(lat, (channels, 1)), adc_bits=nb)


def gamma_inverse(image: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Undo display gamma: raise normalized [0,1] values to the power gamma."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    return np.power(np.asarray(image, dtype=np.float64), gamma)


def _clamp01(image: np.ndarray) -> tuple[np.ndarray, int]:
    out_of_range = int(np.count_nonzero((image < 0) | (image > 1)))
    if out_of_range:
        warnings.warn(f"{out_of_range} pixels outside [0,1] were clamped",
                      stacklevel=3)
        image = np.clip(image, 0.0, 1.0)
    return image, out_of_range


def encode_thermometer(image: np.ndarray, thresholds: np.ndarray,
                       source: str = TAG_GLT) -> EncodedPlanes:
    """Thermometer-encode an (H, W, C) [0,1] image with per-channel thresholds.

    Plane i of channel c has bit 1 where image >= thresholds[c, i]. Output
    planes are stacked channel-major as (C*M, H, W).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    thresholds = np.atleast_2d(np.asarray(thresholds, dtype=np.float64))
    c = image.shape[2]
    if thresholds.shape[0] != c:
        raise ValueError(
            f"{thresholds.shape[0]} threshold rows for {c} channels")
    if np.any(np.diff(thresholds, axis=1) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    image, clamped = _clamp01(image)
    m = thresholds.shape[1]
    # (C, M, H, W): image >= t_i
    bits = (image.transpose(2, 0, 1)[:, None, :, :]
            >= thresholds[:, :, None, None]).astype(np.uint8)
    planes = bits.reshape(c * m, image.shape[0], image.shape[1])
    return EncodedPlanes(BitTensor.pack(planes, PLANE01), c, m, source,
                         clamped)


def encode_fixed_thermometer(image: np.ndarray, m: int,
                             nb: int = 8) -> EncodedPlanes:
    """Thermometer encoding with the fixed linear-ramp thresholds."""
    image = np.asarray(image, dtype=np.float64)
    c = 1 if image.ndim == 2 else image.shape[2]
    t = np.tile(fixed_ramp(m, nb), (c, 1))
    enc = encode_thermometer(image, t, source=TAG_FT)
    return enc


def encode_base2(image: np.ndarray, nb: int = 8) -> EncodedPlanes:
    """Base-2 fixed-point bit planes of an integer image (LSB = plane 1)."""
    image = np.asarray(image)
    if not np.issubdtype(image.dtype, np.integer):
        raise ValueError("base-2 encoding expects integer pixel values")
    if image.ndim == 2:
        image = image[:, :, None]
    if np.any(image < 0) or np.any(image > (1 << nb) - 1):
        raise ValueError(f"pixel values outside [0, {(1 << nb) - 1}]")
    c = image.shape[2]
    shifts = np.arange(nb)
    bits = ((image.transpose(2, 0, 1)[:, None, :, :]
             >> shifts[None, :, None, None]) & 1).astype(np.uint8)
    planes = bits.reshape(c * nb, image.shape[0], image.shape[1])
    return EncodedPlanes(BitTensor.pack(planes, PLANE01), c, nb, TAG_BASE2)


def surrogate_gradient(u: np.ndarray, cfg: SurrogateConfig) -> np.ndarray:
    """Clipped bell surrogate (1/m) * min((1/p)|u|^((1-p)/p), m).

    Equals exactly 1 at u = 0 (the clipped branch's limit).
    """
    u = np.abs(np.asarray(u, dtype=np.float64))
    with np.errstate(divide="ignore"):
        raw = np.where(u > 0,
                       (1.0 / cfg.p) * u ** ((1.0 - cfg.p) / cfg.p),
                       np.inf)
    return np.minimum(raw, cfg.m) / cfg.m


def glt_backward(upstream: np.ndarray, image: np.ndarray,
                 params: ThermoParams, cfg: SurrogateConfig) -> np.ndarray:
    """Gradient of the loss w.r.t. the latent thresholds.

    upstream: dL/d(bit plane), shape (C, M, H, W) or (C*M, H, W);
    image: (H, W, C) in [0,1]. Chains the surrogate Heaviside derivative
    (d bit / d t_i = -surrogate(pixel - t_i)) through the closed-form
    threshold Jacobian, then scales by beta = 2/sqrt(H*W*M) per channel
    (or cfg.beta if set). Gradients w.r.t. the image are not produced.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    m = params.planes
    upstream = np.asarray(upstream, dtype=np.float64).reshape(c, m, h, w)
    beta = cfg.beta if cfg.beta is not None else 2.0 / np.sqrt(h * w * m)
    grad = np.zeros_like(params.latent)
    for ch in range(c):
        t = thresholds_from_latent(params.latent[ch])
        u = image[:, :, ch][None, :, :] - t[:, None, None]     # (M, H, W)
        g_t = -(upstream[ch] * surrogate_gradient(u, cfg)).sum(axis=(1, 2))
        grad[ch] = beta * (g_t @ threshold_jacobian(params.latent[ch]))
    return grad


def glt_backward_batch(upstream: np.ndarray, images: np.ndarray,
                       params: ThermoParams, cfg: SurrogateConfig) -> np.ndarray:
    """Batched glt_backward: upstream (N, C, M, H, W) or (N, C*M, H, W),
    images (N, H, W, C). Equals the sum of per-image calls."""
    images = np.asarray(images, dtype=np.float64)
    n, h, w, c = images.shape
    m = params.planes
    upstream = np.asarray(upstream, dtype=np.float64).reshape(n, c, m, h, w)
    beta = cfg.beta if cfg.beta is not None else 2.0 / np.sqrt(h * w * m)
    grad = np.zeros_like(params.latent)
    for ch in range(c):
        t = thresholds_from_latent(params.latent[ch])
        u = images[:, :, :, ch][:, None, :, :] - t[None, :, None, None]
        g_t = -(upstream[:, ch] * surrogate_gradient(u, cfg)).sum(axis=(0, 2, 3))
        grad[ch] = beta * (g_t @ threshold_jacobian(params.latent[ch]))
    return grad


def quantize_thresholds(t: np.ndarray, nb: int = 8) -> np.ndarray:
    """Round thresholds in (0,1) to Nb-bit codes, ties to even.

    Collisions (equal adjacent codes) are permitted but flagged with a
    warning since the corresponding planes become duplicates.
    """
    t = np.asarray(t, dtype=np.float64)
    codes = np.rint(t * ((1 << nb) - 1)).astype(np.int64)
    codes = np.clip(codes, 0, (1 << nb) - 1)
    if np.any(np.diff(codes, axis=-1) == 0):
        warnings.warn("quantized threshold codes collide; duplicate planes",
                      stacklevel=2)
    return codes


# ---------------------------------------------------------------------------
# Threshold code table export (shared with the ADC simulator and checkpoints)

_TABLE_MAGIC = b"GLTT"


def export_threshold_table_text(codes: np.ndarray, nb: int, path) -> None:
    """Plain-text table: header line, then one line of codes per channel."""
    codes = np.atleast_2d(codes)
    with open(path, "w") as f:
        f.write(f"# threshold codes nb={nb} channels={codes.shape[0]} "
                f"planes={codes.shape[1]}\n")
        for row in codes:
            f.write(" ".join(str(int(v)) for v in row) + "\n")


def export_threshold_table(codes: np.ndarray, nb: int, path) -> None:
    """Binary table: magic, u16 version, u16 nb, u32 channels, u32 planes,
    then u32 little-endian codes row-major."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.uint32))
    with open(path, "wb") as f:
        f.write(_TABLE_MAGIC)
        f.write(struct.pack("<HHII", 1, nb, codes.shape[0], codes.shape[1]))
        f.write(codes.astype("<u4").tobytes())


def import_threshold_table(path) -> tuple[np.ndarray, int]:
    """Read a binary threshold table; returns (codes (C, M), nb)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _TABLE_MAGIC:
            raise ValueError(f"bad threshold table magic at byte 0: {magic!r}")
        version, nb, channels, planes = struct.unpack("<HHII", f.read(12))
        if version != 1:
            raise ValueError(f"unsupported threshold table version {version}")
        raw = f.read(4 * channels * planes)
        codes = np.frombuffer(raw, dtype="<u4").reshape(channels, planes)
    return codes.astype(np.int64), nb
