"""Functional simulator of the programmable-slope ramp ADC.

Each pixel conversion is a sequence of exactly M comparator decisions
against the DAC voltage for each Nb-bit threshold code (voltages are
normalized reals in [0, 1]; no electrical units). The noiseless simulator
is bit-exact against the software thermometer encoder run with the same
quantized thresholds.

The comparator fires on >= (matching the software encoder's convention at
exact threshold voltage). Optional imperfections: additive Gaussian noise
on the comparator input and independent output bit flips. Noise draws come
from a counter-based Philox stream keyed by the seed, generated in a fixed
(pixel, plane) order, so results are reproducible regardless of how the
frame is parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bitcore import BitTensor, PLANE01
from .encoders import EncodedPlanes


@dataclass
class RampADC:
    nb: int                                  # DAC resolution in bits
    codes: np.ndarray                        # (channels, M) threshold codes
    vmin: float = 0.0
    vmax: float = 1.0
    noise_sigma: float = 0.0                 # comparator input noise
    flip_prob: float = 0.0                   # output bit-flip probability

    def __post_init__(self):
        self.codes = np.atleast_2d(np.asarray(self.codes, dtype=np.int64))
        hi = (1 << self.nb) - 1
        if self.codes.min() < 0 or self.codes.max() > hi:
            raise ValueError(f"codes outside [0, {hi}]")
        if np.any(np.diff(self.codes, axis=1) < 0):
            raise ValueError("code sequence must be non-decreasing")

    @property
    def channels(self) -> int:
        return self.codes.shape[0]

    @property
    def planes(self) -> int:
        return self.codes.shape[1]

    def dac_voltages(self) -> np.ndarray:
        """Normalized DAC output per code: vmin + code/(2^Nb-1)*(vmax-vmin)."""
        return self.vmin + (self.vmax - self.vmin) * (
            self.codes / ((1 << self.nb) - 1))


@dataclass
class ConversionReport:
    comparisons: int = 0
    bit_flips: int = 0
    thermometric_violations: int = 0         # pixels with a 0 before a 1


def convert_pixel(vpix: float, adc: RampADC, channel: int = 0,
                  noise: np.ndarray | None = None,
                  flips: np.ndarray | None = None,
                  report: ConversionReport | None = None) -> np.ndarray:
    """One M-comparison ramp conversion; returns the M-bit thermo code."""
    vt = adc.dac_voltages()[channel]
    v = np.full(adc.planes, vpix, dtype=np.float64)
    if noise is not None:
        v = v + noise
    bits = (v >= vt).astype(np.uint8)
    if flips is not None:
        bits = bits ^ flips.astype(np.uint8)
    if report is not None:
        report.comparisons += adc.planes
        if flips is not None:
            report.bit_flips += int(flips.sum())
    return bits


def convert_frame(image: np.ndarray, adc: RampADC,
                  seed: int = 0) -> tuple[EncodedPlanes, ConversionReport]:
    """Elementwise convert_pixel over an (H, W, C) normalized image.

    Plane ordering matches the software encoder (channel-major). Returns
    the encoded planes and a report with comparison/flip/violation counts.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    if c != adc.channels:
        raise ValueError(f"{c} image channels but {adc.channels} ADC tables")
    m = adc.planes
    report = ConversionReport()

    noisy = adc.noise_sigma > 0 or adc.flip_prob > 0
    if noisy:
        rng = np.random.Generator(np.random.Philox(key=seed))
        noise = (rng.normal(0.0, adc.noise_sigma, size=(h, w, c, m))
                 if adc.noise_sigma > 0 else np.zeros((h, w, c, m)))
        flips = (rng.random((h, w, c, m)) < adc.flip_prob)
    else:
        noise = np.zeros((h, w, c, m))
        flips = np.zeros((h, w, c, m), dtype=bool)

    vt = adc.dac_voltages()                                 # (C, M)
    v = image[:, :, :, None] + noise
    bits = (v >= vt[None, None, :, :]).astype(np.uint8) ^ flips.astype(np.uint8)
    report.comparisons = h * w * c * m
    report.bit_flips = int(flips.sum())
    # a 1 after a 0 within a pixel's column breaks the thermometric property
    report.thermometric_violations = int(
        np.any(np.diff(bits.astype(np.int8), axis=3) > 0, axis=3).sum())

    planes = bits.transpose(2, 3, 0, 1).reshape(c * m, h, w)
    enc = EncodedPlanes(BitTensor.pack(planes, PLANE01), c, m, "ADC")
    return enc, report
