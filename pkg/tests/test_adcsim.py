"""Ramp-ADC behavioral simulation against the software encoder."""

import numpy as np
import pytest

from bnnkit.adcsim import ConversionReport, RampADC, convert_frame, convert_pixel
from bnnkit.encoders import (
    encode_thermometer,
    fixed_ramp,
    glt_init_params,
    quantize_thresholds,
)


def make_adc(channels=3, m=8, nb=8, **kw):
    codes = quantize_thresholds(glt_init_params(channels, m, nb).thresholds(),
                                nb)
    return RampADC(nb=nb, codes=codes, **kw)


class TestRampADC:
    def test_dac_voltages(self):
        adc = RampADC(nb=8, codes=np.array([[0, 51, 255]]))
        v = adc.dac_voltages()[0]
        assert np.allclose(v, [0.0, 51 / 255, 1.0])

    def test_voltage_span(self):
        adc = RampADC(nb=8, codes=np.array([[0, 255]]), vmin=-1.0, vmax=3.0)
        assert np.allclose(adc.dac_voltages()[0], [-1.0, 3.0])

    def test_decreasing_codes_rejected(self):
        with pytest.raises(ValueError):
            RampADC(nb=8, codes=np.array([[10, 5]]))

    def test_out_of_range_codes_rejected(self):
        with pytest.raises(ValueError):
            RampADC(nb=8, codes=np.array([[0, 300]]))


class TestConvertPixel:
    def test_thermometer_code(self):
        adc = RampADC(nb=8, codes=np.array([[64, 128, 192]]))
        assert convert_pixel(0.6, adc).tolist() == [1, 1, 0]
        assert convert_pixel(0.0, adc).tolist() == [0, 0, 0]
        assert convert_pixel(1.0, adc).tolist() == [1, 1, 1]

    def test_comparison_count(self):
        adc = make_adc(channels=1, m=8)
        rep = ConversionReport()
        convert_pixel(0.5, adc, report=rep)
        assert rep.comparisons == 8

    def test_flip_injection_counted(self):
        adc = RampADC(nb=8, codes=np.array([[64, 128, 192]]))
        rep = ConversionReport()
        flips = np.array([1, 0, 1])
        got = convert_pixel(0.6, adc, flips=flips, report=rep)
        assert got.tolist() == [0, 1, 1]
        assert rep.bit_flips == 2


class TestNoiselessEquivalence:
    def test_matches_software_encoder_exactly(self):
        # 10k random pixels per channel against the encoder evaluated at the
        # quantized threshold voltages
        rng = np.random.default_rng(0)
        m, nb, c = 8, 8, 3
        adc = make_adc(channels=c, m=m, nb=nb)
        img = rng.random((100, 100, c))
        enc, rep = convert_frame(img, adc, seed=0)
        t_q = adc.dac_voltages()
        want = encode_thermometer(img, t_q)
        assert np.array_equal(enc.planes.bits(), want.planes.bits())
        assert rep.bit_flips == 0
        assert rep.thermometric_violations == 0
        assert rep.comparisons == 100 * 100 * c * m

    def test_plane_order_matches_encoder(self):
        adc = make_adc(channels=2, m=4)
        img = np.random.default_rng(1).random((5, 7, 2))
        enc, _ = convert_frame(img, adc)
        want = encode_thermometer(img, adc.dac_voltages())
        assert enc.planes.shape == want.planes.shape == (8, 5, 7)
        assert np.array_equal(enc.planes.bits(), want.planes.bits())


class TestNoise:
    def test_seed_determinism(self):
        adc = make_adc(channels=1, m=8, noise_sigma=0.05, flip_prob=0.01)
        img = np.random.default_rng(2).random((16, 16, 1))
        a, ra = convert_frame(img, adc, seed=123)
        b, rb = convert_frame(img, adc, seed=123)
        assert np.array_equal(a.planes.bits(), b.planes.bits())
        assert ra.bit_flips == rb.bit_flips

    def test_different_seeds_differ(self):
        adc = make_adc(channels=1, m=8, noise_sigma=0.2)
        img = np.full((32, 32, 1), 0.5)
        a, _ = convert_frame(img, adc, seed=1)
        b, _ = convert_frame(img, adc, seed=2)
        assert not np.array_equal(a.planes.bits(), b.planes.bits())

    def test_violations_counted_under_flips(self):
        adc = make_adc(channels=1, m=8, flip_prob=0.3)
        img = np.random.default_rng(3).random((32, 32, 1))
        _, rep = convert_frame(img, adc, seed=7)
        assert rep.bit_flips > 0
        assert rep.thermometric_violations > 0

    def test_noiseless_never_violates(self):
        adc = make_adc(channels=3, m=8)
        img = np.random.default_rng(4).random((20, 20, 3))
        _, rep = convert_frame(img, adc, seed=0)
        assert rep.thermometric_violations == 0
