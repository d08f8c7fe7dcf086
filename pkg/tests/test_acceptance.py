"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with `pytest tests/test_acceptance.py -v -s`.

Criteria 1-7 are exact/numeric and finish in seconds. Criteria 8-10 train
networks on the synthetic desk-scale dataset and dominate the runtime
(roughly 45 minutes total on a desktop CPU).
"""

import contextlib

import numpy as np
import pytest
import yaml

from bnnkit import adcsim, dataio, topology
from bnnkit.bitcore import BitTensor, bin_conv2d, popcount_linear, xnor_dot
from bnnkit.checkpoint import checkpoint_hash
from bnnkit.cli import main as cli_main
from bnnkit.encoders import (
    EPSILON_MIN,
    SurrogateConfig,
    ThermoParams,
    encode_thermometer,
    glt_init,
    surrogate_gradient,
    threshold_jacobian,
    thresholds_from_latent,
)
from bnnkit.layers import Model
from bnnkit.losses import distributional_loss
from bnnkit.optim import AdamOpt, ScheduleConfig
from bnnkit.pruning import (
    measure_model,
    prune_gradual,
    prune_oneshot_depth,
    train_from_scratch,
)
from bnnkit.train import (
    LossConfig,
    TrainConfig,
    evaluate,
    pretrain_then_binarize,
)


@contextlib.contextmanager
def criterion(name):
    """Print exactly one PASS/FAIL line per acceptance criterion."""
    try:
        yield
    except BaseException:
        print(f"FAIL {name}")
        raise
    print(f"PASS {name}")


# --------------------------------------------------------------------------
# shared desk-scale fixtures (criteria 8 and 9)

SEEDS = (0, 1, 2)
EP_PRE, EP_BIN = 3, 5


@pytest.fixture(scope="module")
def desk_dataset():
    """10-class 32x32 synthetic set: 5000 train / 1000 test."""
    ds = dataio.make_synthetic(10, 6000, 32, seed=7)
    assert len(ds.subset("train")) == 5000
    assert len(ds.subset("test")) == 1000
    return ds


def _two_stage(cfg, ds, seed):
    model, _, _ = pretrain_then_binarize(
        cfg, ds,
        TrainConfig(epochs=EP_PRE, batch_size=64, seed=seed),
        TrainConfig(epochs=EP_BIN, batch_size=64, seed=seed + 100),
        seed=seed)
    test = ds.subset("test")
    return model, evaluate(model, test.normalize(), test.labels, "binary")


@pytest.fixture(scope="module")
def glt_models(desk_dataset):
    """Learned-thermometer models per seed; reused as pruning teachers."""
    out = {}
    for seed in SEEDS:
        cfg = topology.reference_toy_config(gamma=2.2)
        out[seed] = _two_stage(cfg, desk_dataset, seed)
    return out


# --------------------------------------------------------------------------
# 1. kernel exactness


def _oracle_conv2d(x, w, stride, padding, groups, pad_value=-1):
    """Float cross-correlation oracle over +-1 arrays (einsum, no bit ops)."""
    c_in, h, wd = x.shape
    c_out, c_in_g, kh, kw = w.shape
    xp = np.full((c_in, h + 2 * padding, wd + 2 * padding), pad_value,
                 dtype=np.float64)
    xp[:, padding:padding + h, padding:padding + wd] = x
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (c_in, h_out, w_out, kh, kw),
        (s[0], s[1] * stride, s[2] * stride, s[1], s[2]))
    per_g_out = c_out // groups
    out = np.empty((c_out, h_out, w_out))
    for g in range(groups):
        out[g * per_g_out:(g + 1) * per_g_out] = np.einsum(
            "cijhw,ochw->oij", win[g * c_in_g:(g + 1) * c_in_g],
            w[g * per_g_out:(g + 1) * per_g_out])
    return out.astype(np.int64)


class TestKernelExactness:
    def test_criterion_1(self):
        with criterion("criterion-1 kernel exactness (3000 randomized "
                       "cases, zero tolerance)"):
            rng = np.random.default_rng(11)
            for _ in range(1000):  # dot products, n <= 4096
                n = int(rng.integers(1, 4097))
                a = rng.choice([-1, 1], n).astype(np.int8)
                b = rng.choice([-1, 1], n).astype(np.int8)
                got = xnor_dot(BitTensor.pack(a), BitTensor.pack(b))
                assert got == int(a.astype(np.int64) @ b)
            for _ in range(1000):  # matrix-vector via popcounts
                n = int(rng.integers(1, 257))
                rows = int(rng.integers(1, 17))
                x = rng.choice([-1, 1], n).astype(np.int8)
                w = rng.choice([-1, 1], (rows, n)).astype(np.int8)
                got = popcount_linear(BitTensor.pack(x), BitTensor.pack(w))
                assert np.array_equal(got, w.astype(np.int64) @ x)
            for _ in range(1000):  # conv, up to 8 channels, 16x16
                c_in = int(rng.integers(1, 9))
                c_out = int(rng.integers(1, 9))
                h = int(rng.integers(3, 17))
                k = int(rng.choice([1, 3]))
                stride = int(rng.choice([1, 2]))
                padding = int(rng.choice([0, 1]))
                groups = 1
                if c_in % 2 == 0 and c_out % 2 == 0 and rng.random() < 0.3:
                    groups = 2
                x = rng.choice([-1, 1], (c_in, h, h)).astype(np.int8)
                w = rng.choice([-1, 1],
                               (c_out, c_in // groups, k, k)).astype(np.int8)
                got = bin_conv2d(BitTensor.pack(x), BitTensor.pack(w),
                                 stride=stride, padding=padding,
                                 groups=groups)
                want = _oracle_conv2d(x, w, stride, padding, groups)
                assert np.array_equal(got, want)


# --------------------------------------------------------------------------
# 2. init-equals-ramp


class TestInitEqualsRamp:
    def test_criterion_2(self):
        with criterion("criterion-2 init reproduces the fixed linear ramp "
                       "(M in {8,16,32}, 1e-12)"):
            for m in (8, 16, 32):
                t = thresholds_from_latent(glt_init(m, 8))
                s = 256.0 / m
                want = s * (np.arange(1, m + 1) - 0.5) / 255.0
                assert np.max(np.abs(t - want)) < 1e-12


# --------------------------------------------------------------------------
# 3. gradient correctness


class TestGradientCorrectness:
    def test_criterion_3(self):
        with criterion("criterion-3 threshold Jacobian vs finite "
                       "differences (<1e-5 rel) and exact surrogate values"):
            rng = np.random.default_rng(3)
            m, eps = 32, 1e-6
            worst = 0.0
            for _ in range(100):
                latent = rng.uniform(EPSILON_MIN, 3.0, m + 1)
                jac = threshold_jacobian(latent)
                fd = np.empty_like(jac)
                for j in range(m + 1):
                    hi, lo = latent.copy(), latent.copy()
                    hi[j] += eps
                    lo[j] -= eps
                    fd[:, j] = (thresholds_from_latent(hi)
                                - thresholds_from_latent(lo)) / (2 * eps)
                worst = max(worst,
                            np.max(np.abs(jac - fd)) / np.max(np.abs(fd)))
            assert worst < 1e-5
            scfg = SurrogateConfig(p=2.0, m=5.0)
            got = surrogate_gradient(np.array([0.0, 0.25, 1.0]), scfg)
            assert np.array_equal(got, [1.0, 0.2, 0.1])


# --------------------------------------------------------------------------
# 4. constraint fuzz


class TestConstraintFuzz:
    def test_criterion_4(self):
        with criterion("criterion-4 1000 optimizer steps keep latents "
                       ">= 0.05 and thresholds strictly increasing"):
            rng = np.random.default_rng(4)
            tp = ThermoParams(3, 8, glt_init(8, 8, k=0.5)[None].repeat(3, 0))
            sched = ScheduleConfig(lr_init=0.05, total_steps=1000)
            opt = AdamOpt(
                {"latent": tp.latent}, sched,
                constraints={"latent": lambda a: np.maximum(
                    a, EPSILON_MIN, out=a)})
            violations = 0
            for _ in range(1000):
                g = rng.normal(0, 1.0, tp.latent.shape)
                opt.step({"latent": g})
                if np.any(tp.latent < EPSILON_MIN):
                    violations += 1
                t = tp.thresholds()
                if np.any(np.diff(t, axis=1) <= 0):
                    violations += 1
            assert violations == 0


# --------------------------------------------------------------------------
# 5. distributional loss


class TestDistributionalLoss:
    def test_criterion_5(self):
        with criterion("criterion-5 distillation loss: zero at identity "
                       "(1e-12), 2-class reference (1e-9), non-negative"):
            rng = np.random.default_rng(5)
            z = rng.normal(0, 3, (16, 10))
            loss, _ = distributional_loss(z, z, 8.0)
            assert abs(loss) < 1e-12

            zt = np.array([[2.0, -1.0]])
            zs = np.array([[0.5, 0.25]])
            t = np.longdouble(8.0)
            pt = np.exp(zt.astype(np.longdouble) / t)
            pt /= pt.sum()
            ps = np.exp(zs.astype(np.longdouble) / t)
            ps /= ps.sum()
            want = float(t * t * (pt * np.log(pt / ps)).sum())
            loss, _ = distributional_loss(zt, zs, 8.0)
            assert abs(loss - want) < 1e-9

            for _ in range(1000):
                n = int(rng.integers(1, 9))
                c = int(rng.integers(2, 11))
                a = rng.normal(0, 4, (n, c))
                b = rng.normal(0, 4, (n, c))
                loss, _ = distributional_loss(a, b, float(rng.uniform(1, 16)))
                assert loss >= 0.0


# --------------------------------------------------------------------------
# 6. ADC equivalence


class TestAdcEquivalence:
    def test_criterion_6(self):
        with criterion("criterion-6 noiseless ramp conversion matches the "
                       "software encoder on 10,000 pixels/channel"):
            rng = np.random.default_rng(6)
            c, m = 3, 8
            codes = np.sort(rng.choice(256, (c, m), replace=False), axis=1)
            adc = adcsim.RampADC(nb=8, codes=codes)
            image = rng.random((100, 100, c))
            enc_hw, report = adcsim.convert_frame(image, adc)
            enc_sw = encode_thermometer(image, adc.dac_voltages())
            assert np.array_equal(enc_hw.planes.bits(), enc_sw.planes.bits())
            assert report.thermometric_violations == 0
            assert report.comparisons == 100 * 100 * c * m


# --------------------------------------------------------------------------
# 7. accounting


class TestAccounting:
    def test_criterion_7(self):
        with criterion("criterion-7 size/BOPs match the hand ledger; both "
                       "strictly decrease per pruning stage"):
            cfg = topology.reference_toy_config(gamma=2.2)
            size = topology.count_model_size(cfg)
            # weights: 1 bit each; stem sees 3 channels x 8 planes = 24
            hand_binary = (16 * 24 * 9            # stem 3x3
                           + 32 * 16 * 9 + 32 * 32 * 9    # block 1
                           + 64 * 32 * 9 + 64 * 64 * 9    # block 2
                           + 128 * 64 * 9 + 128 * 128 * 9  # block 3
                           + 128 * 2 * 2 * 10)    # classifier on 2x2 map
            # real params: 32 bits each; BN affine pairs + encoder latents
            hand_real = (3 * 9                    # latents, (M+1) per channel
                         + 2 * (16 + 32 + 32 + 64 + 64 + 128 + 128)) * 32
            assert size.binary_bits == hand_binary
            assert size.real_bits == hand_real

            bops = topology.count_bops(cfg)
            hand_bops = (16 * 16 * 16 * 24 * 9     # stem at stride 2
                         + 8 * 8 * 32 * 16 * 9 + 8 * 8 * 32 * 32 * 9
                         + 4 * 4 * 64 * 32 * 9 + 4 * 4 * 64 * 64 * 9
                         + 2 * 2 * 128 * 64 * 9 + 2 * 2 * 128 * 128 * 9
                         + 128 * 2 * 2 * 10)       # classifier matvec
            assert bops == hand_bops

            groups = {1: 1, 2: 2, 3: 8}
            prev_bits = size.total_bits
            prev_bops = bops
            for b in (3, 2, 1):
                cfg = topology.replace_block(cfg, b, groups[b])
                bits = topology.count_model_size(cfg).total_bits
                ops = topology.count_bops(cfg)
                assert bits < prev_bits and ops < prev_bops
                prev_bits, prev_bops = bits, ops


# --------------------------------------------------------------------------
# 8. desk-scale encoder benefit


class TestEncoderBenefit:
    def test_criterion_8(self, desk_dataset, glt_models):
        with criterion("criterion-8 learned thermometer >= fixed - 1.0 pp "
                       "(median, 3 seeds, 5k/1k)"):
            glt_acc, ft_acc = [], []
            for seed in SEEDS:
                glt_acc.append(glt_models[seed][1])
                cfg = topology.reference_toy_config(method="ft", gamma=2.2)
                _, acc = _two_stage(cfg, desk_dataset, seed)
                ft_acc.append(acc)
            print(f"  learned={glt_acc} fixed={ft_acc}")
            assert (np.median(glt_acc) >= np.median(ft_acc) - 1.0)
            wins = sum(g > f for g, f in zip(glt_acc, ft_acc))
            assert wins >= 2


# --------------------------------------------------------------------------
# 9. desk-scale pruning benefit


class TestPruningBenefit:
    def test_criterion_9(self, desk_dataset, glt_models):
        with criterion("criterion-9 gradual+distillation >= one-shot and "
                       ">= from-scratch (median, 3 seeds)"):
            groups = {1: 1, 2: 2, 3: 8}
            grad, oneshot, scratch = [], [], []
            for seed in SEEDS:
                teacher = glt_models[seed][0]
                loss_cfg = LossConfig(temperature=8.0, lam=0.5, classes=10)
                stage_cfg = TrainConfig(epochs=EP_BIN, batch_size=64,
                                        seed=seed + 200)
                stages = prune_gradual(teacher, desk_dataset, 1, groups,
                                       loss_cfg, stage_cfg, seed=seed)
                grad.append(stages[-1].metrics["accuracy"])
                one = prune_oneshot_depth(teacher, desk_dataset, 1, groups,
                                          stage_cfg, seed=seed)
                oneshot.append(one.metrics["accuracy"])
                scr = train_from_scratch(
                    stages[-1].config, desk_dataset,
                    TrainConfig(epochs=EP_PRE, batch_size=64, seed=seed),
                    TrainConfig(epochs=EP_BIN, batch_size=64,
                                seed=seed + 300), seed=seed)
                scratch.append(scr.metrics["accuracy"])
            print(f"  gradual={grad} oneshot={oneshot} scratch={scratch}")
            assert np.median(grad) >= np.median(oneshot)
            assert np.median(grad) >= np.median(scratch)


# --------------------------------------------------------------------------
# 10. training determinism


class TestDeterminism:
    def test_criterion_10(self, tmp_path):
        with criterion("criterion-10 identical seed/config -> identical "
                       "checkpoint hashes"):
            data = str(tmp_path / "data.bntd")
            assert cli_main(["make-data", "--classes", "4", "--count", "120",
                             "--size", "16", "--out", data]) == 0
            cfg = {
                "network": {
                    "version": 1,
                    "input": {"height": 16, "width": 16, "channels": 3},
                    "encoder": {"method": "glt", "planes": 4, "adc_bits": 8,
                                "gamma": 2.2},
                    "stem_channels": 8,
                    "stem_stride": 2,
                    "blocks": [
                        {"kind": "double_conv", "in_channels": 8,
                         "out_channels": 16, "stride": 2, "prunable": True,
                         "groups": 1},
                    ],
                    "classes": 4,
                },
                "pretrain": {"epochs": 2, "batch_size": 32},
                "binary": {"epochs": 2, "batch_size": 32},
            }
            cfg_path = tmp_path / "run.yaml"
            cfg_path.write_text(yaml.safe_dump(cfg))
            hashes = []
            for name in ("a.ckpt", "b.ckpt"):
                out = str(tmp_path / name)
                rc = cli_main(["--seed", "7", "train", "--config",
                               str(cfg_path), "--data", data, "--out", out])
                assert rc == 0
                hashes.append(checkpoint_hash(out))
            assert hashes[0] == hashes[1]
