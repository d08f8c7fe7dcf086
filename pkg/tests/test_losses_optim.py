"""Loss functions, schedules, and the Adam-family optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnnkit.losses import cross_entropy, distributional_loss, softmax, total_loss
from bnnkit.optim import AdamOpt, ScheduleConfig, cosine_lr

logit_rows = st.lists(
    st.lists(st.floats(-20, 20), min_size=3, max_size=3),
    min_size=1, max_size=8)


class TestCrossEntropy:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(4, 6))
        y = rng.integers(0, 6, 4)
        _, dz = cross_entropy(z, y)
        eps = 1e-6
        for i in range(4):
            for j in range(6):
                zp, zm = z.copy(), z.copy()
                zp[i, j] += eps
                zm[i, j] -= eps
                fd = (cross_entropy(zp, y)[0] - cross_entropy(zm, y)[0]) / (2 * eps)
                assert abs(dz[i, j] - fd) < 1e-8

    def test_perfect_prediction_near_zero(self):
        z = np.array([[100.0, 0.0]])
        loss, _ = cross_entropy(z, np.array([0]))
        assert loss < 1e-8


class TestDistributionalLoss:
    def test_identical_logits_zero(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(5, 10))
        loss, grad = distributional_loss(z, z, temperature=8.0)
        assert abs(loss) < 1e-12
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_two_class_reference_value(self):
        t = np.array([[2.0, 0.0]])
        s = np.array([[0.0, 2.0]])
        loss, _ = distributional_loss(t, s, temperature=8.0)
        # direct high-precision evaluation of T^2 * KL(p_t || p_s) / N
        pt = softmax(t / 8.0)[0]
        ps = softmax(s / 8.0)[0]
        want = 64.0 * float((pt * (np.log(pt) - np.log(ps))).sum())
        assert abs(loss - want) < 1e-9

    def test_gradient_direction(self):
        t = np.array([[2.0, 0.0]])
        s = np.array([[0.0, 2.0]])
        temp = 8.0
        _, grad = distributional_loss(t, s, temperature=temp)
        want = (temp / 1) * (softmax(s / temp) - softmax(t / temp))
        assert np.allclose(grad, want, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        t = rng.normal(size=(3, 5))
        s = rng.normal(size=(3, 5))
        _, g = distributional_loss(t, s, temperature=8.0)
        eps = 1e-6
        for i in range(3):
            for j in range(5):
                sp, sm = s.copy(), s.copy()
                sp[i, j] += eps
                sm[i, j] -= eps
                fd = (distributional_loss(t, sp, 8.0)[0]
                      - distributional_loss(t, sm, 8.0)[0]) / (2 * eps)
                assert abs(g[i, j] - fd) < 1e-7

    @given(logit_rows, logit_rows)
    @settings(max_examples=200, deadline=None)
    def test_non_negative(self, a, b):
        n = min(len(a), len(b))
        t = np.array(a[:n])
        s = np.array(b[:n])
        loss, _ = distributional_loss(t, s, temperature=8.0)
        assert loss >= -1e-12

    def test_total_loss_mix(self):
        assert total_loss(2.0, 4.0, 0.5) == 3.0
        assert total_loss(2.0, 4.0, 0.0) == 2.0
        assert total_loss(2.0, 4.0, 1.0) == 4.0


class TestSchedule:
    def test_endpoints_and_midpoint(self):
        sched = ScheduleConfig(1e-3, 1e-8, 100)
        assert cosine_lr(0, sched) == pytest.approx(1e-3)
        assert cosine_lr(100, sched) == pytest.approx(1e-8)
        mid = cosine_lr(50, sched)
        assert mid == pytest.approx((1e-3 + 1e-8) / 2)

    def test_monotone_decay(self):
        sched = ScheduleConfig(1e-3, 1e-8, 200)
        lrs = [cosine_lr(s, sched) for s in range(201)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


class TestAdam:
    def _quadratic(self, rectified):
        target = np.array([1.0, -2.0, 3.0])
        p = {"w": np.zeros(3)}
        opt = AdamOpt(p, ScheduleConfig(0.1, 0.01, 500), rectified=rectified)
        for _ in range(500):
            g = {"w": 2 * (p["w"] - target)}
            opt.step(g)
        return p["w"], target

    @pytest.mark.parametrize("rectified", [False, True])
    def test_converges_on_quadratic(self, rectified):
        w, target = self._quadratic(rectified)
        assert np.allclose(w, target, atol=1e-2)

    def test_rectified_warmup_is_momentum_only(self):
        # during warmup (rho_t <= 4, first few steps) the update must not be
        # divided by the adaptive second moment
        p = {"w": np.array([0.0])}
        opt = AdamOpt(p, ScheduleConfig(0.1, 0.1, 10), rectified=True)
        opt.step({"w": np.array([1e-6])})
        # non-rectified Adam would step ~lr regardless of gradient size
        assert abs(p["w"][0]) < 1e-5

    def test_constraints_applied_after_step(self):
        p = {"w": np.array([0.5])}
        opt = AdamOpt(p, ScheduleConfig(1.0, 1.0, 10), rectified=False,
                      constraints={"w": lambda a: np.clip(a, 0.4, 1.0, out=a)})
        opt.step({"w": np.array([10.0])})
        assert p["w"][0] == 0.4

    def test_lr_scales(self):
        p = {"a": np.array([0.0]), "b": np.array([0.0])}
        opt = AdamOpt(p, ScheduleConfig(0.01, 0.01, 100), rectified=False,
                      lr_scales={"b": 10.0})
        g = {"a": np.array([1.0]), "b": np.array([1.0])}
        opt.step(g)
        assert abs(p["b"][0]) == pytest.approx(10 * abs(p["a"][0]))

    def test_state_roundtrip(self):
        rng = np.random.default_rng(9)
        p = {"w": rng.normal(size=4)}
        opt = AdamOpt(p, ScheduleConfig(0.1, 0.01, 50), rectified=True)
        for _ in range(5):
            opt.step({"w": rng.normal(size=4)})
        saved = {k: v.copy() for k, v in opt.state_arrays().items()}
        p2 = {"w": p["w"].copy()}
        opt2 = AdamOpt(p2, ScheduleConfig(0.1, 0.01, 50), rectified=True)
        opt2.load_state_arrays(saved, opt.step_count)
        g = {"w": np.ones(4)}
        opt.step({k: v.copy() for k, v in g.items()})
        opt2.step(g)
        assert np.array_equal(p["w"], p2["w"])
