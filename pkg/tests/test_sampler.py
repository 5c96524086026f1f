import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsnr.diffusion import forward_diffuse, to_x0_eps, v_target
from zsnr.errors import DegenerateInputError, InvalidArgumentError, SingularParameterizationError
from zsnr.sampler import (
    GuidanceConfig,
    SamplerConfig,
    apply_cfg,
    ddim_step,
    ddpm_step,
    guided_output,
    rescale_cfg,
    sample,
)
from zsnr.timesteps import ZERO, select_timesteps


class Recorder:
    """Fake denoiser returning a fixed function of its inputs and counting calls."""

    def __init__(self, fn, data_dim=3, param="v"):
        self.fn = fn
        self.data_dim = data_dim
        self.param = param
        self.calls = []

    def forward(self, x, t, cond=None):
        self.calls.append((t, cond))
        return self.fn(x, t, cond)


class PointOracle:
    """Exact denoiser for data concentrated on one point ``x0``."""

    def __init__(self, x0, schedule, param):
        self.x0 = np.asarray(x0)
        self.schedule = schedule
        self.param = param
        self.data_dim = self.x0.size

    def forward(self, x, t, cond=None):
        ab = self.schedule.alpha_bar(t)
        x0 = np.broadcast_to(self.x0, x.shape)
        if ab == 0.0:
            return -x0 if self.param == "v" else x
        eps = (x - math.sqrt(ab) * x0) / math.sqrt(1 - ab)
        return v_target(x0, eps, t, self.schedule) if self.param == "v" else eps


def test_cfg_examples():
    pos = np.array([1.0, 2.0])
    neg = np.array([-1.0, 0.5])
    np.testing.assert_array_equal(apply_cfg(pos, neg, 1.0), pos)
    np.testing.assert_array_equal(apply_cfg(pos, neg, 0.0), neg)
    assert apply_cfg(1.0, 0.0, 7.5) == 7.5
    with pytest.raises(InvalidArgumentError):
        apply_cfg(np.zeros(2), np.zeros(3), 2.0)


@given(
    w1=st.floats(-20, 20),
    w2=st.floats(-20, 20),
    seed=st.integers(0, 2**31),
)
def test_cfg_affine_in_w(w1, w2, seed):
    rng = np.random.default_rng(seed)
    pos, neg = rng.standard_normal((2, 2, 5))
    lhs = apply_cfg(pos, neg, w1) + apply_cfg(pos, neg, w2)
    rhs = 2 * apply_cfg(pos, neg, (w1 + w2) / 2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-11)


def test_rescale_examples():
    pos = np.array([1.0, -1.0])
    cfg = np.array([2.0, -2.0])
    np.testing.assert_allclose(rescale_cfg(cfg, pos, 1.0), [1.0, -1.0], rtol=1e-15)
    np.testing.assert_allclose(rescale_cfg(cfg, pos, 0.5), [1.5, -1.5], rtol=1e-15)
    np.testing.assert_array_equal(rescale_cfg(cfg, pos, 0.0), cfg)


def test_rescale_restores_std(rng):
    pos = rng.standard_normal((8, 2, 16)) * rng.uniform(0.1, 3.0, size=(8, 1, 1))
    cfg = apply_cfg(pos, rng.standard_normal(pos.shape), 7.5)
    out = rescale_cfg(cfg, pos, 1.0)
    std_out = out.reshape(8, -1).std(axis=1)
    std_pos = pos.reshape(8, -1).std(axis=1)
    np.testing.assert_allclose(std_out, std_pos, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(rescale_cfg(cfg, pos, 0.0), cfg)


def test_rescale_degenerate():
    with pytest.raises(DegenerateInputError):
        rescale_cfg(np.ones((2, 4)), np.zeros((2, 4)), 0.7)
    with pytest.raises(InvalidArgumentError):
        rescale_cfg(np.ones(3), np.ones(3), 1.5)
    with pytest.raises(InvalidArgumentError):
        GuidanceConfig(7.5, -0.1)


def test_ddim_to_zero_returns_x0(sl, rng):
    xt = rng.standard_normal(4)
    out = rng.standard_normal(4)
    r = to_x0_eps(out, xt, 10, sl, "v")
    np.testing.assert_array_equal(ddim_step(xt, out, 10, ZERO, sl, "v"), r.x0_pred)


def test_ddim_at_zero_snr_ignores_x_t(sl_zero, rng):
    out = rng.standard_normal(4)
    a = ddim_step(rng.standard_normal(4), out, 1000, ZERO, sl_zero, "v")
    b = ddim_step(100 * rng.standard_normal(4), out, 1000, ZERO, sl_zero, "v")
    np.testing.assert_array_equal(a, -out)
    np.testing.assert_array_equal(b, -out)


def test_ddim_order_checked(sl):
    with pytest.raises(InvalidArgumentError):
        ddim_step(np.zeros(2), np.zeros(2), 10, 10, sl, "v")


@pytest.mark.parametrize("param", ["v", "epsilon"])
def test_ddim_exact_model_consistency(param, sl, sl_zero):
    sched = sl_zero if param == "v" else sl
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        t = int(rng.integers(1, 1001))
        t_prev = int(rng.integers(0, t))
        x0 = rng.standard_normal(4)
        eps = rng.standard_normal(4)
        xt = forward_diffuse(x0, eps, t, sched)
        out = v_target(x0, eps, t, sched) if param == "v" else eps
        if param == "epsilon" and sched.alpha_bar(t) == 0:
            continue
        got = ddim_step(xt, out, t, t_prev, sched, param)
        want = x0 if t_prev == ZERO else forward_diffuse(x0, eps, t_prev, sched)
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst <= 1e-10


def test_ddim_deterministic(sl, rng):
    xt = rng.standard_normal((2, 3))
    out = rng.standard_normal((2, 3))
    assert ddim_step(xt, out, 700, 300, sl, "v").tobytes() == ddim_step(xt, out, 700, 300, sl, "v").tobytes()


def test_ddpm_fixture(linear):
    xt = np.array([[0.4, -1.1]])
    x0p = np.array([[0.2, -0.6]])
    a = linear.sqrt_alphas_bar[499]
    s = linear.sqrt_one_minus_alphas_bar[499]
    eps_out = (xt - a * x0p) / s
    got = ddpm_step(xt, eps_out, 500, linear, "epsilon", np.random.default_rng(11))
    np.testing.assert_allclose(got, [[0.4016813154786545, -0.9591716154743102]], rtol=1e-12)


def test_ddpm_boundaries(sl, sl_zero, rng):
    xt = rng.standard_normal(3)
    out = rng.standard_normal(3)
    x0 = to_x0_eps(out, xt, 1, sl, "v").x0_pred
    np.testing.assert_array_equal(ddpm_step(xt, out, 1, sl, "v", rng), x0)
    # zero-terminal t = T: mean is sqrt(abar_{T-1}) * x0_pred, x0_pred = -out
    draws = np.random.default_rng(0)
    got = ddpm_step(xt, out, 1000, sl_zero, "v", draws)
    noise = np.random.default_rng(0).standard_normal(3)
    expected = math.sqrt(sl_zero.alpha_bar(999)) * -out + math.sqrt(1 - sl_zero.alpha_bar(999)) * noise
    np.testing.assert_allclose(got, expected, atol=1e-14)


def test_single_step_sample_at_zero_snr(sl_zero):
    model = Recorder(lambda x, t, c: np.full_like(x, 0.25))
    plan = select_timesteps("trailing", 1000, 1)
    out = sample(model, sl_zero, SamplerConfig(plan, guidance=GuidanceConfig(3.0, 0.0)), cond=1, n=2,
                 rng=np.random.default_rng(0))
    np.testing.assert_array_equal(out, np.full((2, 3), -0.25))
    assert model.calls == [(1000, 1), (1000, None)]


def test_unguided_single_call_per_step(sl_zero):
    model = Recorder(lambda x, t, c: np.zeros_like(x))
    plan = select_timesteps("trailing", 1000, 5)
    sample(model, sl_zero, SamplerConfig(plan), n=1, rng=np.random.default_rng(0))
    assert [t for t, _ in model.calls] == [1000, 800, 600, 400, 200]


def test_guided_output_rescale_only_when_phi(rng):
    model = Recorder(lambda x, t, c: x * (2.0 if c is not None else 1.0))
    x = rng.standard_normal((2, 3))
    np.testing.assert_allclose(guided_output(model, x, 5, 0, GuidanceConfig(3.0, 0.0)), 4.0 * x)
    np.testing.assert_allclose(guided_output(model, x, 5, 0, GuidanceConfig(3.0, 1.0)), 2.0 * x, atol=1e-14)


def test_epsilon_refused_on_zero_terminal(sl_zero):
    model = Recorder(lambda x, t, c: x, param="epsilon")
    with pytest.raises(SingularParameterizationError):
        sample(model, sl_zero, SamplerConfig(select_timesteps("trailing", 1000, 5)))
    # leading never visits T, so the singular step is avoided
    sample(model, sl_zero, SamplerConfig(select_timesteps("leading", 1000, 5)), rng=np.random.default_rng(0))


def test_plan_must_match_schedule(sl):
    model = Recorder(lambda x, t, c: x)
    with pytest.raises(InvalidArgumentError):
        sample(model, sl, SamplerConfig(select_timesteps("trailing", 500, 5)))
    with pytest.raises(InvalidArgumentError):
        SamplerConfig(select_timesteps("trailing", 500, 5), method="euler")


@pytest.mark.parametrize("strategy", ["leading", "linspace", "trailing"])
def test_oracle_ddim_recovers_point(strategy, sl, sl_zero):
    target = np.array([0.5, -0.25, 0.8])
    for sched, param in ((sl, "epsilon"), (sl_zero, "v")):
        if param == "epsilon" and strategy != "leading":
            continue
        model = PointOracle(target, sched, param)
        plan = select_timesteps(strategy, 1000, 10)
        out = sample(model, sched, SamplerConfig(plan), n=4, rng=np.random.default_rng(1))
        np.testing.assert_allclose(out, np.broadcast_to(target, (4, 3)), atol=1e-10)


def test_trajectory_and_determinism(sl_zero):
    model = PointOracle(np.zeros(3), sl_zero, "v")
    cfg = SamplerConfig(select_timesteps("trailing", 1000, 4), method="ddpm")
    a, traj = sample(model, sl_zero, cfg, n=2, rng=np.random.default_rng(8), return_trajectory=True)
    b = sample(model, sl_zero, cfg, n=2, rng=np.random.default_rng(8))
    assert len(traj) == 5
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), phi=st.floats(0.0, 1.0))
def test_rescale_blend_property(seed, phi):
    rng = np.random.default_rng(seed)
    pos = rng.standard_normal((3, 7))
    cfg = rng.standard_normal((3, 7)) * 4
    full = rescale_cfg(cfg, pos, 1.0)
    np.testing.assert_allclose(rescale_cfg(cfg, pos, phi), phi * full + (1 - phi) * cfg, atol=1e-12)
