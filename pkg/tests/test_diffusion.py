import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsnr.diffusion import (
    LossConfig,
    NoiseMode,
    Parameterization,
    alpha_bar_at,
    forward_diffuse,
    posterior,
    prediction_target,
    sample_noise,
    to_x0_eps,
    training_loss,
    v_target,
)
from zsnr.errors import InvalidArgumentError, SingularParameterizationError
from zsnr.schedule import NoiseSchedule, make_schedule

# Plain-python transcription of the closed forms, scaled-linear T=1000, t=500.
X0 = np.array([0.3, -0.7, 0.1])
EPS = np.array([1.2, -0.4, 0.05])
XT_500 = np.array([1.1779633461439412, -0.7088206615906095, 0.09518937880040874])
V_500 = np.array([0.37736236582543486, 0.38415266457783503, -0.05864283556916647])
OUT = np.array([0.25, -0.5, 0.75])
V_X0_500 = np.array([0.4082453001563022, 0.051441526238588, -0.5872657074806572])
V_EPS_500 = np.array([1.1328872052234156, -0.8658986659396087, 0.47610923815197165])
E_X0_500 = np.array([1.8322418845886814, -0.5387113805696124, -1.0290203360127126])


def quarter_schedule():
    # alpha_bar_1 = 0.25
    return NoiseSchedule(np.array([0.75, 0.5]))


def test_fixture_t500(sl):
    assert sl.alpha_bar(500) == pytest.approx(0.27766965045646774, rel=1e-13)
    np.testing.assert_allclose(forward_diffuse(X0, EPS, 500, sl), XT_500, rtol=1e-13)
    np.testing.assert_allclose(v_target(X0, EPS, 500, sl), V_500, rtol=1e-13)
    r = to_x0_eps(OUT, XT_500, 500, sl, "v")
    np.testing.assert_allclose(r.x0_pred, V_X0_500, rtol=1e-12)
    np.testing.assert_allclose(r.eps_pred, V_EPS_500, rtol=1e-12)
    r = to_x0_eps(OUT, XT_500, 500, sl, "epsilon")
    np.testing.assert_allclose(r.x0_pred, E_X0_500, rtol=1e-12)
    np.testing.assert_array_equal(r.eps_pred, OUT)


def test_eq10_coefficients(sl):
    x0 = np.array([1.0, 0.0])
    eps = np.array([0.0, 1.0])
    out = forward_diffuse(x0, eps, 1000, sl)
    assert round(out[0], 6) == 0.068265
    assert round(out[1], 6) == 0.997667


def test_zero_snr_limits(sl_zero, rng):
    x0 = rng.standard_normal(5)
    eps = rng.standard_normal(5)
    np.testing.assert_array_equal(forward_diffuse(x0, eps, 1000, sl_zero), eps)
    np.testing.assert_array_equal(v_target(x0, eps, 1000, sl_zero), -x0)
    out = rng.standard_normal(5)
    xt = rng.standard_normal(5)
    r = to_x0_eps(out, xt, 1000, sl_zero, "v")
    np.testing.assert_array_equal(r.x0_pred, -out)
    np.testing.assert_array_equal(r.eps_pred, xt)
    with pytest.raises(SingularParameterizationError):
        to_x0_eps(out, xt, 1000, sl_zero, "epsilon")


def test_quarter_v_target():
    s = quarter_schedule()
    x0 = np.array([1.0, -2.0])
    eps = np.array([0.5, 3.0])
    np.testing.assert_allclose(v_target(x0, eps, 1, s), 0.5 * eps - math.sqrt(0.75) * x0, rtol=1e-15)


def test_shape_mismatch(sl):
    with pytest.raises(InvalidArgumentError):
        forward_diffuse(np.zeros(3), np.zeros(4), 1, sl)
    with pytest.raises(InvalidArgumentError):
        v_target(np.zeros((2, 3)), np.zeros((3, 2)), 1, sl)


def test_alpha_bar_at_zero_is_one(sl):
    np.testing.assert_array_equal(alpha_bar_at(sl, [0, 1]), [1.0, sl.alphas_bar[0]])
    with pytest.raises(InvalidArgumentError):
        alpha_bar_at(sl, 1001)


def test_per_sample_timesteps(sl, rng):
    x0 = rng.standard_normal((3, 4))
    eps = rng.standard_normal((3, 4))
    t = np.array([1, 500, 1000])
    batched = forward_diffuse(x0, eps, t, sl)
    for i in range(3):
        np.testing.assert_array_equal(batched[i], forward_diffuse(x0[i], eps[i], int(t[i]), sl))


@pytest.mark.parametrize("rescaled", [False, True])
def test_identities_randomized(rescaled, sl, sl_zero):
    sched = sl_zero if rescaled else sl
    rng = np.random.default_rng(7)
    t = rng.integers(1, 1001, size=1000)
    x0 = rng.standard_normal((1000, 8))
    eps = rng.standard_normal((1000, 8))
    xt = forward_diffuse(x0, eps, t, sched)
    v = v_target(x0, eps, t, sched)
    r = to_x0_eps(v, xt, t, sched, "v")
    np.testing.assert_allclose(r.x0_pred, x0, atol=1e-10)
    np.testing.assert_allclose(r.eps_pred, eps, atol=1e-10)
    np.testing.assert_allclose(forward_diffuse(r.x0_pred, r.eps_pred, t, sched), xt, atol=1e-10)
    np.testing.assert_allclose(x0**2 + eps**2, xt**2 + v**2, atol=1e-10)
    if not rescaled:
        # large x0 errors are expected where sqrt(alpha_bar) is small; compare on x_t
        r = to_x0_eps(eps, xt, t, sched, "epsilon")
        np.testing.assert_allclose(forward_diffuse(r.x0_pred, r.eps_pred, t, sched), xt, atol=1e-10)
        np.testing.assert_allclose(r.x0_pred, x0, rtol=1e-10, atol=1e-10 / sched.sqrt_alphas_bar[-1])


def test_loss_fixture(sl):
    x0 = np.array([[0.5, -0.5, 0.25, -0.25]])
    eps = np.array([[1.0, 0.0, -1.0, 0.5]])
    out = np.array([[0.1, 0.2, 0.3, 0.4]])
    t = np.array([500])
    assert training_loss(out, x0, eps, t, sl, "v") == pytest.approx(0.2841914413947275, rel=1e-13)
    assert training_loss(out, x0, eps, t, sl, "epsilon") == pytest.approx(0.6375, rel=1e-14)
    doubled = training_loss(out, x0, eps, t, sl, "epsilon", LossConfig.constant(2.0))
    assert doubled == pytest.approx(1.275, rel=1e-14)


def test_loss_zero_at_target(sl, rng):
    x0 = rng.standard_normal((4, 6))
    eps = rng.standard_normal((4, 6))
    t = np.array([1, 10, 100, 1000])
    for p in Parameterization:
        assert training_loss(prediction_target(x0, eps, t, sl, p), x0, eps, t, sl, p) == 0.0


def test_loss_weights_validated():
    with pytest.raises(InvalidArgumentError):
        LossConfig(lambda t: -np.ones(np.shape(t))).weights(np.array([1]))
    with pytest.raises(InvalidArgumentError):
        LossConfig.constant(0.0)


def test_posterior_matches_eps_form(linear, rng):
    t = 500
    x0 = rng.standard_normal(6)
    eps = rng.standard_normal(6)
    xt = forward_diffuse(x0, eps, t, linear)
    mean, var = posterior(x0, xt, t, linear)
    alpha = linear.alphas[t - 1]
    beta = linear.betas[t - 1]
    ab = linear.alphas_bar[t - 1]
    eps_form = (xt - beta / math.sqrt(1 - ab) * eps) / math.sqrt(alpha)
    np.testing.assert_allclose(mean, eps_form, atol=1e-10)
    assert var == pytest.approx((1 - linear.alphas_bar[t - 2]) / (1 - ab) * beta, rel=1e-12)


def test_posterior_variance_all_t(sl):
    ab = sl.alphas_bar
    for t in range(2, 1001):
        _, var = posterior(np.zeros(1), np.zeros(1), t, sl)
        expected = (1 - ab[t - 2]) / (1 - ab[t - 1]) * sl.betas[t - 1]
        assert abs(var - expected) <= 1e-12


def test_posterior_boundaries(sl, sl_zero, rng):
    x0 = rng.standard_normal(4)
    xt = rng.standard_normal(4)
    mean, var = posterior(x0, xt, 1, sl)
    np.testing.assert_array_equal(mean, x0)
    assert var == 0.0
    # alpha_T == 0 on the rescaled schedule
    mean, var = posterior(x0, xt, 1000, sl_zero)
    np.testing.assert_allclose(mean, math.sqrt(sl_zero.alpha_bar(999)) * x0, atol=1e-15)
    assert var == pytest.approx(1 - sl_zero.alpha_bar(999), rel=1e-14)
    with pytest.raises(InvalidArgumentError):
        posterior(x0, xt, 10, sl, t_prev=10)


def test_iid_noise_moments():
    x = sample_noise((1000, 1000), NoiseMode("iid"), np.random.default_rng(0))
    assert abs(x.mean()) <= 4 / math.sqrt(x.size)
    assert abs(x.var() - 1) <= 0.02


def test_offset_noise_channel_mean():
    rng = np.random.default_rng(5)
    x = sample_noise((1, 1, 10_000), NoiseMode("offset", 0.1), rng)
    delta = np.random.default_rng(5)
    delta.standard_normal((1, 1, 10_000))
    shift = 0.1 * delta.standard_normal((1, 1))[0, 0]
    assert abs(x.mean() - shift) <= 4 / math.sqrt(10_000)


def test_offset_noise_leakage():
    x = sample_noise((1, 1000, 256), NoiseMode("offset", 0.1), np.random.default_rng(9))
    means = x.mean(axis=2).ravel()
    expected = math.sqrt(0.1**2 + 1 / 256)
    assert abs(means.std() - expected) <= 0.2 * expected


def test_offset_needs_channel_axis():
    with pytest.raises(InvalidArgumentError):
        sample_noise((4, 16), NoiseMode("offset"), np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        NoiseMode("pink")


def test_noise_deterministic():
    a = sample_noise((3, 2, 5), NoiseMode("offset"), np.random.default_rng(42))
    b = sample_noise((3, 2, 5), NoiseMode("offset"), np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(t=st.integers(1, 1000), seed=st.integers(0, 2**32 - 1))
def test_reconstruction_property(sl, t, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(4)
    eps = rng.standard_normal(4)
    xt = forward_diffuse(x0, eps, t, sl)
    for p in Parameterization:
        out = prediction_target(x0, eps, t, sl, p)
        r = to_x0_eps(out, xt, t, sl, p)
        np.testing.assert_allclose(forward_diffuse(r.x0_pred, r.eps_pred, t, sl), xt, atol=1e-10)
