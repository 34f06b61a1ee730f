import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codar.diffusion import (LossWeighting, NoiseSchedule, alpha_sigma, diffusion_loss, forward_diffuse,
                             recover_x0_eps, sample_training_times, velocity_target)
from codar.tensor import Tensor

SCHED = NoiseSchedule(0.008)
# 40-digit mpmath evaluation of the cosine formula at t=0.5, s=0.008
ALPHA_05 = 0.7027400589411690235756800630046546044158
SIGMA_05 = 0.7114467018402448723825313470430972833945
# SNR(t) = alpha_bar / (1 - alpha_bar), mpmath
SNR_09 = 0.0246864636114061191063362548308978647611
SNR_02 = 8.87224530711467853246775612433000514107

times = st.floats(0.0, 1.0, allow_nan=False)


def test_endpoints_exact():
    assert alpha_sigma(SCHED, 0.0) == (1.0, 0.0)
    assert alpha_sigma(SCHED, 1.0) == (0.0, 1.0)


def test_midpoint_against_high_precision_oracle():
    a, s = alpha_sigma(SCHED, 0.5)
    assert a == pytest.approx(ALPHA_05, abs=1e-14)
    assert s == pytest.approx(SIGMA_05, abs=1e-14)


@pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9, float("nan")])
def test_time_outside_unit_interval_rejected(t):
    with pytest.raises(ValueError):
        alpha_sigma(SCHED, t)


def test_variance_preserving_over_sampled_times():
    t = np.random.default_rng(0).random(1000)
    a, s = SCHED.alpha_sigma(t)
    assert np.max(np.abs(a * a + s * s - 1)) < 1e-12


def test_alpha_monotone_on_fine_grid():
    a, _ = SCHED.alpha_sigma(np.linspace(0, 1, 10_000))
    assert np.all(np.diff(a) <= 0)


@settings(max_examples=200, deadline=None)
@given(times)
def test_log_snr_inverse(t):
    t = min(max(t, 1e-3), 1 - 1e-3)
    assert SCHED.inverse_log_snr(SCHED.log_snr(t)) == pytest.approx(t, abs=1e-9)


# -- forward process -------------------------------------------------------------------

RNG = np.random.default_rng(3)


def test_forward_zero_signal_is_scaled_noise():
    eps = RNG.standard_normal((4, 3))
    _, s = alpha_sigma(SCHED, 0.7)
    np.testing.assert_allclose(forward_diffuse(np.zeros((4, 3)), eps, 0.7), s * eps, rtol=1e-15)


def test_forward_at_zero_returns_data():
    x0, eps = RNG.standard_normal((2, 4, 3)), RNG.standard_normal((2, 4, 3))
    np.testing.assert_array_equal(forward_diffuse(x0, eps, 0.0), x0)


def test_forward_matches_elementwise_recompute():
    x0, eps = RNG.standard_normal((5, 4)), RNG.standard_normal((5, 4))
    ab = np.cos((0.3 + 0.008) / 1.008 * np.pi / 2) ** 2 / np.cos(0.008 / 1.008 * np.pi / 2) ** 2
    ref = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    np.testing.assert_allclose(forward_diffuse(x0, eps, 0.3), ref, rtol=1e-13, atol=1e-15)


def test_per_batch_times_broadcast():
    x0, eps = RNG.standard_normal((3, 4, 2)), RNG.standard_normal((3, 4, 2))
    t = np.array([0.1, 0.5, 0.9])
    out = forward_diffuse(x0, eps, t)
    for b in range(3):
        np.testing.assert_allclose(out[b], forward_diffuse(x0[b], eps[b], t[b]), rtol=1e-15)


@pytest.mark.parametrize("fn", [forward_diffuse, velocity_target, recover_x0_eps])
def test_shape_mismatch_rejected(fn):
    with pytest.raises(ValueError, match="shape"):
        fn(np.zeros((4, 3)), np.zeros((3, 4)), 0.5)


def test_velocity_endpoints_and_linearity():
    x0, eps = RNG.standard_normal((4, 3)), RNG.standard_normal((4, 3))
    np.testing.assert_array_equal(velocity_target(x0, eps, 0.0), eps)
    np.testing.assert_array_equal(velocity_target(x0, eps, 1.0), -x0)
    a, s = alpha_sigma(SCHED, 0.4)
    np.testing.assert_allclose(velocity_target(x0, x0, 0.4), (a - s) * x0, rtol=1e-14)


def test_recover_with_zero_velocity():
    x = RNG.standard_normal((4, 3))
    a, s = alpha_sigma(SCHED, 0.6)
    x0h, eh = recover_x0_eps(x, np.zeros_like(x), 0.6)
    np.testing.assert_allclose(x0h, a * x, rtol=1e-15)
    np.testing.assert_allclose(eh, s * x, rtol=1e-15)


def test_recover_matches_elementwise_recompute():
    x, v = RNG.standard_normal((6, 2)), RNG.standard_normal((6, 2))
    ab = np.cos((0.8 + 0.008) / 1.008 * np.pi / 2) ** 2 / np.cos(0.008 / 1.008 * np.pi / 2) ** 2
    a, s = np.sqrt(ab), np.sqrt(1 - ab)
    x0h, eh = recover_x0_eps(x, v, 0.8)
    np.testing.assert_allclose(x0h, a * x - s * v, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(eh, s * x + a * v, rtol=1e-12, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(times, st.integers(0, 2 ** 32 - 1))
def test_round_trip_64bit(t, seed):
    rng = np.random.default_rng(seed)
    x0, eps = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    x0h, eh = recover_x0_eps(forward_diffuse(x0, eps, t), velocity_target(x0, eps, t), t)
    np.testing.assert_allclose(x0h, x0, atol=1e-12)
    np.testing.assert_allclose(eh, eps, atol=1e-12)


# -- loss ----------------------------------------------------------------------------------

def test_loss_zero_for_perfect_prediction():
    v = RNG.standard_normal((2, 4, 3)).astype(np.float32)
    assert diffusion_loss(v, v, LossWeighting(), 0.5).item() == 0.0


def test_loss_constant_offset():
    v = RNG.standard_normal((4, 3))
    loss = diffusion_loss(Tensor(v + 0.3, dtype=np.float64), v, LossWeighting("constant"), 0.5)
    assert loss.item() == pytest.approx(0.09, rel=1e-12)


@pytest.mark.parametrize("t,w", [(0.9, SNR_09), (0.2, 5.0)])
def test_snr_weighting_closed_form(t, w):
    v = RNG.standard_normal((4, 3))
    off = RNG.standard_normal((4, 3))
    mse = float(np.mean(off ** 2))
    loss = diffusion_loss(Tensor(v + off, dtype=np.float64), v, LossWeighting("snr", 5.0), t).item()
    assert loss == pytest.approx(w * mse, rel=1e-12)
    assert SCHED.snr(0.2) == pytest.approx(SNR_02, rel=1e-12)


def test_snr_weighting_per_batch():
    v = np.zeros((2, 3, 2))
    vh = np.ones((2, 3, 2))
    t = np.array([0.9, 0.2])
    loss = diffusion_loss(Tensor(vh, dtype=np.float64), v, LossWeighting("snr"), t).item()
    assert loss == pytest.approx((SNR_09 + 5.0) / 2, rel=1e-12)


def test_weights_positive_inside_interval():
    t = np.linspace(1e-4, 1 - 1e-4, 500)
    for kind in ("constant", "snr"):
        assert np.all(LossWeighting(kind)(t) > 0)


def test_loss_rejects_non_finite():
    v = np.zeros((2, 2))
    with pytest.raises(FloatingPointError):
        diffusion_loss(np.array([[np.nan, 0], [0, 0]]), v, LossWeighting(), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), times)
def test_loss_nonnegative(seed, t):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    assert diffusion_loss(a, b, LossWeighting("snr"), min(t, 0.999)).item() >= 0


def test_training_times_in_half_open_interval():
    t = sample_training_times(np.random.default_rng(0), 100_000, 1e-4)
    assert t.min() > 1e-4 and t.max() <= 1.0
    assert abs(t.mean() - 0.50005) < 0.005
