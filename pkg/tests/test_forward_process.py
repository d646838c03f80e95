"""Forward noising: construction, Monte-Carlo moments, chain consistency."""

import numpy as np
import pytest

from segdiff.forward_process import sample_xt
from segdiff.schedule import make_schedule
from segdiff.tensor import Tensor


def test_given_epsilon_is_deterministic_construction(rng):
    sched = make_schedule(25)
    x0 = rng.standard_normal((2, 1, 4, 4))
    eps = rng.standard_normal((2, 1, 4, 4))
    out = sample_xt(Tensor(x0), 10, sched, rng, epsilon=eps)
    expected = np.sqrt(sched.alpha_bar[10]) * x0 + np.sqrt(1 - sched.alpha_bar[10]) * eps
    np.testing.assert_allclose(out.x_t.data, expected, atol=1e-15)
    np.testing.assert_array_equal(out.epsilon.data, eps)


def test_zero_noise_pure_scaling(rng):
    sched = make_schedule(25)
    x0 = rng.standard_normal((1, 1, 3, 3))
    out = sample_xt(Tensor(x0), 25, sched, rng, epsilon=np.zeros_like(x0))
    np.testing.assert_allclose(out.x_t.data, np.sqrt(sched.alpha_bar[25]) * x0, atol=1e-15)


def test_per_element_timesteps(rng):
    sched = make_schedule(25)
    x0 = rng.standard_normal((3, 1, 2, 2))
    eps = rng.standard_normal((3, 1, 2, 2))
    t = np.array([1, 13, 25])
    out = sample_xt(Tensor(x0), t, sched, rng, epsilon=eps)
    for i, ti in enumerate(t):
        expected = (
            np.sqrt(sched.alpha_bar[ti]) * x0[i]
            + np.sqrt(1 - sched.alpha_bar[ti]) * eps[i]
        )
        np.testing.assert_allclose(out.x_t.data[i], expected, atol=1e-15)


@pytest.mark.parametrize("T", [25, 100])
def test_monte_carlo_moments(T):
    sched = make_schedule(T)
    n = 10_000
    x0_value = 0.7
    for t in (1, T // 2, T):
        gen = np.random.default_rng(123 + t)
        x0 = Tensor(np.full((n, 1, 1, 1), x0_value))
        out = sample_xt(x0, t, sched, gen)
        draws = out.x_t.data.ravel()
        mean_expected = np.sqrt(sched.alpha_bar[t]) * x0_value
        var_expected = 1 - sched.alpha_bar[t]
        se_mean = np.sqrt(var_expected / n)
        assert abs(draws.mean() - mean_expected) < 3 * se_mean
        assert abs(draws.var() - var_expected) < 0.05 * max(var_expected, 1e-3)


def test_direct_jump_matches_step_by_step_chain_in_distribution():
    """Single-pixel check: iterating x_t = sqrt(1-b_t) x + sqrt(b_t) e for t
    steps must produce the same mean/variance as the closed-form jump."""
    T = 25
    sched = make_schedule(T)
    n = 20_000
    x0_value = -0.4
    gen = np.random.default_rng(9)
    x = np.full(n, x0_value)
    for t in range(1, T + 1):
        e = gen.standard_normal(n)
        x = np.sqrt(1 - sched.beta[t]) * x + np.sqrt(sched.beta[t]) * e
    mean_expected = np.sqrt(sched.alpha_bar[T]) * x0_value
    var_expected = 1 - sched.alpha_bar[T]
    assert abs(x.mean() - mean_expected) < 3 * np.sqrt(var_expected / n)
    assert abs(x.var() - var_expected) < 0.05 * var_expected

    direct = sample_xt(
        Tensor(np.full((n, 1, 1, 1), x0_value)), T, sched, np.random.default_rng(10)
    ).x_t.data.ravel()
    assert abs(direct.mean() - x.mean()) < 4 * np.sqrt(var_expected / n)
    assert abs(direct.var() - x.var()) < 0.05 * var_expected


def test_same_seed_same_draws(rng):
    sched = make_schedule(25)
    x0 = rng.standard_normal((2, 1, 4, 4))
    a = sample_xt(Tensor(x0), 7, sched, np.random.default_rng(5))
    b = sample_xt(Tensor(x0), 7, sched, np.random.default_rng(5))
    np.testing.assert_array_equal(a.x_t.data, b.x_t.data)
    np.testing.assert_array_equal(a.epsilon.data, b.epsilon.data)


def test_t1_stays_close_to_x0(rng):
    sched = make_schedule(100)
    x0 = rng.standard_normal((4, 1, 8, 8))
    out = sample_xt(Tensor(x0), 1, sched, rng)
    # At t=1 the noise contribution has variance beta_1 = 1e-4.
    assert np.max(np.abs(out.x_t.data - x0)) < 0.1
