import math

import numpy as np
import pytest
import torch

from stemdiff.diffusion.schedule import NoiseSchedule, build_schedule, forward_sample
from stemdiff.errors import StepIndexError


@pytest.mark.parametrize("kind", ["linear", "cosine"])
@pytest.mark.parametrize("num_steps", [1, 20, 1000])
def test_schedule_is_monotone_and_bounded(kind, num_steps):
    sched = build_schedule(kind, num_steps)
    assert len(sched.alpha_bar) == num_steps
    assert np.all((sched.alpha_bar > 0) & (sched.alpha_bar < 1))
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert np.all(np.diff(sched.sigma) > 0)
    np.testing.assert_allclose(sched.sigma, np.sqrt((1 - sched.alpha_bar) / sched.alpha_bar))


def test_step_zero_is_clean_data():
    sched = build_schedule("linear", 20)
    assert sched.alpha_bar_at(0) == 1.0
    assert sched.sigma_at(0) == 0.0
    assert sched.alpha_bar_at(1) == pytest.approx(1.0 - sched.beta_at(1))


def test_linear_default_ends_near_pure_noise():
    sched = build_schedule("linear", 1000)
    assert sched.beta_at(1) == pytest.approx(1e-4)
    assert sched.beta_at(1000) == pytest.approx(0.02)
    assert sched.alpha_bar_at(1000) < 1e-3


@pytest.mark.parametrize("step", [-1, 21])
def test_out_of_range_step(step):
    sched = build_schedule("linear", 20)
    with pytest.raises(StepIndexError):
        sched.alpha_bar_at(step)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        build_schedule("linear", 0)
    with pytest.raises(ValueError):
        build_schedule("sigmoid", 10)


def test_dict_round_trip_rebuilds_arrays():
    sched = build_schedule("cosine", 50)
    rebuilt = NoiseSchedule.from_dict(sched.to_dict())
    np.testing.assert_array_equal(rebuilt.alpha_bar, sched.alpha_bar)


def test_forward_sample_at_zero_returns_input():
    sched = build_schedule("linear", 20)
    z0 = torch.randn(2, 4, 2, 8, 4)
    assert forward_sample(z0, 0, torch.randn_like(z0), sched) is z0


def test_forward_sample_per_row_steps_match_scalar_steps():
    sched = build_schedule("linear", 20)
    g = torch.Generator().manual_seed(0)
    z0 = torch.randn(3, 4, 2, 2, 2, generator=g, dtype=torch.float64)
    eps = torch.randn(3, 4, 2, 2, 2, generator=g, dtype=torch.float64)
    steps = torch.tensor([1, 7, 20])
    batched = forward_sample(z0, steps, eps, sched)
    for row, n in enumerate(steps.tolist()):
        single = forward_sample(z0[row:row + 1], n, eps[row:row + 1], sched)
        torch.testing.assert_close(batched[row:row + 1], single, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["linear", "cosine"])
def test_forward_process_moments_monte_carlo(kind):
    num_steps = 1000
    sched = build_schedule(kind, num_steps)
    g = torch.Generator().manual_seed(1234)
    z0 = torch.full((10_000, 1), 2.0, dtype=torch.float64)
    for n in (num_steps // 4, num_steps // 2, num_steps):
        eps = torch.randn(z0.shape, generator=g, dtype=torch.float64)
        z_n = forward_sample(z0, n, eps, sched)
        alpha_bar = sched.alpha_bar_at(n)
        mean, var = 2.0 * math.sqrt(alpha_bar), 1.0 - alpha_bar
        assert abs(float(z_n.mean()) - mean) < 0.05 * max(abs(mean), math.sqrt(var))
        assert float(z_n.var()) == pytest.approx(var, rel=0.05)


def test_forward_sample_is_deterministic_and_linear():
    sched = build_schedule("cosine", 50)
    g = torch.Generator().manual_seed(0)
    z0a, z0b, eps_a, eps_b = torch.randn(4, 3, 4, 2, 3, 2, generator=g, dtype=torch.float64)
    steps = torch.tensor([1, 17, 50])
    assert torch.equal(forward_sample(z0a, steps, eps_a, sched), forward_sample(z0a, steps, eps_a, sched))
    for n in (steps, 23):
        combined = forward_sample(2.0 * z0a - z0b, n, 2.0 * eps_a - eps_b, sched)
        expected = 2.0 * forward_sample(z0a, n, eps_a, sched) - forward_sample(z0b, n, eps_b, sched)
        torch.testing.assert_close(combined, expected, rtol=0, atol=1e-12)
