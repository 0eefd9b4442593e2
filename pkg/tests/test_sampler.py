import math

import pytest
import torch

from stemdiff.config.sections import SamplerConfig
from stemdiff.data.models import ConditionEmbedding, ConditionSource
from stemdiff.diffusion.sampler import (cfg_combine, ddim_step, ddpm_step, generate, inference_timesteps,
                                        posterior_mean_variance, randn_like_batch, step_pairs,
                                        training_loss)
from stemdiff.diffusion.schedule import build_schedule
from stemdiff.errors import StepIndexError, TrainingDivergedError
from stemdiff.utils.seeding import make_generator

SHAPE = (2, 4, 2, 4, 2)


def _cond(batch=2, dim=3, value=0.5):
    return ConditionEmbedding(torch.full((batch, dim), value), torch.zeros(batch, dtype=torch.bool),
                              ConditionSource.AUDIO)


@pytest.mark.parametrize("method", ["ddim", "ddpm"])
def test_full_chain_with_oracle_recovers_clean_point(method, oracle_factory):
    sched = build_schedule("linear", 50)
    z0 = torch.linspace(-1.0, 1.0, 4, dtype=torch.float64).reshape(1, 4, 1, 1, 1)
    oracle = oracle_factory(z0, sched)
    cfg = SamplerConfig(method=method, inference_steps=10, seed=3)
    z = generate(oracle, sched, cfg, None, (3, 4, 1, 1, 1), dtype=torch.float64)
    torch.testing.assert_close(z, z0.expand_as(z), rtol=0, atol=1e-5)


def test_posterior_mean_matches_closed_form():
    sched = build_schedule("linear", 100)
    g = make_generator(0)
    z_n = torch.randn(SHAPE, generator=g, dtype=torch.float64)
    eps = torch.randn(SHAPE, generator=g, dtype=torch.float64)
    for n in (2, 37, 100):
        mean, variance = posterior_mean_variance(z_n, n, eps, sched)
        beta, alpha_bar = sched.beta_at(n), sched.alpha_bar_at(n)
        expected = (z_n - beta / math.sqrt(1.0 - alpha_bar) * eps) / math.sqrt(1.0 - beta)
        torch.testing.assert_close(mean, expected, rtol=0, atol=1e-6)
        assert variance == pytest.approx(beta * (1 - sched.alpha_bar_at(n - 1)) / (1 - alpha_bar))


def test_last_ddpm_step_draws_no_noise():
    sched = build_schedule("linear", 20)
    z = torch.randn(SHAPE)
    eps = torch.randn(SHAPE)
    g = make_generator(5)
    state = g.get_state()
    out = ddpm_step(z, 1, eps, sched, g)
    assert torch.equal(g.get_state(), state)
    torch.testing.assert_close(out, posterior_mean_variance(z, 1, eps, sched)[0])


def test_ddim_step_rejects_bad_indices():
    sched = build_schedule("linear", 20)
    z = torch.zeros(SHAPE)
    with pytest.raises(StepIndexError):
        ddim_step(z, 5, 5, z, sched)
    with pytest.raises(StepIndexError):
        ddim_step(z, 21, 3, z, sched)


def test_inference_timesteps():
    assert inference_timesteps(1000, 1) == [1000]
    assert inference_timesteps(20, 20) == list(range(1, 21))
    steps = inference_timesteps(1000, 200)
    assert len(steps) == 200 and steps[0] == 1 and steps[-1] == 1000
    assert all(a < b for a, b in zip(steps, steps[1:]))
    with pytest.raises(ValueError):
        inference_timesteps(10, 11)


def test_step_pairs_end_at_zero():
    sched = build_schedule("linear", 20)
    ddpm = step_pairs(sched, SamplerConfig(method="ddpm"))
    assert len(ddpm) == 20 and ddpm[0] == (20, 19) and ddpm[-1] == (1, 0)
    ddim = step_pairs(sched, SamplerConfig(method="ddim", inference_steps=5))
    assert ddim[0][0] == 20 and ddim[-1] == (1, 0)


def test_cfg_combine_identities():
    eps_u, eps_c = torch.randn(SHAPE), torch.randn(SHAPE)
    assert torch.equal(cfg_combine(eps_u, eps_c, 0.0, "uncond_weighted"), eps_c)
    assert torch.equal(cfg_combine(eps_u, eps_c, 1.0, "uncond_weighted"), eps_u)
    assert torch.equal(cfg_combine(eps_u, eps_c, 0.0, "standard"), eps_u)
    torch.testing.assert_close(cfg_combine(eps_u, eps_c, 1.0, "standard"), eps_c)
    torch.testing.assert_close(cfg_combine(eps_u, eps_c, 2.0, "uncond_weighted"), 2 * eps_u - eps_c)
    with pytest.raises(ValueError):
        cfg_combine(eps_u, eps_c, 1.0, "other")


def test_denoiser_calls_per_step(shift_denoiser):
    sched = build_schedule("linear", 20)
    cfg = SamplerConfig(method="ddim", inference_steps=5)
    generate(shift_denoiser, sched, cfg, None, SHAPE)
    assert shift_denoiser.calls == 5
    shift_denoiser.calls = 0
    generate(shift_denoiser, sched, cfg, _cond(), SHAPE)
    assert shift_denoiser.calls == 10


def test_unconditional_and_conditional_calls_are_separate(oracle_factory):
    sched = build_schedule("linear", 20)
    oracle = oracle_factory(torch.zeros(1, 4, 1, 1, 1), sched)
    generate(oracle, sched, SamplerConfig(inference_steps=4), _cond(), (2, 4, 1, 1, 1))
    assert oracle.calls == [False, True] * 4


@pytest.mark.parametrize("method", ["ddim", "ddpm"])
def test_weight_one_guidance_equals_unconditional_generation(method, shift_denoiser):
    sched = build_schedule("linear", 20)
    cfg = SamplerConfig(method=method, inference_steps=5, guidance_weight=1.0, cfg_convention="uncond_weighted", seed=11)
    guided = generate(shift_denoiser, sched, cfg, _cond(), SHAPE)
    plain = generate(shift_denoiser, sched, cfg, None, SHAPE)
    assert torch.equal(guided, plain)


def test_unconditional_generation_ignores_weight(shift_denoiser):
    sched = build_schedule("linear", 20)
    a = generate(shift_denoiser, sched, SamplerConfig(guidance_weight=2.0, inference_steps=5), None, SHAPE)
    b = generate(shift_denoiser, sched, SamplerConfig(guidance_weight=7.0, inference_steps=5), None, SHAPE)
    assert torch.equal(a, b)


def test_generation_is_deterministic_under_seed(shift_denoiser):
    sched = build_schedule("linear", 20)
    cfg = SamplerConfig(method="ddpm", seed=4)
    assert torch.equal(generate(shift_denoiser, sched, cfg, None, SHAPE),
                       generate(shift_denoiser, sched, cfg, None, SHAPE))


def test_per_row_generators_match_single_draws():
    rows = randn_like_batch((3, 2, 2), [make_generator(10 + k) for k in range(3)])
    for k in range(3):
        single = randn_like_batch((1, 2, 2), make_generator(10 + k))
        assert torch.equal(rows[k], single[0])


def test_training_loss_is_finite_scalar(shift_denoiser):
    sched = build_schedule("linear", 20)
    loss = training_loss(torch.randn(SHAPE), None, shift_denoiser, sched, make_generator(0))
    assert loss.ndim == 0 and torch.isfinite(loss)


def test_training_loss_raises_on_nan():
    sched = build_schedule("linear", 20)

    def broken(z, steps, cond):
        return torch.full_like(z, float("nan"))

    with pytest.raises(TrainingDivergedError):
        training_loss(torch.randn(SHAPE), None, broken, sched, make_generator(0))


def test_exact_noise_predictor_has_zero_training_loss(oracle_factory):
    sched = build_schedule("linear", 20)
    z0 = torch.randn(SHAPE, generator=make_generator(1), dtype=torch.float64)
    loss = training_loss(z0, None, oracle_factory(z0, sched), sched, make_generator(2))
    assert float(loss) == pytest.approx(0.0, abs=1e-12)


def test_zero_predictor_loss_is_noise_variance():
    sched = build_schedule("linear", 20)
    z0 = torch.randn(64, 4, 2, 8, 4, generator=make_generator(3))
    loss = training_loss(z0, None, lambda z, steps, cond: torch.zeros_like(z), sched, make_generator(4))
    # mean of 16384 squared standard normals: sd is sqrt(2 / 16384)
    assert abs(float(loss) - 1.0) < 3 * math.sqrt(2.0 / z0.numel())


def test_ddpm_step_spread_matches_posterior_variance():
    sched = build_schedule("linear", 100)
    n, draws = 40, 10_000
    z_n = torch.full((draws, 1, 1, 1, 1), 0.3, dtype=torch.float64)
    eps = torch.full_like(z_n, -0.2)
    out = ddpm_step(z_n, n, eps, sched, make_generator(6))
    mean, variance = posterior_mean_variance(z_n, n, eps, sched)
    assert float(out.var()) == pytest.approx(variance, rel=0.05)
    assert abs(float(out.mean() - mean.mean())) < 4 * math.sqrt(variance / draws)


def test_ddim_uses_exactly_the_requested_steps(shift_denoiser):
    sched = build_schedule("linear", 1000)
    cfg = SamplerConfig(method="ddim", inference_steps=200)
    generate(shift_denoiser, sched, cfg, None, SHAPE)
    assert shift_denoiser.calls == 200
    shift_denoiser.calls = 0
    generate(shift_denoiser, sched, cfg, _cond(), SHAPE)
    assert shift_denoiser.calls == 400
