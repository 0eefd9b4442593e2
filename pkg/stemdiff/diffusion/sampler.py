"""
Training objective and reverse-process sampling.

The denoiser is any callable `model(z, steps, cond) -> eps_hat` taking a
(B, ...) latent batch and a (B,) tensor of 1-based steps; UNet3D qualifies,
and so do the closed-form oracles used in tests.
"""

import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from ..config.sections import SamplerConfig
from ..data.models import ConditionEmbedding
from ..data.validation import check_same_shape
from ..errors import StepIndexError, TrainingDivergedError
from ..utils.logger import progress_disabled
from ..utils.seeding import make_generator
from .schedule import NoiseSchedule, forward_sample

logger = logging.getLogger(__name__)

Denoiser = Callable[[torch.Tensor, torch.Tensor, Optional[ConditionEmbedding]], torch.Tensor]
Generators = Union[torch.Generator, Sequence[torch.Generator]]
AfterStep = Callable[[torch.Tensor, int], torch.Tensor]


def randn_like_batch(shape: Tuple[int, ...], generator: Generators, device=None,
                     dtype=torch.float32) -> torch.Tensor:
    """
    Gaussian noise drawn on CPU from one generator, or one generator per batch row.

    Drawing on CPU keeps the random stream identical across devices.
    """
    if isinstance(generator, torch.Generator):
        noise = torch.randn(shape, generator=generator, dtype=torch.float64)
    else:
        if len(generator) != shape[0]:
            raise ValueError(f"{len(generator)} generators for batch of {shape[0]}")
        noise = torch.stack([torch.randn(shape[1:], generator=g, dtype=torch.float64) for g in generator])
    return noise.to(device=device, dtype=dtype)


def training_loss(z0: torch.Tensor, cond: Optional[ConditionEmbedding], model: Denoiser,
                  sched: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    """
    Noise-prediction MSE at one uniformly drawn step per example.

    Condition dropout is applied by the caller (see conditioning.drop_condition).

    Raises:
        TrainingDivergedError: if the loss is not finite
    """
    batch = z0.shape[0]
    steps = torch.randint(1, sched.num_steps + 1, (batch,), generator=generator).to(z0.device)
    eps = randn_like_batch(tuple(z0.shape), generator, z0.device, z0.dtype)
    z_n = forward_sample(z0, steps, eps, sched)
    loss = F.mse_loss(model(z_n, steps, cond), eps)
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"diffusion loss became {loss.item()}")
    return loss


def _predict_x0(z_n: torch.Tensor, eps_hat: torch.Tensor, alpha_bar: float) -> torch.Tensor:
    return (z_n - math.sqrt(1.0 - alpha_bar) * eps_hat) / math.sqrt(alpha_bar)


def posterior_mean_variance(z_n: torch.Tensor, n: int, eps_hat: torch.Tensor,
                            sched: NoiseSchedule) -> Tuple[torch.Tensor, float]:
    """Mean and variance of q(z_{n-1} | z_n, z0) with z0 predicted from eps_hat."""
    sched.check_step(n, allow_zero=False)
    alpha_bar = sched.alpha_bar_at(n)
    alpha_bar_prev = sched.alpha_bar_at(n - 1)
    beta = sched.beta_at(n)

    x0 = _predict_x0(z_n, eps_hat, alpha_bar)
    coef_x0 = beta * math.sqrt(alpha_bar_prev) / (1.0 - alpha_bar)
    coef_zn = (1.0 - alpha_bar_prev) * math.sqrt(1.0 - beta) / (1.0 - alpha_bar)
    variance = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return coef_x0 * x0 + coef_zn * z_n, variance


def ddpm_step(z_n: torch.Tensor, n: int, eps_hat: torch.Tensor, sched: NoiseSchedule,
              generator: Generators) -> torch.Tensor:
    """Ancestral step z_n -> z_{n-1}; the n=1 step adds no noise."""
    if int(n) < 1:
        raise StepIndexError(f"ddpm_step needs n >= 1, got {n}")
    check_same_shape(z_n, eps_hat, "ddpm_step z_n/eps_hat")
    mean, variance = posterior_mean_variance(z_n, int(n), eps_hat, sched)
    if n == 1:
        return mean
    noise = randn_like_batch(tuple(z_n.shape), generator, z_n.device, z_n.dtype)
    return mean + math.sqrt(variance) * noise


def ddim_step(z_n: torch.Tensor, n: int, n_prev: int, eps_hat: torch.Tensor,
              sched: NoiseSchedule) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM update from step n to step n_prev < n."""
    if not (0 <= n_prev < n):
        raise StepIndexError(f"ddim_step needs n > n_prev >= 0, got n={n}, n_prev={n_prev}")
    sched.check_step(n, allow_zero=False)
    check_same_shape(z_n, eps_hat, "ddim_step z_n/eps_hat")

    x0 = _predict_x0(z_n, eps_hat, sched.alpha_bar_at(n))
    if n_prev == 0:
        return x0
    alpha_bar_prev = sched.alpha_bar_at(n_prev)
    return math.sqrt(alpha_bar_prev) * x0 + math.sqrt(1.0 - alpha_bar_prev) * eps_hat


def cfg_combine(eps_u: torch.Tensor, eps_c: torch.Tensor, w: float,
                convention: str = "uncond_weighted") -> torch.Tensor:
    """
    Classifier-free guidance combination.

    "uncond_weighted": w * eps_u + (1 - w) * eps_c
    "standard":        eps_u + w * (eps_c - eps_u)
    """
    check_same_shape(eps_u, eps_c, "cfg_combine eps_u/eps_c")
    if convention == "uncond_weighted":
        return w * eps_u + (1.0 - w) * eps_c
    if convention == "standard":
        return eps_u + w * (eps_c - eps_u)
    raise ValueError(f"unknown guidance convention {convention!r}")


def inference_timesteps(num_steps: int, inference_steps: int) -> List[int]:
    """Evenly spaced, strictly increasing DDIM steps in [1, N] that include N."""
    if not (1 <= inference_steps <= num_steps):
        raise ValueError(f"inference_steps must lie in [1, {num_steps}], got {inference_steps}")
    if inference_steps == 1:
        return [num_steps]
    steps = np.round(np.linspace(1, num_steps, inference_steps)).astype(int).tolist()
    assert all(a < b for a, b in zip(steps, steps[1:])), steps
    return steps


def step_pairs(sched: NoiseSchedule, cfg: SamplerConfig) -> List[Tuple[int, int]]:
    """(n, n_prev) pairs visited by the reverse chain, n strictly decreasing to 0."""
    if cfg.method == "ddpm":
        return [(n, n - 1) for n in range(sched.num_steps, 0, -1)]
    if cfg.method != "ddim":
        raise ValueError(f"unknown sampling method {cfg.method!r}")
    steps = inference_timesteps(sched.num_steps, cfg.inference_steps)
    previous = [0] + steps[:-1]
    return list(zip(reversed(steps), reversed(previous)))


def guided_prediction(model: Denoiser, z: torch.Tensor, steps: torch.Tensor,
                      cond: Optional[ConditionEmbedding], w: float, convention: str) -> torch.Tensor:
    """One denoiser call without a condition, two calls (unconditional, conditional) with one."""
    eps_u = model(z, steps, None)
    if cond is None:
        return eps_u
    eps_c = model(z, steps, cond)
    return cfg_combine(eps_u, eps_c, w, convention)


def reverse_chain(model: Denoiser, sched: NoiseSchedule, cfg: SamplerConfig,
                  cond: Optional[ConditionEmbedding], shape: Tuple[int, ...],
                  generator: Generators, after_step: Optional[AfterStep] = None,
                  device=None, dtype=torch.float32, progress: bool = False) -> torch.Tensor:
    """
    Run the reverse process from z_N ~ N(0, I) down to z_0.

    `after_step(z, n_prev)` is applied after every update; arrangement uses it
    to impute the given stems.
    """
    pairs = step_pairs(sched, cfg)
    z = randn_like_batch(tuple(shape), generator, device, dtype)

    for n, n_prev in tqdm(pairs, desc="sampling", leave=False,
                          disable=not progress or progress_disabled()):
        steps = torch.full((shape[0],), n, dtype=torch.long, device=z.device)
        eps_hat = guided_prediction(model, z, steps, cond, cfg.guidance_weight, cfg.cfg_convention)
        if cfg.method == "ddim":
            z = ddim_step(z, n, n_prev, eps_hat, sched)
        else:
            z = ddpm_step(z, n, eps_hat, sched, generator)
        if after_step is not None:
            z = after_step(z, n_prev)
    return z


@torch.no_grad()
def generate(model: Denoiser, sched: NoiseSchedule, cfg: SamplerConfig,
             cond: Optional[ConditionEmbedding], shape: Tuple[int, ...],
             generator: Optional[Generators] = None, device=None,
             dtype=torch.float32, progress: bool = False) -> torch.Tensor:
    """
    Sample latents of `shape` = (B, S, C, T/r, F/r).

    With cond=None the chain is unconditional and the guidance weight is
    ignored. Without an explicit generator all randomness comes from cfg.seed.
    """
    if generator is None:
        generator = make_generator(cfg.seed)
    if isinstance(model, torch.nn.Module):
        model.eval()
    logger.debug("generate %s method=%s guided=%s", tuple(shape), cfg.method, cond is not None)
    return reverse_chain(model, sched, cfg, cond, shape, generator,
                         device=device, dtype=dtype, progress=progress)
