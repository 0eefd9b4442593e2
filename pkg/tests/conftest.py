"""Shared fixtures: micro configuration, closed-form denoisers, toy embedder, tiny dataset."""

import pytest
import torch

from stemdiff.config.defaults import get_micro_config
from stemdiff.data.dataset import build_dataset
from stemdiff.diffusion.schedule import build_schedule

from .helpers import toy_embed


@pytest.fixture
def micro_cfg():
    return get_micro_config()


@pytest.fixture
def schedule():
    return build_schedule("linear", 20)


class OracleDenoiser:
    """
    Exact noise predictor for data concentrated on one point z0.

    eps(z_n, n) = (z_n - sqrt(alpha_bar) z0) / sqrt(1 - alpha_bar). Counts calls
    and records whether each call was conditional.
    """

    def __init__(self, z0: torch.Tensor, sched):
        self.z0 = z0
        self.sched = sched
        self.calls = []

    def __call__(self, z, steps, cond):
        self.calls.append(cond is not None)
        alpha_bar = self.sched.alpha_bar_tensor(steps, z.device, z.dtype)
        alpha_bar = alpha_bar.reshape((-1,) + (1,) * (z.ndim - 1))
        return (z - alpha_bar.sqrt() * self.z0) / (1.0 - alpha_bar).sqrt()


class ShiftDenoiser:
    """Cheap denoiser whose output depends on the condition."""

    def __init__(self):
        self.calls = 0

    def __call__(self, z, steps, cond):
        self.calls += 1
        out = 0.1 * z + 1e-3 * steps.to(z.dtype).reshape((-1,) + (1,) * (z.ndim - 1))
        if cond is not None:
            out = out + cond.vector.sum(dim=1).to(z.dtype).reshape((-1,) + (1,) * (z.ndim - 1))
        return out


@pytest.fixture
def oracle_factory():
    return OracleDenoiser


@pytest.fixture
def shift_denoiser():
    return ShiftDenoiser()


@pytest.fixture
def embed():
    return toy_embed


@pytest.fixture
def tiny_manifest(tmp_path, micro_cfg):
    """Micro dataset (8/4/4 examples of 0.5 s) written under tmp_path."""
    return build_dataset(micro_cfg.dataset, tmp_path / "data", micro_cfg.mel.sample_rate)
