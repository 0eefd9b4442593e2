"""
Noise schedules and the forward (noising) process.

Steps are 1-based: n runs over 1..N and array entry n-1 belongs to step n.
Step 0 is clean data (alpha_bar = 1, sigma = 0).
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Union

import numpy as np
import torch

from ..config.sections import LDMConfig
from ..data.validation import check_same_shape
from ..errors import StepIndexError

logger = logging.getLogger(__name__)

MAX_BETA = 0.999
COSINE_OFFSET = 0.008

StepIndex = Union[int, torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Variance-preserving noise schedule.

    Attributes:
        kind: "linear" or "cosine"
        num_steps: N
        beta: Per-step variances, float64 array of length N
        alpha_bar: Cumulative products of (1 - beta), strictly decreasing
        sigma: sqrt((1 - alpha_bar) / alpha_bar), strictly increasing
        beta_start: Linear schedule start (before rescaling to N)
        beta_end: Linear schedule end (before rescaling to N)
    """
    kind: str
    num_steps: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def check_step(self, n: int, allow_zero: bool = True) -> None:
        low = 0 if allow_zero else 1
        if not (low <= int(n) <= self.num_steps):
            raise StepIndexError(f"step {n} outside [{low}, {self.num_steps}]")

    def alpha_bar_at(self, n: int) -> float:
        """alpha_bar of step n, with alpha_bar_at(0) == 1."""
        self.check_step(n)
        return 1.0 if n == 0 else float(self.alpha_bar[n - 1])

    def beta_at(self, n: int) -> float:
        self.check_step(n, allow_zero=False)
        return float(self.beta[n - 1])

    def sigma_at(self, n: int) -> float:
        self.check_step(n)
        return 0.0 if n == 0 else float(self.sigma[n - 1])

    def alpha_bar_tensor(self, n: torch.Tensor, device=None, dtype=torch.float32) -> torch.Tensor:
        """alpha_bar gathered for a tensor of step indices (0 allowed)."""
        if bool((n < 0).any()) or bool((n > self.num_steps).any()):
            raise StepIndexError(f"step indices outside [0, {self.num_steps}]")
        table = torch.as_tensor(np.concatenate([[1.0], self.alpha_bar]), dtype=torch.float64)
        return table[n.long().cpu()].to(device=device, dtype=dtype)

    def to_dict(self) -> Dict[str, Any]:
        """Parameters stored in checkpoint manifests."""
        return {
            "kind": self.kind,
            "num_steps": self.num_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NoiseSchedule":
        return build_schedule(data["kind"], int(data["num_steps"]),
                              float(data.get("beta_start", 1e-4)), float(data.get("beta_end", 0.02)))


def _linear_betas(num_steps: int, beta_start: float, beta_end: float) -> np.ndarray:
    # Betas are given for N=1000 and rescaled so shorter schedules still end near pure noise
    scale = 1000.0 / num_steps
    betas = np.linspace(beta_start * scale, beta_end * scale, num_steps, dtype=np.float64)
    return np.clip(betas, 1e-12, MAX_BETA)


def _cosine_betas(num_steps: int) -> np.ndarray:
    def f(t):
        return math.cos((t / num_steps + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2

    betas = [min(1.0 - f(n) / f(n - 1), MAX_BETA) for n in range(1, num_steps + 1)]
    return np.asarray(betas, dtype=np.float64)


def build_schedule(kind: str = "linear", num_steps: int = 1000,
                   beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """
    Build a linear or cosine noise schedule with N = num_steps.

    Raises:
        ValueError: on num_steps < 1 or an unknown kind
    """
    if int(num_steps) < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    num_steps = int(num_steps)

    if kind == "linear":
        beta = _linear_betas(num_steps, beta_start, beta_end)
    elif kind == "cosine":
        beta = _cosine_betas(num_steps)
    else:
        raise ValueError(f"unknown schedule kind {kind!r} (expected linear or cosine)")

    alpha_bar = np.cumprod(1.0 - beta)
    sigma = np.sqrt((1.0 - alpha_bar) / alpha_bar)
    for array in (beta, alpha_bar, sigma):
        array.setflags(write=False)

    logger.debug("%s schedule N=%d alpha_bar[N-1]=%.3e", kind, num_steps, alpha_bar[-1])
    return NoiseSchedule(kind, num_steps, beta, alpha_bar, sigma, beta_start, beta_end)


def schedule_from_config(cfg: LDMConfig) -> NoiseSchedule:
    return build_schedule(cfg.schedule, cfg.num_steps, cfg.beta_start, cfg.beta_end)


def _broadcast(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return values.reshape((-1,) + (1,) * (like.ndim - 1))


def forward_sample(z0: torch.Tensor, n: StepIndex, eps: torch.Tensor,
                   sched: NoiseSchedule) -> torch.Tensor:
    """
    z_n = sqrt(alpha_bar[n]) * z0 + sqrt(1 - alpha_bar[n]) * eps.

    `n` is either a single step or a tensor with one step per batch row.
    n = 0 returns z0 itself.
    """
    check_same_shape(z0, eps, "forward_sample z0/eps")

    if isinstance(n, torch.Tensor) and n.ndim > 0:
        if n.shape[0] != z0.shape[0]:
            raise StepIndexError(f"{n.shape[0]} step indices for batch of {z0.shape[0]}")
        alpha_bar = _broadcast(sched.alpha_bar_tensor(n, z0.device, torch.float64), z0)
        out = alpha_bar.sqrt() * z0.double() + (1.0 - alpha_bar).sqrt() * eps.double()
        return out.to(z0.dtype)

    n = int(n)
    sched.check_step(n)
    if n == 0:
        return z0
    alpha_bar = sched.alpha_bar_at(n)
    return math.sqrt(alpha_bar) * z0 + math.sqrt(1.0 - alpha_bar) * eps
