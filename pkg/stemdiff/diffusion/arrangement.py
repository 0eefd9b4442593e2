"""
Arrangement generation by masked latent imputation.

Given stems are held fixed through the reverse chain: after every step their
latents are replaced by a fresh forward-process sample of the known clean
latents at the new step. The last replacement is noiseless, so the given
stems come out exactly equal to their input latents.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import torch

from ..config.sections import SamplerConfig
from ..data.models import STEM_NAMES, ConditionEmbedding, subset_label
from ..errors import MaskError, ShapeMismatchError
from ..utils.seeding import derive_seed, make_generator
from .sampler import Denoiser, Generators, randn_like_batch, reverse_chain
from .schedule import NoiseSchedule, forward_sample

logger = logging.getLogger(__name__)

# Key mixed into the run seed for the replacement-noise generator
REPLACEMENT_STREAM = 1


@dataclass(frozen=True)
class StemMask:
    """
    Per-stem binary mask; 1 marks a given (fixed) stem.

    Attributes:
        given: Sorted 0-based indices of the given stems
        num_stems: S
    """
    given: Tuple[int, ...]
    num_stems: int

    @property
    def generated(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.num_stems) if i not in self.given)

    @property
    def is_empty(self) -> bool:
        return not self.given

    @property
    def is_full(self) -> bool:
        return len(self.given) == self.num_stems

    @property
    def is_degenerate(self) -> bool:
        return self.is_empty or self.is_full

    def values(self) -> torch.Tensor:
        """(S,) float tensor with m_s = 1 for given stems."""
        m = torch.zeros(self.num_stems)
        m[list(self.given)] = 1.0
        return m

    def broadcast(self, like: torch.Tensor) -> torch.Tensor:
        """Boolean mask broadcastable to a (B, S, ...) latent batch."""
        if like.ndim < 2 or like.shape[1] != self.num_stems:
            raise ShapeMismatchError(
                f"mask over {self.num_stems} stems does not fit latent shape {tuple(like.shape)}"
            )
        shape = (1, self.num_stems) + (1,) * (like.ndim - 2)
        return self.values().bool().reshape(shape).to(like.device)

    def complement(self) -> "StemMask":
        return StemMask(self.generated, self.num_stems)

    def label(self, stem_names: Sequence[str] = STEM_NAMES) -> str:
        """Report label of the generated subset, e.g. "GP" for given bass and drums."""
        return subset_label(self.generated, stem_names)


def make_mask(given: Iterable[Union[int, str]], num_stems: int,
              stem_names: Sequence[str] = STEM_NAMES) -> StemMask:
    """
    Mask for the given stems, named or as 0-based indices.

    Raises:
        MaskError: for indices outside [0, S) or unknown names
    """
    indices = set()
    for item in given:
        if isinstance(item, str):
            if item not in stem_names[:num_stems]:
                raise MaskError(f"unknown stem {item!r} (expected one of {', '.join(stem_names[:num_stems])})")
            indices.add(list(stem_names).index(item))
        else:
            if not 0 <= int(item) < num_stems:
                raise MaskError(f"stem index {item} outside [0, {num_stems})")
            indices.add(int(item))
    return StemMask(tuple(sorted(indices)), num_stems)


def enumerate_subsets(num_stems: int) -> List[Tuple[int, ...]]:
    """All 2^S - 2 proper non-empty subsets, by size and then lexicographically."""
    return [combo for size in range(1, num_stems)
            for combo in itertools.combinations(range(num_stems), size)]


def masks_for_generated_subsets(num_stems: int) -> List[StemMask]:
    """One mask per proper non-empty generated subset, in report column order."""
    return [make_mask(set(range(num_stems)) - set(subset), num_stems)
            for subset in enumerate_subsets(num_stems)]


def impute_given(z: torch.Tensor, z0_given: torch.Tensor, mask: StemMask, n_prev: int,
                 sched: NoiseSchedule, generator: Generators) -> torch.Tensor:
    """
    Replace the given stems of z with a forward sample of z0 at step n_prev.

    Fresh noise is drawn for every call; n_prev = 0 puts z0 back exactly and
    an empty mask leaves z untouched without drawing.
    """
    if mask.is_empty:
        return z
    keep = mask.broadcast(z)
    if n_prev == 0:
        replacement = z0_given
    else:
        eps = randn_like_batch(tuple(z.shape), generator, z.device, z.dtype)
        replacement = forward_sample(z0_given, n_prev, eps, sched)
    return torch.where(keep, replacement.to(z.dtype), z)


def replacement_generators(seed: int, batch: Optional[int] = None) -> Generators:
    """Replacement-noise generator(s) derived from the run seed (per-row seeds seed + k)."""
    if batch is None:
        return make_generator(derive_seed(seed, REPLACEMENT_STREAM))
    return [make_generator(derive_seed(seed + k, REPLACEMENT_STREAM)) for k in range(batch)]


@torch.no_grad()
def arrange_generate(model: Denoiser, sched: NoiseSchedule, cfg: SamplerConfig,
                     z0_given: torch.Tensor, mask: StemMask,
                     cond: Optional[ConditionEmbedding] = None,
                     generator: Optional[Generators] = None,
                     replace_generator: Optional[Generators] = None,
                     progress: bool = False) -> torch.Tensor:
    """
    Generate the complement of the given stems.

    Args:
        model: Denoiser callable
        sched: Noise schedule
        cfg: Sampler settings (method, steps, guidance)
        z0_given: (B, S, C, T/r, F/r) clean latents; only the given stems are read
        mask: Given-stem mask
        cond: Optional condition, applied with guidance as in generate()
        generator: Main chain randomness (defaults to cfg.seed)
        replace_generator: Replacement noise (defaults to a stream derived from cfg.seed)

    Returns:
        (B, S, C, T/r, F/r) latents; given stems equal z0_given exactly
    """
    if z0_given.ndim != 5:
        raise ShapeMismatchError(f"expected (B, S, C, T/r, F/r) latents, got {tuple(z0_given.shape)}")
    mask.broadcast(z0_given)

    if generator is None:
        generator = make_generator(cfg.seed)
    if replace_generator is None:
        replace_generator = replacement_generators(cfg.seed)
    if isinstance(model, torch.nn.Module):
        model.eval()

    def after_step(z: torch.Tensor, n_prev: int) -> torch.Tensor:
        return impute_given(z, z0_given, mask, n_prev, sched, replace_generator)

    logger.debug("arrange %s given=%s", mask.label(), mask.given)
    return reverse_chain(model, sched, cfg, cond, tuple(z0_given.shape), generator,
                         after_step=after_step, device=z0_given.device, dtype=z0_given.dtype,
                         progress=progress)
