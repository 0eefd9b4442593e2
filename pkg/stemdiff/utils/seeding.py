"""
Seeding helpers.

All randomness in stemdiff flows from explicit generators built here, never
from global RNG state, so (seed, config, checkpoint) fixes every output.
"""

import random

import numpy as np
import torch


def make_generator(seed: int, device: str = "cpu") -> torch.Generator:
    """Torch generator seeded with `seed`."""
    generator = torch.Generator(device=device)
    generator.manual_seed(int(seed))
    return generator


def derive_seed(seed: int, *keys: int) -> int:
    """Stable child seed from a parent seed and integer keys."""
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def seed_everything(seed: int) -> None:
    """Seed the global RNGs (model initialisation uses them)."""
    random.seed(seed)
    np.random.seed(seed & 0xFFFFFFFF)
    torch.manual_seed(seed)


def resolve_device(device: str) -> torch.device:
    if device == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(device)
