"""
Core data models for the stemdiff system.

Defines the fundamental data structures shared by the codec, the diffusion
model, conditioning and evaluation: stacks of stems, mel stacks, the latent
geometry and condition embeddings.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import torch

from ..errors import ShapeMismatchError


STEM_NAMES: Tuple[str, ...] = ("bass", "drums", "guitar", "piano")

# Single-letter labels used in report columns
STEM_ABBREVIATIONS = {
    "bass": "B",
    "drums": "D",
    "guitar": "G",
    "piano": "P",
}

DEFAULT_TAGS: Tuple[str, ...] = ("soft", "energetic")


@dataclass
class StemStack:
    """
    S time-aligned mono tracks.

    Attributes:
        stems: Float array of shape (S, samples), values in [-1, 1]
        sample_rate: Sample rate in Hz
        stem_names: Name of each stem, in stack order
    """
    stems: np.ndarray
    sample_rate: int = 16000
    stem_names: Tuple[str, ...] = STEM_NAMES

    def __post_init__(self):
        self.stems = np.asarray(self.stems)
        if self.stems.ndim != 2 or self.stems.shape[0] < 1:
            raise ShapeMismatchError(
                f"StemStack expects (S, samples) with S >= 1, got shape {self.stems.shape}"
            )
        if len(self.stem_names) != self.stems.shape[0]:
            raise ShapeMismatchError(
                f"{len(self.stem_names)} stem names for {self.stems.shape[0]} stems"
            )

    @property
    def num_stems(self) -> int:
        return self.stems.shape[0]

    @property
    def num_samples(self) -> int:
        return self.stems.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def mixture(self) -> np.ndarray:
        """Elementwise sum over stems."""
        return self.stems.sum(axis=0)

    def stem(self, name: str) -> np.ndarray:
        return self.stems[self.stem_names.index(name)]

    def crop(self, offset: int, length: int) -> "StemStack":
        """Aligned crop of every stem (same offset for all)."""
        return StemStack(self.stems[:, offset:offset + length], self.sample_rate, self.stem_names)


@dataclass
class MelStack:
    """
    Log-mel magnitudes of every stem.

    Attributes:
        mels: Float array of shape (S, T, F)
        hop_length: Hop between frames in samples
        log_floor: Magnitude floor used before the log
    """
    mels: np.ndarray
    hop_length: int = 160
    log_floor: float = 1e-5

    def __post_init__(self):
        self.mels = np.asarray(self.mels)
        if self.mels.ndim != 3:
            raise ShapeMismatchError(
                f"MelStack expects (S, T, F), got shape {self.mels.shape}"
            )
        if not np.all(np.isfinite(self.mels)):
            raise ValueError("MelStack contains non-finite values")

    @property
    def num_stems(self) -> int:
        return self.mels.shape[0]

    @property
    def frames(self) -> int:
        return self.mels.shape[1]

    @property
    def n_mels(self) -> int:
        return self.mels.shape[2]


@dataclass(frozen=True)
class LatentGeometry:
    """
    Shape bookkeeping for latent stacks of shape (S, C, T/r, F/r).

    Attributes:
        num_stems: S
        latent_channels: C
        compression: r
        frames: T
        n_mels: F
    """
    num_stems: int
    latent_channels: int
    compression: int
    frames: int
    n_mels: int

    @property
    def latent_shape(self) -> Tuple[int, int, int, int]:
        r = self.compression
        return (self.num_stems, self.latent_channels, self.frames // r, self.n_mels // r)

    @property
    def mel_shape(self) -> Tuple[int, int, int]:
        return (self.num_stems, self.frames, self.n_mels)

    def batch_shape(self, batch: int) -> Tuple[int, ...]:
        return (batch,) + self.latent_shape

    def check_latent(self, z: torch.Tensor) -> None:
        if tuple(z.shape[-4:]) != self.latent_shape:
            raise ShapeMismatchError(
                f"latent shape {tuple(z.shape)} does not end with {self.latent_shape}"
            )


class ConditionSource(Enum):
    """Where a condition embedding came from."""
    AUDIO = "audio"
    TAG = "tag"
    NULL = "null"


@dataclass
class ConditionEmbedding:
    """
    Batch of condition vectors in the shared audio/tag space.

    Rows flagged in `is_null` select the denoiser's learned null token; their
    `vector` content is ignored.

    Attributes:
        vector: Float tensor (B, d), unit-normalised for audio/tag rows
        is_null: Bool tensor (B,)
        source: Origin of the non-null rows
    """
    vector: torch.Tensor
    is_null: torch.Tensor
    source: ConditionSource = ConditionSource.AUDIO

    def __post_init__(self):
        if self.vector.ndim != 2:
            raise ShapeMismatchError(f"condition vector must be (B, d), got {tuple(self.vector.shape)}")
        if self.is_null.shape != (self.vector.shape[0],):
            raise ShapeMismatchError("is_null must have one flag per condition row")

    @classmethod
    def null(cls, batch: int, dim: int, device=None, dtype=torch.float32) -> "ConditionEmbedding":
        """All-null condition batch."""
        return cls(
            vector=torch.zeros(batch, dim, device=device, dtype=dtype),
            is_null=torch.ones(batch, dtype=torch.bool, device=device),
            source=ConditionSource.NULL,
        )

    @property
    def batch_size(self) -> int:
        return self.vector.shape[0]

    @property
    def dim(self) -> int:
        return self.vector.shape[1]

    def repeat(self, batch: int) -> "ConditionEmbedding":
        """Broadcast a single-row condition to `batch` rows."""
        if self.batch_size == batch:
            return self
        if self.batch_size != 1:
            raise ShapeMismatchError(f"cannot broadcast {self.batch_size} conditions to batch {batch}")
        return ConditionEmbedding(self.vector.expand(batch, -1), self.is_null.expand(batch), self.source)

    def to(self, device=None, dtype=None) -> "ConditionEmbedding":
        return ConditionEmbedding(
            self.vector.to(device=device, dtype=dtype or self.vector.dtype),
            self.is_null.to(device=device),
            self.source,
        )


def subset_label(indices: Sequence[int], stem_names: Sequence[str] = STEM_NAMES) -> str:
    """Report label of a stem subset, e.g. (0, 1) -> "BD"."""
    return "".join(STEM_ABBREVIATIONS.get(stem_names[i], stem_names[i][0].upper())
                   for i in sorted(indices))


def as_float_tensor(array: np.ndarray, device: Optional[torch.device] = None) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(array), dtype=torch.float32, device=device)
