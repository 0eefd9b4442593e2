"""
Contrastive audio/tag encoder.

A small CNN embeds mixture log-mels and a lookup table embeds style tags
into one unit-normalised space of dimension d. Trained with a symmetric
temperature-scaled cross-entropy, it provides the conditioning vectors of
the diffusion model and the frozen embedder of toy-FAD.
"""

import logging
import math
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..audio.codec import group_count
from ..audio.mel import mel_transform
from ..config.sections import ConditioningConfig, MelConfig
from ..data.models import ConditionEmbedding, ConditionSource, as_float_tensor
from ..errors import ConditioningError

logger = logging.getLogger(__name__)


class ContrastiveEncoder(nn.Module):
    """Audio branch (log-mel CNN) and tag branch (embedding table) sharing one space."""

    def __init__(self, tags: Sequence[str], embed_dim: int = 64, base_channels: int = 32,
                 temperature: float = 0.07, mel_mean: float = 0.0, mel_std: float = 1.0):
        super().__init__()
        self.tags = tuple(tags)
        self.embed_dim = embed_dim
        self.base_channels = base_channels

        self.register_buffer("mel_mean", torch.tensor(float(mel_mean)))
        self.register_buffer("mel_std", torch.tensor(float(mel_std)))

        b = base_channels
        self.audio_net = nn.Sequential(
            nn.Conv2d(1, b, 3, padding=1),
            nn.GroupNorm(group_count(b, 8), b), nn.SiLU(),
            nn.Conv2d(b, 2 * b, 3, stride=2, padding=1),
            nn.GroupNorm(group_count(2 * b, 8), 2 * b), nn.SiLU(),
            nn.Conv2d(2 * b, 4 * b, 3, stride=2, padding=1),
            nn.GroupNorm(group_count(4 * b, 8), 4 * b), nn.SiLU(),
        )
        self.audio_proj = nn.Linear(8 * b, embed_dim)
        self.tag_embedding = nn.Embedding(len(self.tags), embed_dim)
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1.0 / temperature)))

    @classmethod
    def from_config(cls, cfg: ConditioningConfig, tags: Sequence[str]) -> "ContrastiveEncoder":
        return cls(tags, cfg.embed_dim, cfg.base_channels, cfg.temperature)

    def architecture(self) -> Dict[str, Any]:
        return {"tags": list(self.tags), "embed_dim": self.embed_dim,
                "base_channels": self.base_channels}

    def set_statistics(self, mean: float, std: float) -> None:
        self.mel_mean.fill_(float(mean))
        self.mel_std.fill_(max(float(std), 1e-6))

    def tag_index(self, tag: str) -> int:
        if tag not in self.tags:
            raise ConditioningError(f"unknown tag {tag!r} (vocabulary: {', '.join(self.tags)})")
        return self.tags.index(tag)

    def encode_mels(self, mels: torch.Tensor) -> torch.Tensor:
        """(B, T, F) mixture log-mels -> (B, d) unit vectors."""
        x = ((mels - self.mel_mean) / self.mel_std).unsqueeze(1)
        h = self.audio_net(x)
        pooled = torch.cat([h.mean(dim=(2, 3)), h.amax(dim=(2, 3))], dim=1)
        return F.normalize(self.audio_proj(pooled), dim=-1)

    def encode_tags(self, indices: torch.Tensor) -> torch.Tensor:
        """(B,) tag indices -> (B, d) unit vectors."""
        return F.normalize(self.tag_embedding(indices), dim=-1)

    def tag_vectors(self) -> torch.Tensor:
        """(K, d) unit vectors of the whole vocabulary."""
        return F.normalize(self.tag_embedding.weight, dim=-1)

    def forward(self, mels: torch.Tensor) -> torch.Tensor:
        return self.encode_mels(mels)


def _device_of(module: nn.Module) -> torch.device:
    return next(module.parameters()).device


def mixture_mels(audio: Union[np.ndarray, Sequence[np.ndarray]], mel_cfg: MelConfig,
                 sample_rate: Optional[int] = None) -> np.ndarray:
    """
    (B, T, F) log-mels of mixture clips of exactly one segment.

    Raises:
        ConditioningError: on a wrong sample rate or clip length
    """
    if sample_rate is not None and sample_rate != mel_cfg.sample_rate:
        raise ConditioningError(f"audio at {sample_rate} Hz, expected {mel_cfg.sample_rate} Hz")
    clips = np.asarray(audio, dtype=np.float32)
    if clips.ndim == 1:
        clips = clips[None, :]
    if clips.ndim != 2 or clips.shape[0] == 0:
        raise ConditioningError(f"expected (B, samples) mixture audio, got shape {clips.shape}")
    if clips.shape[1] != mel_cfg.segment_samples:
        raise ConditioningError(
            f"mixture has {clips.shape[1]} samples, expected one segment of {mel_cfg.segment_samples}"
        )
    return mel_transform(clips, mel_cfg).mels


@torch.no_grad()
def embed_audio(mixture: Union[np.ndarray, Sequence[np.ndarray]], encoder: ContrastiveEncoder,
                mel_cfg: MelConfig, sample_rate: Optional[int] = None) -> ConditionEmbedding:
    """Unit-norm audio embedding of one mixture segment (or a batch of them)."""
    encoder.eval()
    mels = as_float_tensor(mixture_mels(mixture, mel_cfg, sample_rate), _device_of(encoder))
    vector = encoder.encode_mels(mels)
    is_null = torch.zeros(vector.shape[0], dtype=torch.bool, device=vector.device)
    return ConditionEmbedding(vector, is_null, ConditionSource.AUDIO)


@torch.no_grad()
def embed_tag(tag: Union[str, Sequence[str]], encoder: ContrastiveEncoder) -> ConditionEmbedding:
    """Unit-norm embedding of a vocabulary tag (or a list of tags)."""
    encoder.eval()
    tags = [tag] if isinstance(tag, str) else list(tag)
    indices = torch.tensor([encoder.tag_index(t) for t in tags], device=_device_of(encoder))
    vector = encoder.encode_tags(indices)
    is_null = torch.zeros(vector.shape[0], dtype=torch.bool, device=vector.device)
    return ConditionEmbedding(vector, is_null, ConditionSource.TAG)


def drop_condition(c: ConditionEmbedding, rate: float, generator: torch.Generator) -> ConditionEmbedding:
    """Independently switch each row to the null token with probability `rate`."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1], got {rate}")
    draws = torch.rand(c.batch_size, generator=generator).to(c.is_null.device)
    return ConditionEmbedding(c.vector, c.is_null | (draws < rate), c.source)


def contrastive_loss(audio_emb: torch.Tensor, tag_indices: torch.Tensor,
                     encoder: ContrastiveEncoder) -> torch.Tensor:
    """
    Symmetric temperature-scaled cross-entropy between audio and tags.

    Audio to tag is a softmax over the whole vocabulary. Tag to audio is a
    softmax over the batch with every clip of that tag as a positive.
    """
    if len(encoder.tags) < 2:
        raise ConditioningError("contrastive training needs at least two tags")
    scale = encoder.logit_scale.exp().clamp(max=100.0)
    tag_vecs = encoder.tag_vectors()

    audio_to_tag = scale * audio_emb @ tag_vecs.T
    loss_audio = F.cross_entropy(audio_to_tag, tag_indices)

    present = torch.unique(tag_indices)
    tag_to_audio = scale * tag_vecs[present] @ audio_emb.T
    positives = (tag_indices[None, :] == present[:, None]).to(audio_emb.dtype)
    targets = positives / positives.sum(dim=1, keepdim=True)
    loss_tag = -(targets * F.log_softmax(tag_to_audio, dim=1)).sum(dim=1).mean()

    return 0.5 * (loss_audio + loss_tag)


@torch.no_grad()
def retrieval_accuracy(audio_emb: torch.Tensor, tag_indices: torch.Tensor,
                       encoder: ContrastiveEncoder) -> float:
    """Fraction of clips whose most similar tag is their own."""
    if audio_emb.shape[0] == 0:
        return 0.0
    predicted = (audio_emb @ encoder.tag_vectors().T).argmax(dim=1)
    return float((predicted == tag_indices).float().mean())
