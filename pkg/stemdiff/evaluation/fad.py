"""
Frechet distance between Gaussian fits of audio embeddings ("toy-FAD").

Embeddings come from the frozen contrastive audio encoder, so values are
only comparable between runs that share one encoder checkpoint.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
import torch

from ..conditioning.encoder import ContrastiveEncoder, mixture_mels
from ..config.sections import MelConfig
from ..data.models import as_float_tensor
from ..errors import EvaluationError

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-8
SINGULAR_EIGENVALUE = 1e-12
COVARIANCE_EPS = 1e-6

Embedder = Callable[[np.ndarray], np.ndarray]


@dataclass
class FADStats:
    """
    Gaussian moments of a set of embeddings.

    Attributes:
        mean: (d,) sample mean
        covariance: (d, d) unbiased sample covariance
        count: Number of embeddings
    """
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def validate(self) -> None:
        """Raise EvaluationError unless the moments are finite, symmetric and PSD."""
        if not (np.isfinite(self.mean).all() and np.isfinite(self.covariance).all()):
            raise EvaluationError("FAD statistics contain NaN or Inf")
        if self.covariance.shape != (self.dim, self.dim):
            raise EvaluationError(f"covariance shape {self.covariance.shape} does not match mean dim {self.dim}")
        if not np.allclose(self.covariance, self.covariance.T, rtol=1e-10, atol=1e-12):
            raise EvaluationError("covariance is not symmetric")
        smallest = np.linalg.eigvalsh(self.covariance).min()
        if smallest < -EIGEN_TOLERANCE:
            raise EvaluationError(f"covariance is not positive semi-definite (eigenvalue {smallest:.3e})")


def fit_stats(embeddings: np.ndarray) -> FADStats:
    """
    Sample mean and unbiased covariance of (n, d) embeddings.

    Raises:
        EvaluationError: for n < 2 or non-finite embeddings
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise EvaluationError(f"expected (n, d) embeddings, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise EvaluationError(f"need at least 2 embeddings to fit FAD statistics, got {n}")
    if not np.isfinite(x).all():
        raise EvaluationError("embeddings contain NaN or Inf")
    if n < d:
        logger.warning("fitting %d-dimensional FAD statistics on only %d embeddings", d, n)

    mean = x.mean(axis=0)
    centered = x - mean
    covariance = centered.T @ centered / (n - 1)
    return FADStats(mean, 0.5 * (covariance + covariance.T), n)


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance(a: FADStats, b: FADStats) -> float:
    """
    ||mu_a - mu_b||^2 + Tr(S_a) + Tr(S_b) - 2 Tr((S_a S_b)^(1/2)).

    The trace of the product square root is taken from the eigenvalues of
    S_a^(1/2) S_b S_a^(1/2), clamped at zero. Both covariances get 1e-6 I
    when either is singular.
    """
    if a.dim != b.dim:
        raise EvaluationError(f"FAD statistics dimensions differ: {a.dim} vs {b.dim}")
    a.validate()
    b.validate()

    cov_a, cov_b = a.covariance, b.covariance
    if min(np.linalg.eigvalsh(cov_a).min(), np.linalg.eigvalsh(cov_b).min()) <= SINGULAR_EIGENVALUE:
        eye = COVARIANCE_EPS * np.eye(a.dim)
        cov_a, cov_b = cov_a + eye, cov_b + eye

    sqrt_a = _sqrt_psd(cov_a)
    product = sqrt_a @ cov_b @ sqrt_a
    product = 0.5 * (product + product.T)
    trace_sqrt = np.sqrt(np.clip(np.linalg.eigvalsh(product), 0.0, None)).sum()

    diff = a.mean - b.mean
    distance = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    if not np.isfinite(distance):
        raise EvaluationError("Frechet distance is not finite")
    return max(distance, 0.0)


@torch.no_grad()
def embed_for_eval(clips: Union[np.ndarray, Sequence[np.ndarray]], encoder: ContrastiveEncoder,
                   mel_cfg: MelConfig, batch_size: int = 32) -> np.ndarray:
    """
    (n, d) frozen audio-encoder embeddings of one-segment clips.

    Raises:
        EvaluationError: if there are no clips
    """
    clips = np.asarray(clips, dtype=np.float32)
    if clips.ndim != 2 or clips.shape[0] == 0:
        raise EvaluationError(f"need a non-empty (n, samples) clip set, got shape {clips.shape}")
    encoder.eval()
    device = next(encoder.parameters()).device
    out = []
    for start in range(0, clips.shape[0], batch_size):
        mels = as_float_tensor(mixture_mels(clips[start:start + batch_size], mel_cfg), device)
        out.append(encoder.encode_mels(mels).double().cpu().numpy())
    return np.concatenate(out)


def make_embedder(encoder: ContrastiveEncoder, mel_cfg: MelConfig, batch_size: int = 32) -> Embedder:
    def embed(clips: np.ndarray) -> np.ndarray:
        return embed_for_eval(clips, encoder, mel_cfg, batch_size)
    return embed


def toy_fad(generated: np.ndarray, reference: np.ndarray, embed: Embedder) -> float:
    """toy-FAD between two clip sets."""
    return frechet_distance(fit_stats(embed(generated)), fit_stats(embed(reference)))
