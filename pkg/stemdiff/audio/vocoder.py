"""
Phase-reconstruction vocoder.

Renders log-mel stacks back to audio: the mel magnitudes are mapped to a
linear spectrogram through the pseudo-inverse filterbank, then librosa's
Griffin-Lim recovers a phase.
"""

import logging
from typing import Optional

import librosa
import numpy as np

from ..config.sections import MelConfig
from ..data.models import STEM_NAMES, MelStack, StemStack
from ..errors import ShapeMismatchError
from .mel import mel_filterbank

logger = logging.getLogger(__name__)


def mel_to_linear(log_mels: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """(S, T, F) log-mels -> non-negative linear magnitudes (S, n_fft // 2 + 1, T)."""
    if log_mels.ndim != 3 or log_mels.shape[2] != cfg.n_mels:
        raise ShapeMismatchError(
            f"expected (S, T, {cfg.n_mels}) log-mels, got shape {log_mels.shape}"
        )
    inverse = np.linalg.pinv(mel_filterbank(cfg))
    magnitude = np.exp(log_mels.astype(np.float64)) @ inverse.T
    return np.maximum(magnitude, 0.0).transpose(0, 2, 1)


def invert_mel(m: MelStack, cfg: MelConfig, iterations: int = 64, seed: int = 0,
               stem_names: Optional[tuple] = None) -> StemStack:
    """
    Griffin-Lim inversion of every stem of a mel stack.

    Args:
        m: Log-mel stack (S, T, F)
        cfg: Mel configuration the stack was computed with
        iterations: Griffin-Lim iterations (>= 1)
        seed: Seed of the random initial phase
        stem_names: Names for the output stack (defaults to the first S stems)

    Returns:
        StemStack of S x (T * hop) samples
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")

    magnitude = mel_to_linear(np.asarray(m.mels), cfg)
    length = m.frames * cfg.hop_length
    audio = librosa.griffinlim(
        magnitude.astype(np.float32),
        n_iter=iterations,
        hop_length=cfg.hop_length,
        win_length=cfg.win_length,
        n_fft=cfg.n_fft,
        window="hann",
        center=True,
        length=length,
        init="random",
        random_state=np.random.RandomState(seed),
    )
    audio = np.clip(audio, -1.0, 1.0).astype(np.float32)

    names = tuple(stem_names) if stem_names is not None else STEM_NAMES[:audio.shape[0]]
    if len(names) != audio.shape[0]:
        names = tuple(f"stem{i}" for i in range(audio.shape[0]))
    logger.debug("inverted %d stems with %d Griffin-Lim iterations", audio.shape[0], iterations)
    return StemStack(audio, sample_rate=cfg.sample_rate, stem_names=names)
