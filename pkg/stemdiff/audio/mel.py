"""
Mel-spectrogram front end.

Turns stacks of stems into log-mel stacks of shape (S, T, F). Every stem is
transformed independently with the same filterbank.
"""

import logging
from functools import lru_cache
from typing import Union

import librosa
import numpy as np

from ..config.sections import MelConfig
from ..data.models import MelStack, StemStack
from ..errors import ShapeMismatchError

logger = logging.getLogger(__name__)


@lru_cache(maxsize=8)
def _filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float,
                htk: bool) -> np.ndarray:
    basis = librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, fmin=fmin,
                                fmax=fmax, htk=htk, norm=None)
    basis.setflags(write=False)
    return basis


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular mel filterbank of shape (F, n_fft // 2 + 1), peak weight 1."""
    if cfg.n_mels <= 0:
        raise ValueError(f"n_mels must be positive, got {cfg.n_mels}")
    return _filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax, cfg.htk)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    """Center frequency in Hz of every mel filter."""
    edges = librosa.mel_frequencies(n_mels=cfg.n_mels + 2, fmin=cfg.fmin, fmax=cfg.fmax, htk=cfg.htk)
    return edges[1:-1]


def _as_stem_array(x: Union[StemStack, np.ndarray]) -> np.ndarray:
    audio = x.stems if isinstance(x, StemStack) else np.asarray(x)
    if audio.ndim == 1:
        audio = audio[None, :]
    if audio.ndim != 2:
        raise ShapeMismatchError(f"expected (S, samples) audio, got shape {audio.shape}")
    if audio.shape[1] == 0:
        raise ValueError("cannot transform empty audio")
    return audio.astype(np.float32, copy=False)


def _fit_frames(spec: np.ndarray, frames: int) -> np.ndarray:
    """Crop or zero-pad the time axis (axis 1) to `frames`."""
    if spec.shape[1] >= frames:
        return spec[:, :frames]
    pad = np.zeros((spec.shape[0], frames - spec.shape[1], spec.shape[2]), dtype=spec.dtype)
    return np.concatenate([spec, pad], axis=1)


def stft_magnitude(audio: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Linear STFT magnitudes of shape (S, frames, n_fft // 2 + 1)."""
    audio = _as_stem_array(audio)
    spec = np.abs(librosa.stft(audio, n_fft=cfg.n_fft, hop_length=cfg.hop_length,
                               win_length=cfg.win_length, window="hann", center=True))
    # librosa returns (S, bins, frames)
    return np.transpose(spec, (0, 2, 1))


def linear_mel(x: Union[StemStack, np.ndarray], cfg: MelConfig) -> np.ndarray:
    """Mel magnitudes before the log, shape (S, T, F); 1-homogeneous in amplitude."""
    magnitude = stft_magnitude(_as_stem_array(x), cfg)
    mel = magnitude @ mel_filterbank(cfg).T
    return _fit_frames(mel.astype(np.float32), cfg.frames)


def mel_transform(x: Union[StemStack, np.ndarray], cfg: MelConfig) -> MelStack:
    """
    Log-mel stack of every stem.

    Magnitudes are clamped at cfg.log_floor before the natural log, so
    silence maps exactly to log(log_floor).
    """
    mel = linear_mel(x, cfg)
    log_mel = np.log(np.maximum(mel, cfg.log_floor)).astype(np.float32)
    return MelStack(log_mel, hop_length=cfg.hop_length, log_floor=cfg.log_floor)
