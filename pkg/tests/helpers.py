"""Test helpers shared by several test modules."""

import math

import numpy as np


def sine(freq: float, seconds: float = 0.5, sr: int = 16000, amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(seconds * sr)) / sr
    return (amplitude * np.sin(2 * math.pi * freq * t)).astype(np.float32)


def toy_embed(clips: np.ndarray) -> np.ndarray:
    """Deterministic 4-d clip features: rms, peak, zero-crossing rate, first-half energy share."""
    clips = np.asarray(clips, dtype=np.float64)
    rms = np.sqrt(np.mean(clips ** 2, axis=1))
    peak = np.max(np.abs(clips), axis=1)
    zcr = np.mean(np.abs(np.diff(np.sign(clips), axis=1)) > 0, axis=1)
    half = clips.shape[1] // 2
    energy = np.sum(clips ** 2, axis=1) + 1e-12
    share = np.sum(clips[:, :half] ** 2, axis=1) / energy
    return np.stack([rms, peak, zcr, share], axis=1)
