"""
Procedural four-stem music generator.

Every example shares one tempo, key and I-V-vi-IV chord progression across
bass, drums, guitar and piano stems. The style tag sets the tempo range,
the overall gain and the drum density. Output is fully determined by the
example seed.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from ..errors import DatasetError
from .models import STEM_NAMES, StemStack

logger = logging.getLogger(__name__)

PCM_SCALE = 32768.0

# Chord progression as (scale-degree semitones, triad intervals)
PROGRESSION = (
    (0, (0, 4, 7)),    # I
    (7, (0, 4, 7)),    # V
    (9, (0, 3, 7)),    # vi
    (5, (0, 4, 7)),    # IV
)

STYLES = {
    "soft": {"tempo": (70.0, 100.0), "gain": 0.5, "drum_division": 1},
    "energetic": {"tempo": (110.0, 140.0), "gain": 1.0, "drum_division": 2},
}

# Peak level of each stem before the style gain; the peaks sum below 1 so the mixture never clips
STEM_PEAKS = {"bass": 0.25, "drums": 0.35, "guitar": 0.2, "piano": 0.15}

DRUM_BURST_SECONDS = 0.12
BASS_OCTAVE = 36
GUITAR_OCTAVE = 52
PIANO_OCTAVE = 60


@dataclass
class ExampleSpec:
    """
    Musical parameters of one example.

    Attributes:
        seed: Seed of every random choice of the example
        tempo: Beats per minute, within [70, 140]
        key: Pitch class of the tonic (0 = C)
        tag: Style tag ("soft" or "energetic")
        duration: Length in seconds
    """
    seed: int
    tempo: float
    key: int
    tag: str
    duration: float

    def validate(self) -> None:
        if self.tag not in STYLES:
            raise DatasetError(f"no synthesis style for tag {self.tag!r} (known: {', '.join(STYLES)})")
        low, high = STYLES[self.tag]["tempo"]
        if not (70.0 <= self.tempo <= 140.0) or not (low <= self.tempo <= high):
            raise DatasetError(f"tempo {self.tempo} outside the {self.tag} range [{low}, {high}]")
        if not 0 <= self.key < 12:
            raise DatasetError(f"key must be a pitch class 0-11, got {self.key}")
        if self.duration <= 0:
            raise DatasetError("duration must be positive")

    def to_dict(self) -> Dict[str, float]:
        data = asdict(self)
        data.pop("seed")
        data.pop("tag")
        return data

    @property
    def beat_seconds(self) -> float:
        return 60.0 / self.tempo


def spec_from_seed(seed: int, tag: str, duration: float) -> ExampleSpec:
    """Draw tempo and key for `tag` from the example seed."""
    if tag not in STYLES:
        raise DatasetError(f"no synthesis style for tag {tag!r} (known: {', '.join(STYLES)})")
    rng = np.random.default_rng(seed)
    low, high = STYLES[tag]["tempo"]
    tempo = float(np.round(rng.uniform(low, high), 2))
    key = int(rng.integers(12))
    return ExampleSpec(seed=seed, tempo=tempo, key=key, tag=tag, duration=duration)


def midi_to_hz(note: float) -> float:
    return 440.0 * 2.0 ** ((note - 69) / 12.0)


def _chord_at(spec: ExampleSpec, time: float) -> Tuple[int, Tuple[int, ...]]:
    bar = int(time // (4 * spec.beat_seconds))
    degree, triad = PROGRESSION[bar % len(PROGRESSION)]
    return spec.key + degree, triad


def _place(out: np.ndarray, start: int, note: np.ndarray) -> None:
    end = min(len(out), start + len(note))
    if start < end:
        out[start:end] += note[:end - start]


def _tone(freq: float, length: int, sr: int, harmonics=(1.0,), decay: float = 0.0,
          attack: float = 0.005) -> np.ndarray:
    t = np.arange(length) / sr
    wave = sum(amp * np.sin(2 * np.pi * freq * (k + 1) * t) for k, amp in enumerate(harmonics))
    envelope = np.minimum(1.0, t / attack) if attack > 0 else np.ones_like(t)
    if decay > 0:
        envelope = envelope * np.exp(-t / decay)
    release = min(length, int(0.01 * sr))
    if release:
        envelope[-release:] *= np.linspace(1.0, 0.0, release)
    return wave * envelope


def _bass(spec: ExampleSpec, length: int, sr: int) -> np.ndarray:
    out = np.zeros(length)
    beat = spec.beat_seconds
    for k in range(int(np.ceil(length / sr / beat))):
        time = k * beat
        root, _ = _chord_at(spec, time)
        note = _tone(midi_to_hz(BASS_OCTAVE + root), int(0.9 * beat * sr), sr,
                     harmonics=(1.0, 0.4), decay=0.6 * beat)
        _place(out, int(round(time * sr)), note)
    return out


def _drums(spec: ExampleSpec, length: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(length)
    division = STYLES[spec.tag]["drum_division"]
    step = spec.beat_seconds / division
    burst = int(DRUM_BURST_SECONDS * sr)
    t = np.arange(burst) / sr
    for k in range(int(np.ceil(length / sr / step))):
        accent = 1.0 if k % division == 0 else 0.6
        hit = rng.standard_normal(burst) * np.exp(-t / 0.03) * accent
        _place(out, int(round(k * step * sr)), hit)
    return out


def _guitar(spec: ExampleSpec, length: int, sr: int) -> np.ndarray:
    out = np.zeros(length)
    step = spec.beat_seconds / 2
    for k in range(int(np.ceil(length / sr / step))):
        time = k * step
        root, triad = _chord_at(spec, time)
        pitch = GUITAR_OCTAVE + root + triad[k % len(triad)]
        note = _tone(midi_to_hz(pitch), int(2 * step * sr), sr,
                     harmonics=(1.0, 0.5, 0.33, 0.25), decay=0.15)
        _place(out, int(round(time * sr)), note)
    return out


def _piano(spec: ExampleSpec, length: int, sr: int) -> np.ndarray:
    out = np.zeros(length)
    bar = 4 * spec.beat_seconds
    for k in range(int(np.ceil(length / sr / bar))):
        time = k * bar
        root, triad = _chord_at(spec, time)
        pad = sum(_tone(midi_to_hz(PIANO_OCTAVE + root + i), int(bar * sr), sr,
                        harmonics=(1.0, 0.2), attack=0.05) for i in triad)
        _place(out, int(round(time * sr)), pad)
    return out


def _quantize(stem: np.ndarray, peak: float) -> np.ndarray:
    """Scale to `peak` and round to 16-bit integer levels."""
    current = np.max(np.abs(stem))
    if current > 0:
        stem = stem * (peak / current)
    return np.clip(np.round(stem * PCM_SCALE), -32768, 32767).astype(np.int16)


def generate_example(spec: ExampleSpec, sample_rate: int = 16000) -> Tuple[StemStack, str]:
    """
    Render the four stems of one example.

    Stems are quantised to 16-bit levels, so the mixture (their sum) is
    exactly what a 16-bit WAV of it stores.

    Returns:
        (StemStack of bass, drums, guitar, piano, tag)
    """
    spec.validate()
    length = int(round(spec.duration * sample_rate))
    noise_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    gain = STYLES[spec.tag]["gain"]

    rendered = {
        "bass": _bass(spec, length, sample_rate),
        "drums": _drums(spec, length, sample_rate, noise_rng),
        "guitar": _guitar(spec, length, sample_rate),
        "piano": _piano(spec, length, sample_rate),
    }
    stems = np.stack([_quantize(rendered[name], STEM_PEAKS[name] * gain) for name in STEM_NAMES])
    return StemStack(stems.astype(np.float32) / PCM_SCALE, sample_rate, STEM_NAMES), spec.tag


def drum_onset_times(spec: ExampleSpec) -> np.ndarray:
    """Grid times (seconds) at which drum hits start."""
    step = spec.beat_seconds / STYLES[spec.tag]["drum_division"]
    times = np.arange(int(np.ceil(spec.duration / step))) * step
    return times[times < spec.duration]
