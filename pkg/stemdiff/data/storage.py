"""
Data storage and persistence management.

WAV input/output, JSON documents with a schema version, and the
self-describing checkpoint directory every training stage writes.
"""

import json
import logging
import shutil
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import soundfile as sf
import torch

from ..config.sections import SCHEMA_VERSION
from ..errors import CheckpointError, DatasetError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

STAGES = ("vae", "clap", "ldm")

# Stages each training stage depends on
STAGE_PREREQUISITES = {
    "vae": (),
    "clap": (),
    "ldm": ("vae", "clap"),
}


def to_pcm16(audio: np.ndarray) -> np.ndarray:
    """Float audio in [-1, 1] to int16 levels (x * 32768, rounded and clipped)."""
    return np.clip(np.round(np.asarray(audio, dtype=np.float64) * 32768.0), -32768, 32767).astype(np.int16)


def write_wav(path: PathLike, audio: np.ndarray, sample_rate: int = 16000) -> Path:
    """Write mono audio as 16-bit PCM WAV."""
    path = Path(path)
    audio = np.asarray(audio)
    if audio.ndim != 1:
        raise DatasetError(f"{path}: expected mono audio, got shape {audio.shape}")
    data = audio if audio.dtype == np.int16 else to_pcm16(audio)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        sf.write(str(path), data, sample_rate, subtype="PCM_16")
    except (OSError, RuntimeError) as e:
        raise DatasetError(f"cannot write {path}: {e}") from e
    return path


def read_wav(path: PathLike, expected_rate: Optional[int] = 16000, start: int = 0,
             stop: Optional[int] = None) -> Tuple[np.ndarray, int]:
    """
    Read a mono WAV (or a sample range of it) as float32 in [-1, 1).

    Raises:
        DatasetError: if the file is missing, unreadable, not mono or at the wrong rate
    """
    path = Path(path)
    try:
        audio, rate = sf.read(str(path), start=start, stop=stop, dtype="float32", always_2d=True)
    except (OSError, RuntimeError) as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    if audio.shape[1] != 1:
        raise DatasetError(f"{path}: expected mono audio, got {audio.shape[1]} channels")
    if expected_rate is not None and rate != expected_rate:
        raise DatasetError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    return audio[:, 0], rate


def wav_frames(path: PathLike) -> int:
    try:
        return sf.info(str(path)).frames
    except (OSError, RuntimeError) as e:
        raise DatasetError(f"cannot read {path}: {e}") from e


def save_json(path: PathLike, data: Dict[str, Any]) -> Path:
    """Write a JSON document, adding the schema version when absent."""
    path = Path(path)
    document = {"schema_version": SCHEMA_VERSION}
    document.update(data)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
    return path


def load_json(path: PathLike, error=DatasetError) -> Dict[str, Any]:
    """Read a JSON document and check its schema version."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise error(f"cannot read {path}: {e}") from e
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise error(f"{path}: schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    return data


class CheckpointDir:
    """
    Self-describing checkpoint directory of one training stage.

    Layout: manifest.json (architecture and stage extras), config.json (run
    config snapshot), weights.pt, state.pt (optimizer, epoch, best metric)
    and metrics.jsonl.
    """

    def __init__(self, root: PathLike, stage: str):
        if stage not in STAGES:
            raise CheckpointError(f"unknown stage {stage!r} (expected one of {', '.join(STAGES)})")
        self.stage = stage
        self.path = Path(root) / stage

    @property
    def manifest_path(self) -> Path:
        return self.path / "manifest.json"

    @property
    def config_path(self) -> Path:
        return self.path / "config.json"

    @property
    def weights_path(self) -> Path:
        return self.path / "weights.pt"

    @property
    def state_path(self) -> Path:
        return self.path / "state.pt"

    @property
    def metrics_path(self) -> Path:
        return self.path / "metrics.jsonl"

    def exists(self) -> bool:
        return self.manifest_path.exists() and self.weights_path.exists()

    def has_state(self) -> bool:
        return self.state_path.exists()

    def require(self) -> "CheckpointDir":
        """Raise an actionable error unless the checkpoint is complete."""
        if not self.exists():
            raise CheckpointError(
                f"missing {self.stage} checkpoint in {self.path}; "
                f"run `stemdiff train --stage {self.stage}` first"
            )
        return self

    def save(self, model: torch.nn.Module, manifest: Dict[str, Any], config: Dict[str, Any],
             state: Optional[Dict[str, Any]] = None) -> None:
        """Write weights, manifest, config snapshot and (optionally) resume state."""
        self.path.mkdir(parents=True, exist_ok=True)
        document = {"stage": self.stage}
        document.update(manifest)
        torch.save(model.state_dict(), self._tmp(self.weights_path))
        self._commit(self.weights_path)
        if state is not None:
            self.save_state(state)
        save_json(self.config_path, config)
        save_json(self.manifest_path, document)

    def save_state(self, state: Dict[str, Any]) -> None:
        """Write the resume state (latest weights, optimizer, epoch counters)."""
        self.path.mkdir(parents=True, exist_ok=True)
        torch.save(state, self._tmp(self.state_path))
        self._commit(self.state_path)

    def load_manifest(self) -> Dict[str, Any]:
        self.require()
        manifest = load_json(self.manifest_path, error=CheckpointError)
        if manifest.get("stage") != self.stage:
            raise CheckpointError(f"{self.manifest_path}: stage {manifest.get('stage')!r} != {self.stage!r}")
        return manifest

    def load_config(self) -> Dict[str, Any]:
        return load_json(self.config_path, error=CheckpointError)

    def load_weights(self, map_location="cpu") -> Dict[str, torch.Tensor]:
        self.require()
        return torch.load(self.weights_path, map_location=map_location, weights_only=True)

    def load_state(self, map_location="cpu") -> Optional[Dict[str, Any]]:
        if not self.has_state():
            return None
        return torch.load(self.state_path, map_location=map_location, weights_only=False)

    def clear(self) -> None:
        if self.path.exists():
            shutil.rmtree(self.path)

    @staticmethod
    def _tmp(path: Path) -> Path:
        return path.with_suffix(path.suffix + ".tmp")

    def _commit(self, path: Path) -> None:
        self._tmp(path).replace(path)


def require_prerequisites(root: PathLike, stage: str) -> None:
    """Raise CheckpointError naming the first missing prerequisite stage."""
    for prerequisite in STAGE_PREREQUISITES[stage]:
        CheckpointDir(root, prerequisite).require()
