"""
Synthetic multi-stem dataset: building, manifest and loading.

Layout on disk:
    <root>/manifest.json
    <root>/<split>/<id>/<stem>.wav, mixture.wav
"""

import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from torch.utils.data import Dataset
from tqdm import tqdm

from ..audio.mel import mel_transform
from ..config.sections import SCHEMA_VERSION, DatasetConfig, MelConfig
from ..errors import DatasetError
from ..utils.logger import progress_disabled
from ..utils.seeding import derive_seed
from .models import STEM_NAMES, StemStack
from .storage import load_json, read_wav, save_json, wav_frames, write_wav
from .synth import ExampleSpec, generate_example, spec_from_seed

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")

# Seed ranges of the splits never overlap for fewer than a million examples per split
SPLIT_SEED_OFFSETS = {"train": 0, "valid": 1_000_000, "test": 2_000_000}

MANIFEST_NAME = "manifest.json"


@dataclass
class ManifestEntry:
    """
    One stored example.

    Attributes:
        id: Example identifier, e.g. "train-00012"
        seed: Seed the example was generated from
        tag: Style tag
        spec: Tempo, key and duration
        stems: Stem name -> WAV path relative to the dataset root
        mixture: Mixture WAV path relative to the dataset root
    """
    id: str
    seed: int
    tag: str
    spec: Dict[str, float]
    stems: Dict[str, str]
    mixture: str

    def example_spec(self) -> ExampleSpec:
        return ExampleSpec(seed=self.seed, tag=self.tag, tempo=float(self.spec["tempo"]),
                           key=int(self.spec["key"]), duration=float(self.spec["duration"]))


@dataclass
class DatasetManifest:
    """Index of a built dataset, stored as manifest.json at the dataset root."""
    root: Path
    sample_rate: int
    stems: Tuple[str, ...]
    tags: Tuple[str, ...]
    duration: float
    base_seed: int
    splits: Dict[str, List[ManifestEntry]] = field(default_factory=dict)

    @property
    def counts(self) -> Dict[str, int]:
        return {split: len(self.splits.get(split, [])) for split in SPLITS}

    def entries(self, split: str) -> List[ManifestEntry]:
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r} (expected one of {', '.join(SPLITS)})")
        return self.splits.get(split, [])

    def resolve(self, relpath: str) -> Path:
        return self.root / relpath

    def tag_index(self, tag: str) -> int:
        return self.tags.index(tag)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "sample_rate": self.sample_rate,
            "stems": list(self.stems),
            "tags": list(self.tags),
            "duration": self.duration,
            "base_seed": self.base_seed,
            "counts": self.counts,
            "splits": {split: [asdict(e) for e in self.entries(split)] for split in SPLITS},
        }

    def save(self) -> Path:
        return save_json(self.root / MANIFEST_NAME, self.to_dict())

    @classmethod
    def load(cls, root: Union[str, Path]) -> "DatasetManifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            raise DatasetError(f"no dataset manifest at {path}; run `stemdiff dataset build` first")
        data = load_json(path)
        return cls(
            root=root,
            sample_rate=int(data["sample_rate"]),
            stems=tuple(data["stems"]),
            tags=tuple(data["tags"]),
            duration=float(data["duration"]),
            base_seed=int(data["base_seed"]),
            splits={split: [ManifestEntry(**e) for e in data["splits"].get(split, [])] for split in SPLITS},
        )


def split_seeds(base_seed: int, split: str, count: int) -> List[int]:
    offset = base_seed + SPLIT_SEED_OFFSETS[split]
    return [offset + i for i in range(count)]


def _write_example(job: Tuple[Path, str, str, int, str, float, int]) -> ManifestEntry:
    root, split, example_id, seed, tag, duration, sample_rate = job
    spec = spec_from_seed(seed, tag, duration)
    stack, tag = generate_example(spec, sample_rate)

    folder = Path(split) / example_id
    stems = {}
    for name, audio in zip(stack.stem_names, stack.stems):
        relpath = folder / f"{name}.wav"
        write_wav(root / relpath, audio, sample_rate)
        stems[name] = relpath.as_posix()
    mixture = folder / "mixture.wav"
    write_wav(root / mixture, stack.mixture(), sample_rate)

    return ManifestEntry(id=example_id, seed=seed, tag=tag, spec=spec.to_dict(),
                         stems=stems, mixture=mixture.as_posix())


def _clear_outputs(root: Path) -> None:
    for split in SPLITS:
        if (root / split).exists():
            shutil.rmtree(root / split)
    (root / MANIFEST_NAME).unlink(missing_ok=True)


def build_dataset(cfg: DatasetConfig, out_dir: Optional[Union[str, Path]] = None,
                  sample_rate: int = 16000, force: bool = False) -> DatasetManifest:
    """
    Generate every split and write WAVs plus the manifest.

    Tags alternate through the vocabulary so each split is balanced. Examples
    are rendered in `cfg.workers` processes; the manifest is written last.

    Raises:
        DatasetError: if the output directory is not empty and force is False,
            or on any I/O failure
    """
    root = Path(out_dir if out_dir is not None else cfg.root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise DatasetError(f"{root} is not empty; pass --force to overwrite")
        _clear_outputs(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create {root}: {e}") from e

    jobs = []
    for split, count in cfg.counts().items():
        for i, seed in enumerate(split_seeds(cfg.base_seed, split, count)):
            tag = cfg.tags[i % len(cfg.tags)]
            jobs.append((root, split, f"{split}-{i:05d}", seed, tag, cfg.duration, sample_rate))

    logger.info("building %d examples in %s with %d worker(s)", len(jobs), root, cfg.workers)
    progress = dict(total=len(jobs), desc="dataset", disable=progress_disabled())
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            entries = list(tqdm(pool.map(_write_example, jobs, chunksize=4), **progress))
    else:
        entries = [_write_example(job) for job in tqdm(jobs, **progress)]

    manifest = DatasetManifest(root=root, sample_rate=sample_rate, stems=STEM_NAMES,
                               tags=tuple(cfg.tags), duration=cfg.duration, base_seed=cfg.base_seed)
    for job, entry in zip(jobs, entries):
        manifest.splits.setdefault(job[1], []).append(entry)
    manifest.save()
    logger.info("dataset written: %s", manifest.counts)
    return manifest


def segment_offset(total: int, length: int, random_shift: bool,
                   rng: Optional[np.random.Generator]) -> int:
    if total < length:
        raise DatasetError(f"example has {total} samples, shorter than the {length}-sample segment")
    if not random_shift:
        return 0
    if rng is None:
        raise ValueError("random_shift needs an rng")
    return int(rng.integers(0, total - length + 1))


def load_segment(manifest: DatasetManifest, entry: ManifestEntry, segment_samples: int,
                 random_shift: bool = False, rng: Optional[np.random.Generator] = None,
                 offset: Optional[int] = None) -> StemStack:
    """
    Aligned crop of every stem of an entry; one offset for all stems and no
    amplitude normalisation.
    """
    paths = [manifest.resolve(entry.stems[name]) for name in manifest.stems]
    if offset is None:
        offset = segment_offset(wav_frames(paths[0]), segment_samples, random_shift, rng)
    stems = [read_wav(p, manifest.sample_rate, offset, offset + segment_samples)[0] for p in paths]
    if any(len(s) != segment_samples for s in stems):
        raise DatasetError(f"{entry.id}: stems shorter than offset {offset} + {segment_samples} samples")
    return StemStack(np.stack(stems), manifest.sample_rate, tuple(manifest.stems))


def load_mixture(manifest: DatasetManifest, entry: ManifestEntry, segment_samples: int,
                 offset: int = 0) -> np.ndarray:
    """Stored mixture samples [offset, offset + segment_samples)."""
    audio, _ = read_wav(manifest.resolve(entry.mixture), manifest.sample_rate, offset, offset + segment_samples)
    if len(audio) != segment_samples:
        raise DatasetError(f"{entry.id}: mixture shorter than offset {offset} + {segment_samples} samples")
    return audio


class StemSegmentDataset(Dataset):
    """
    Torch dataset of mel segments of one split.

    Items are dicts with "mels" (S, T, F), "mixture_mel" (T, F), "tag"
    (index into the manifest vocabulary) and "index". Random shifts are drawn
    from (seed, epoch, index), so an epoch is reproducible whatever the
    worker count; call set_epoch() before each epoch.
    """

    def __init__(self, manifest: DatasetManifest, split: str, mel_cfg: MelConfig,
                 random_shift: bool = False, seed: int = 0):
        self.manifest = manifest
        self.split = split
        self.entries = manifest.entries(split)
        self.mel_cfg = mel_cfg
        self.random_shift = random_shift
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.entries)

    def segment(self, index: int) -> StemStack:
        rng = np.random.default_rng(derive_seed(self.seed, self.epoch, index))
        return load_segment(self.manifest, self.entries[index], self.mel_cfg.segment_samples,
                            self.random_shift, rng)

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        stack = self.segment(index)
        mels = mel_transform(stack, self.mel_cfg).mels
        mixture_mel = mel_transform(stack.mixture(), self.mel_cfg).mels[0]
        return {
            "mels": torch.from_numpy(mels),
            "mixture_mel": torch.from_numpy(mixture_mel),
            "tag": torch.tensor(self.manifest.tag_index(self.entries[index].tag)),
            "index": torch.tensor(index),
        }
