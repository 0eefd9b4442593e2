"""
Evaluation runs against a dataset split.

Each function produces one FADReport: total and audio-conditioned
generation against the Gaussian-noise baseline, the tag cross-check matrix,
the arrangement table over all proper stem subsets, and already generated
sample directories.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..config.sections import RunConfig
from ..data.dataset import DatasetManifest, load_segment
from ..data.models import subset_label
from ..data.storage import read_wav
from ..diffusion.arrangement import make_mask, enumerate_subsets
from ..errors import EvaluationError
from ..pipeline import StemDiffPipeline
from ..utils.logger import progress_disabled
from .fad import Embedder, toy_fad
from .protocol import FADReport, FADResult, evaluate_protocol, noise_baseline

logger = logging.getLogger(__name__)


def reference_set(manifest: DatasetManifest, split: str, segment_samples: int,
                  limit: Optional[int] = None, tag: Optional[str] = None) -> Tuple[np.ndarray, List[str]]:
    """(m, S, L) first-segment stems of a split (optionally one tag) and their tags."""
    entries = [e for e in manifest.entries(split) if tag is None or e.tag == tag]
    if limit is not None:
        entries = entries[:limit]
    if not entries:
        raise EvaluationError(f"no reference examples in split {split!r}" + (f" with tag {tag!r}" if tag else ""))
    stems = np.stack([load_segment(manifest, e, segment_samples).stems for e in entries])
    return stems, [e.tag for e in entries]


def _stack(samples) -> np.ndarray:
    return np.stack([s.stems.stems for s in samples]).astype(np.float64)


def evaluate_total(pipeline: StemDiffPipeline, manifest: DatasetManifest, cfg: RunConfig,
                   embed: Embedder) -> FADReport:
    """Generated, audio-conditioned and Gaussian-noise mixtures against reference mixtures."""
    seg = cfg.mel.segment_samples
    reference, _ = reference_set(manifest, cfg.eval.split, seg)
    n = cfg.eval.num_generated
    report = FADReport("total generation")

    generated = _stack(pipeline.sample("total", n))
    report.add(evaluate_protocol(generated, None, reference, "mixture", embed, name="total"))

    references = list(reference.sum(axis=1))
    conditioned = _stack(pipeline.sample("audio_cond", n, references=references))
    report.add(evaluate_protocol(conditioned, None, reference, "mixture", embed, name="audio_cond"))

    noise = noise_baseline(reference.sum(axis=1), cfg.eval.noise_seed, n)
    report.add(FADResult("noise", "mixture", toy_fad(noise, reference.sum(axis=1), embed),
                         len(noise), len(reference)))

    total, baseline = report.value("total", "mixture"), report.value("noise", "mixture")
    report.notes.append(f"noise/total ratio: {baseline / max(total, 1e-12):.2f}")
    report.notes.append(
        f"audio_cond/total ratio: {report.value('audio_cond', 'mixture') / max(total, 1e-12):.2f} "
        f"(w={cfg.sampler.guidance_weight}, {cfg.sampler.cfg_convention} guidance)"
    )
    return report


def evaluate_tags(pipeline: StemDiffPipeline, manifest: DatasetManifest, cfg: RunConfig,
                  embed: Embedder) -> FADReport:
    """Prompt tag x target tag matrix; rows are named "prompt->target"."""
    seg = cfg.mel.segment_samples
    report = FADReport("tag cross-check")
    targets = {tag: reference_set(manifest, cfg.eval.split, seg, tag=tag)[0] for tag in manifest.tags}
    for prompt in manifest.tags:
        generated = _stack(pipeline.sample("tag_cond", cfg.eval.num_generated, tag=prompt))
        for target, reference in targets.items():
            report.add(evaluate_protocol(generated, None, reference, "mixture", embed,
                                         name=f"{prompt}->{target}"))
    for prompt in manifest.tags:
        own = report.value(f"{prompt}->{prompt}", "mixture")
        others = [report.value(f"{prompt}->{t}", "mixture") for t in manifest.tags if t != prompt]
        report.notes.append(f"{prompt}: diagonal {'dominant' if all(own < o for o in others) else 'not dominant'}")
    return report


def evaluate_arrangement(pipeline: StemDiffPipeline, manifest: DatasetManifest, cfg: RunConfig,
                         embed: Embedder, protocols: Sequence[str] = ("mixture", "stem")) -> FADReport:
    """
    Arrangement table: for every proper generated subset, complete each
    reference example from its own given stems and score every protocol,
    plus a noise row for the stem protocol.
    """
    seg = cfg.mel.segment_samples
    reference, _ = reference_set(manifest, cfg.eval.split, seg, limit=cfg.eval.num_generated)
    entries = manifest.entries(cfg.eval.split)[:len(reference)]
    num_stems = reference.shape[1]
    report = FADReport("arrangement generation (columns: generated stems)")

    for subset in tqdm(enumerate_subsets(num_stems), desc="subsets", disable=progress_disabled()):
        mask = make_mask(set(range(num_stems)) - set(subset), num_stems)
        generated = []
        for k, entry in enumerate(entries):
            given = load_segment(manifest, entry, seg)
            sample = pipeline.arrange(given, mask, 1, seed=cfg.sampler.seed + k)[0]
            generated.append(sample.stems.stems)
        generated = np.stack(generated).astype(np.float64)
        for protocol in protocols:
            report.add(evaluate_protocol(generated, reference, reference, protocol, embed, subset=subset))
        target = reference[:, list(subset)].sum(axis=1)
        noise = noise_baseline(target, cfg.eval.noise_seed)
        report.add(FADResult(subset_label(subset), "noise", toy_fad(noise, target, embed),
                             len(noise), len(target)))
    return report


def _read_sample_dir(path: Path, stem_names: Sequence[str], sample_rate: int) -> Tuple[dict, np.ndarray]:
    metadata = json.loads((path / "metadata.json").read_text(encoding="utf-8"))
    stems = np.stack([read_wav(path / f"{name}.wav", sample_rate)[0] for name in stem_names])
    return metadata, stems


def evaluate_directories(directories: Sequence[Union[str, Path]], manifest: DatasetManifest,
                         cfg: RunConfig, embed: Embedder,
                         protocols: Sequence[str] = ("mixture", "stem")) -> FADReport:
    """
    Score sample directories written by `sample` or `arrange`.

    Directories are grouped by mode (and by generated subset for
    arrangements). Given stems stored in arrangement outputs are the original
    audio and enter the mixture protocol as such.
    """
    seg = cfg.mel.segment_samples
    reference, _ = reference_set(manifest, cfg.eval.split, seg)
    stem_names = tuple(manifest.stems)
    groups: Dict[Tuple[str, Tuple[int, ...]], List[np.ndarray]] = {}
    for root in directories:
        root = Path(root)
        sample_dirs = [root] if (root / "metadata.json").exists() else sorted(
            p for p in root.iterdir() if (p / "metadata.json").exists())
        for path in sample_dirs:
            metadata, stems = _read_sample_dir(path, stem_names, manifest.sample_rate)
            generated_names = metadata.get("generated", list(stem_names))
            subset = tuple(stem_names.index(n) for n in generated_names)
            groups.setdefault((metadata.get("mode", "total"), subset), []).append(stems[:, :seg])
    if not groups:
        raise EvaluationError(f"no sample directories with metadata.json under {', '.join(map(str, directories))}")

    report = FADReport("generated directories")
    for (mode, subset), clips in sorted(groups.items()):
        generated = np.stack(clips).astype(np.float64)
        name = mode if len(subset) == len(stem_names) else subset_label(subset, stem_names)
        for protocol in protocols:
            report.add(evaluate_protocol(generated, generated, reference, protocol, embed,
                                         subset=subset, stem_names=stem_names, name=name))
    return report
