"""
Evaluation protocols and reports.

`mixture` mixes the generated stems with the original given stems and
compares the result with reference mixtures. `stem` compares the sum of the
generated subset with the sum of the same subset of the reference stems.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config.sections import SCHEMA_VERSION
from ..data.models import STEM_NAMES, subset_label
from ..errors import EvaluationError
from .fad import Embedder, toy_fad

logger = logging.getLogger(__name__)

PROTOCOLS = ("mixture", "stem")
METRIC_NAME = "toy-FAD"


@dataclass
class FADResult:
    """
    One toy-FAD measurement.

    Attributes:
        name: Row label, e.g. a subset label "BD", a mode or "prompt->target"
        protocol: "mixture" or "stem"
        fad: Distance value (NaN marks a failed measurement)
        n_generated: Clips on the generated side
        n_reference: Clips on the reference side
    """
    name: str
    protocol: str
    fad: float
    n_generated: int
    n_reference: int


def _check_stems(array: np.ndarray, what: str) -> np.ndarray:
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 3 or array.shape[0] == 0:
        raise EvaluationError(f"{what}: expected a non-empty (n, S, samples) array, got shape {array.shape}")
    return array


def protocol_clips(generated: np.ndarray, given: Optional[np.ndarray], reference: np.ndarray,
                   subset: Sequence[int], protocol: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generated-side and reference-side clips of one protocol.

    Args:
        generated: (n, S, L) generated stems (only `subset` is read)
        given: (n, S, L) original stems the generation was conditioned on, or
            None when every stem was generated
        reference: (m, S, L) reference stems
        subset: Indices of the generated stems
        protocol: "mixture" or "stem"
    """
    generated = _check_stems(generated, "generated")
    reference = _check_stems(reference, "reference")
    num_stems = generated.shape[1]
    subset = tuple(sorted(set(subset)))
    if not subset or any(not 0 <= i < num_stems for i in subset):
        raise EvaluationError(f"subset {subset} is not a non-empty subset of {num_stems} stems")
    if reference.shape[1:] != generated.shape[1:]:
        raise EvaluationError(f"reference shape {reference.shape[1:]} != generated shape {generated.shape[1:]}")
    complement = [i for i in range(num_stems) if i not in subset]

    if protocol == "stem":
        return generated[:, list(subset)].sum(axis=1), reference[:, list(subset)].sum(axis=1)
    if protocol != "mixture":
        raise EvaluationError(f"unknown protocol {protocol!r} (expected mixture or stem)")

    mixed = generated[:, list(subset)].sum(axis=1)
    if complement:
        if given is None:
            raise EvaluationError(f"mixture protocol for subset {subset} needs the given stems")
        given = _check_stems(given, "given")
        if given.shape != generated.shape:
            raise EvaluationError(f"given shape {given.shape} != generated shape {generated.shape}")
        mixed = mixed + given[:, complement].sum(axis=1)
    return mixed, reference.sum(axis=1)


def evaluate_protocol(generated: np.ndarray, given: Optional[np.ndarray], reference: np.ndarray,
                      protocol: str, embed: Embedder, subset: Optional[Sequence[int]] = None,
                      stem_names: Sequence[str] = STEM_NAMES, name: Optional[str] = None) -> FADResult:
    """toy-FAD of one generated subset under one protocol (all stems by default)."""
    if subset is None:
        subset = tuple(range(np.asarray(generated).shape[1]))
    generated_clips, reference_clips = protocol_clips(generated, given, reference, subset, protocol)
    fad = toy_fad(generated_clips, reference_clips, embed)
    label = name or subset_label(subset, stem_names)
    logger.info("%s %s %s = %.4f", METRIC_NAME, protocol, label, fad)
    return FADResult(label, protocol, fad, len(generated_clips), len(reference_clips))


def noise_baseline(reference: np.ndarray, seed: int, num_clips: Optional[int] = None) -> np.ndarray:
    """Gaussian-noise clips with the RMS of the reference clips, shape (n, samples)."""
    reference = np.asarray(reference, dtype=np.float64)
    rms = float(np.sqrt(np.mean(reference ** 2)))
    rng = np.random.default_rng(seed)
    shape = (num_clips or reference.shape[0],) + reference.shape[1:]
    return rng.standard_normal(shape) * rms


@dataclass
class FADReport:
    """Rows of toy-FAD results plus the layout used to print them."""
    title: str
    results: List[FADResult] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def add(self, result: FADResult) -> None:
        self.results.append(result)

    def has_nan(self) -> bool:
        return any(not math.isfinite(r.fad) for r in self.results)

    def value(self, name: str, protocol: str) -> float:
        for r in self.results:
            if r.name == name and r.protocol == protocol:
                return r.fad
        raise KeyError((name, protocol))

    def to_dict(self) -> Dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "metric": METRIC_NAME,
            "title": self.title,
            "notes": self.notes,
            "rows": [asdict(r) for r in self.results],
        }

    def to_text(self) -> str:
        """
        Fixed-width table: one row per protocol, one column per result name
        (the subset columns B, D, ..., DGP for arrangement reports).
        """
        names: List[str] = []
        protocols: List[str] = []
        for r in self.results:
            if r.name not in names:
                names.append(r.name)
            if r.protocol not in protocols:
                protocols.append(r.protocol)
        width = max([8] + [len(n) + 1 for n in names])
        lines = [f"{self.title} ({METRIC_NAME}; not comparable to FAD with pretrained embedders)"]
        lines.append("protocol".ljust(10) + "".join(n.rjust(width) for n in names))
        for protocol in protocols:
            cells = []
            for n in names:
                try:
                    cells.append(f"{self.value(n, protocol):.3f}".rjust(width))
                except KeyError:
                    cells.append("-".rjust(width))
            lines.append(protocol.ljust(10) + "".join(cells))
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"


def write_report(report: FADReport, out_dir: Union[str, Path], stem: str = "report") -> Tuple[Path, Path]:
    """Write <stem>.txt and <stem>.json into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / f"{stem}.txt"
    json_path = out_dir / f"{stem}.json"
    text_path.write_text(report.to_text(), encoding="utf-8")
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return text_path, json_path
