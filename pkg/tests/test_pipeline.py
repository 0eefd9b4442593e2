import json

import numpy as np
import pytest

from stemdiff.data.models import StemStack
from stemdiff.data.storage import read_wav, write_wav
from stemdiff.errors import CheckpointError
from stemdiff.pipeline import GeneratedSample, require_components, write_sample

from .helpers import sine


def _sample(length=1600):
    stems = np.stack([sine(110 * (k + 1), length / 16000, 16000, 0.1) for k in range(4)])
    stack = StemStack(stems, 16000)
    return GeneratedSample(stack, stems.sum(axis=0), {"mode": "arrange", "seed": 7,
                                                      "given": ["bass"], "generated": ["drums", "guitar", "piano"]})


def test_write_sample_copies_given_files_verbatim(tmp_path):
    original = write_wav(tmp_path / "in" / "bass.wav", sine(55, 0.2, 16000, 0.3))
    sample = _sample()
    sample.rendered_given["bass"] = sample.stems.stems[0]
    out = write_sample(tmp_path / "out", sample, given_files={"bass": original})

    assert (out / "bass.wav").read_bytes() == original.read_bytes()
    assert (out / "bass.rendered.wav").exists()
    for name in ("drums", "guitar", "piano", "mixture"):
        audio, _ = read_wav(out / f"{name}.wav")
        assert len(audio) == 1600
    metadata = json.loads((out / "metadata.json").read_text())
    assert metadata["seed"] == 7 and metadata["given"] == ["bass"]


def test_require_components_names_first_missing_stage(tmp_path):
    with pytest.raises(CheckpointError, match="--stage vae"):
        require_components(tmp_path)
