import numpy as np
import pytest
import torch

from stemdiff.data.storage import (CheckpointDir, load_json, read_wav, require_prerequisites, save_json,
                                   to_pcm16, write_wav)
from stemdiff.errors import CheckpointError, DatasetError


def test_wav_round_trip_is_exact_for_16_bit_levels(tmp_path):
    audio = np.round(np.random.default_rng(0).uniform(-0.9, 0.9, 1600) * 32768) / 32768
    write_wav(tmp_path / "a.wav", audio)
    back, rate = read_wav(tmp_path / "a.wav")
    assert rate == 16000
    np.testing.assert_array_equal(back, audio.astype(np.float32))


def test_pcm_conversion_clips():
    assert to_pcm16(np.array([1.5, -1.5, 0.0])).tolist() == [32767, -32768, 0]


def test_read_wav_errors(tmp_path):
    with pytest.raises(DatasetError):
        read_wav(tmp_path / "missing.wav")
    write_wav(tmp_path / "b.wav", np.zeros(100), sample_rate=8000)
    with pytest.raises(DatasetError, match="8000"):
        read_wav(tmp_path / "b.wav")
    with pytest.raises(DatasetError):
        write_wav(tmp_path / "c.wav", np.zeros((2, 100)))


def test_json_schema_version_is_checked(tmp_path):
    path = save_json(tmp_path / "m.json", {"x": 1})
    assert load_json(path)["x"] == 1
    path.write_text('{"schema_version": 99}')
    with pytest.raises(DatasetError, match="schema_version"):
        load_json(path)


def test_checkpoint_save_and_reload(tmp_path):
    ckpt = CheckpointDir(tmp_path, "vae")
    assert not ckpt.exists()
    model = torch.nn.Linear(3, 2)
    ckpt.save(model, {"architecture": {"in": 3}}, {"seed": 0}, state={"epoch": 1})
    assert ckpt.exists() and ckpt.has_state()
    assert ckpt.load_manifest()["stage"] == "vae"
    assert ckpt.load_config()["seed"] == 0
    assert ckpt.load_state()["epoch"] == 1
    restored = torch.nn.Linear(3, 2)
    restored.load_state_dict(ckpt.load_weights())
    assert torch.equal(restored.weight, model.weight)


def test_missing_prerequisite_names_the_stage(tmp_path):
    with pytest.raises(CheckpointError, match="stemdiff train --stage vae"):
        require_prerequisites(tmp_path, "ldm")
    with pytest.raises(CheckpointError):
        CheckpointDir(tmp_path, "gan")
