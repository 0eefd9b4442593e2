import json

import pytest

from stemdiff.config.defaults import get_default_run_config, get_full_scale_config, get_micro_config
from stemdiff.config.sections import RunConfig
from stemdiff.config.validation import (CHECKPOINT_ROOT_ENV, apply_overrides, config_to_dict,
                                        load_run_config, save_run_config)
from stemdiff.errors import ConfigError


@pytest.mark.parametrize("factory", [get_default_run_config, get_full_scale_config, get_micro_config])
def test_presets_validate(factory):
    factory().validate()


def test_default_hyperparameters():
    cfg = get_default_run_config()
    assert cfg.ldm.num_steps == 1000
    assert cfg.ldm.lr == pytest.approx(3e-5)
    assert cfg.ldm.condition_dropout == pytest.approx(0.1)
    assert cfg.sampler.inference_steps == 200
    assert cfg.sampler.guidance_weight == pytest.approx(2.0)
    assert (cfg.dataset.n_train, cfg.dataset.n_valid, cfg.dataset.n_test) == (512, 64, 64)


def test_overrides_parse_json_literals():
    data = config_to_dict(RunConfig())
    apply_overrides(data, ["ldm.lr=1e-4", "sampler.method=ddpm", "dataset.tags=[\"a\", \"b\"]"])
    assert data["ldm"]["lr"] == pytest.approx(1e-4)
    assert data["sampler"]["method"] == "ddpm"
    assert data["dataset"]["tags"] == ["a", "b"]


def test_unknown_override_key_rejected():
    with pytest.raises(ConfigError, match="ldm.learning_rate"):
        load_run_config(None, ["ldm.learning_rate=0.1"])


def test_unknown_file_key_rejected(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"sampler": {"guidance": 3.0}}))
    with pytest.raises(ConfigError, match="sampler.guidance"):
        load_run_config(path)


def test_partial_file_merges_with_base(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"sampler": {"guidance_weight": 3.5}}))
    cfg = load_run_config(path, base=get_micro_config())
    assert cfg.sampler.guidance_weight == pytest.approx(3.5)
    assert cfg.mel.frames == 16


def test_saved_config_reloads_identically(tmp_path, monkeypatch):
    monkeypatch.delenv(CHECKPOINT_ROOT_ENV, raising=False)
    cfg = get_micro_config()
    save_run_config(cfg, tmp_path / "run.json")
    assert load_run_config(tmp_path / "run.json") == cfg


def test_invalid_json_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_checkpoint_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(CHECKPOINT_ROOT_ENV, str(tmp_path / "ckpt"))
    assert load_run_config(None).checkpoint_root == str(tmp_path / "ckpt")


def test_explicit_override_beats_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(CHECKPOINT_ROOT_ENV, str(tmp_path / "env"))
    cfg = load_run_config(None, [f"checkpoint_root={tmp_path / 'flag'}"])
    assert cfg.checkpoint_root == str(tmp_path / "flag")


@pytest.mark.parametrize("override", [
    "sampler.inference_steps=2000",
    "vae.compression=3",
    "sampler.cfg_convention=\"other\"",
    "mel.sample_rate=22050",
    "log_level=LOUD",
])
def test_invalid_values_rejected(override):
    with pytest.raises(ConfigError):
        load_run_config(None, [override])
