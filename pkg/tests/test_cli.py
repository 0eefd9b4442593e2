import itertools
import json

import pytest

from stemdiff.config.validation import CHECKPOINT_ROOT_ENV
from stemdiff.data.dataset import DatasetManifest
from stemdiff.main import EXIT_ERROR, main


@pytest.fixture
def cli(tmp_path, monkeypatch):
    """main() under the micro preset with every output inside tmp_path."""
    monkeypatch.delenv(CHECKPOINT_ROOT_ENV, raising=False)
    base = [
        "--preset", "micro",
        "--set", f"dataset.root={tmp_path / 'data'}",
        "--set", f"checkpoint_root={tmp_path / 'checkpoints'}",
        "--set", f"output_root={tmp_path / 'outputs'}",
        "--log-level", "WARNING",
    ]
    return lambda *args: main(base + list(args))


def test_config_dump_writes_loadable_json(cli, tmp_path):
    out = tmp_path / "run.json"
    assert cli("--set", "sampler.guidance_weight=2.5", "config", "dump", "--out", str(out)) == 0
    data = json.loads(out.read_text())
    assert data["sampler"]["guidance_weight"] == 2.5
    assert main(["--config", str(out), "config", "dump"]) == 0


def test_bad_override_exits_with_error(cli, capsys):
    assert cli("--set", "sampler.nonexistent=1", "config", "dump") == EXIT_ERROR
    assert "nonexistent" in capsys.readouterr().err


def test_training_without_dataset_exits_with_error(cli, capsys):
    assert cli("train", "--stage", "vae") == EXIT_ERROR
    assert "stemdiff dataset build" in capsys.readouterr().err


def test_ldm_training_names_the_missing_stage(cli, capsys):
    assert cli("dataset", "build") == 0
    assert cli("train", "--stage", "ldm") == EXIT_ERROR
    assert "missing vae checkpoint" in capsys.readouterr().err


def test_sampling_without_checkpoints_exits_with_error(cli, capsys):
    assert cli("sample", "--mode", "total") == EXIT_ERROR
    assert "stemdiff train --stage" in capsys.readouterr().err


def test_dataset_build_refuses_non_empty_root(cli):
    assert cli("dataset", "build") == 0
    assert cli("dataset", "build") == EXIT_ERROR
    assert cli("dataset", "build", "--force") == 0


@pytest.mark.slow
def test_micro_pipeline_end_to_end(cli, tmp_path, capsys):
    assert cli("dataset", "build") == 0
    for stage in ("vae", "clap", "ldm"):
        assert cli("train", "--stage", stage) == 0
        assert (tmp_path / "checkpoints" / stage / "manifest.json").exists()

    assert cli("sample", "--mode", "total", "--num-samples", "2") == 0
    samples = sorted((tmp_path / "outputs" / "total").iterdir())
    assert len(samples) == 2
    for name in ("bass", "drums", "guitar", "piano", "mixture"):
        assert (samples[0] / f"{name}.wav").exists()
    metadata = json.loads((samples[0] / "metadata.json").read_text())
    assert metadata["mode"] == "total"

    assert cli("sample", "--mode", "tag_cond", "--tag", "soft") == 0
    assert cli("sample", "--mode", "tag_cond") == EXIT_ERROR

    assert cli("arrange", "--given", "bass,drums", "--split", "test", "--limit", "1") == 0
    arranged = tmp_path / "outputs" / "arrange_GP"
    sample_dirs = [p for p in arranged.rglob("metadata.json")]
    assert len(sample_dirs) == 1
    assert json.loads(sample_dirs[0].read_text())["generated"] == ["guitar", "piano"]

    assert cli("arrange", "--given", "", "--split", "test", "--limit", "1") == EXIT_ERROR
    assert "--allow-degenerate" in capsys.readouterr().err

    assert cli("evaluate", "--task", "total") == 0
    report = json.loads((tmp_path / "outputs" / "reports" / "total" / "report.json").read_text())
    assert {row["name"] for row in report["rows"]} == {"total", "audio_cond", "noise"}

    assert cli("evaluate", "--generated", str(tmp_path / "outputs" / "total")) == 0
    assert (tmp_path / "outputs" / "reports" / "generated" / "report.txt").exists()

    assert cli("arrange", "--given", "bass,drums", "--tag", "soft", "--guidance-weight", "1.5",
               "--split", "test", "--limit", "1", "--out", str(tmp_path / "tagged")) == 0
    tagged = json.loads(next((tmp_path / "tagged").rglob("metadata.json")).read_text())
    assert tagged["tag"] == "soft"
    assert tagged["guidance_weight"] == 1.5
    assert cli("arrange", "--given", "bass", "--tag", "unheard-of", "--split", "test") == EXIT_ERROR

    labels = {"".join(c) for size in (1, 2, 3) for c in itertools.combinations("BDGP", size)}
    assert cli("arrange", "--all-subsets") == 0
    subsets = json.loads((tmp_path / "outputs" / "arrangement" / "report.json").read_text())
    assert {row["name"] for row in subsets["rows"]} == labels

    assert cli("evaluate", "--task", "arrangement") == 0
    arrangement = json.loads((tmp_path / "outputs" / "reports" / "arrangement" / "report.json").read_text())
    assert len({row["name"] for row in arrangement["rows"]}) == 14
    assert {row["protocol"] for row in arrangement["rows"]} == {"mixture", "stem", "noise"}

    assert cli("evaluate", "--task", "tags") == 0
    tags = DatasetManifest.load(tmp_path / "data").tags
    cross = json.loads((tmp_path / "outputs" / "reports" / "tags" / "report.json").read_text())
    names = [row["name"] for row in cross["rows"]]
    assert sorted(names) == sorted(f"{p}->{t}" for p in tags for t in tags)
