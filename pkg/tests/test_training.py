import dataclasses

import pytest

from stemdiff.data.dataset import StemSegmentDataset
from stemdiff.errors import DatasetError
from stemdiff.training.common import require_examples
from stemdiff.training.contrastive import contrastive_train
from stemdiff.training.vae import train_vae


@pytest.fixture
def no_train_manifest(tiny_manifest):
    return dataclasses.replace(tiny_manifest, splits={**tiny_manifest.splits, "train": []})


@pytest.mark.parametrize("trainer", [train_vae, contrastive_train])
def test_empty_training_split_is_a_dataset_error(trainer, no_train_manifest, micro_cfg, tmp_path):
    with pytest.raises(DatasetError, match="training split is empty"):
        trainer(micro_cfg, no_train_manifest, tmp_path / "checkpoints")


def test_require_examples_names_the_stage(no_train_manifest, micro_cfg):
    empty = StemSegmentDataset(no_train_manifest, "train", micro_cfg.mel)
    with pytest.raises(DatasetError, match="ldm"):
        require_examples(empty, "ldm")
    require_examples(StemSegmentDataset(no_train_manifest, "valid", micro_cfg.mel), "ldm")
