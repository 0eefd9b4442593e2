import numpy as np
import pytest

from stemdiff.data.dataset import (DatasetManifest, StemSegmentDataset, build_dataset, load_mixture,
                                   load_segment, segment_offset)
from stemdiff.data.storage import read_wav
from stemdiff.errors import DatasetError


def test_split_counts_and_balanced_tags(tiny_manifest):
    assert tiny_manifest.counts == {"train": 8, "valid": 4, "test": 4}
    tags = [e.tag for e in tiny_manifest.entries("train")]
    assert tags == ["soft", "energetic"] * 4


def test_splits_use_disjoint_seeds(tiny_manifest):
    seeds = [e.seed for split in ("train", "valid", "test") for e in tiny_manifest.entries(split)]
    assert len(set(seeds)) == len(seeds)


def test_mixture_wav_is_exact_sum_of_stem_wavs(tiny_manifest):
    for entry in tiny_manifest.entries("valid"):
        stems = [read_wav(tiny_manifest.resolve(entry.stems[n]))[0].astype(np.float64) for n in tiny_manifest.stems]
        mixture, _ = read_wav(tiny_manifest.resolve(entry.mixture))
        np.testing.assert_array_equal(mixture.astype(np.float64), np.sum(stems, axis=0))


def test_manifest_reload(tiny_manifest):
    loaded = DatasetManifest.load(tiny_manifest.root)
    assert loaded.to_dict() == tiny_manifest.to_dict()
    assert loaded.entries("test")[0].example_spec().tag == tiny_manifest.entries("test")[0].tag


def test_missing_manifest_points_to_build(tmp_path):
    with pytest.raises(DatasetError, match="stemdiff dataset build"):
        DatasetManifest.load(tmp_path)


def test_rebuild_needs_force(tiny_manifest, micro_cfg):
    with pytest.raises(DatasetError, match="--force"):
        build_dataset(micro_cfg.dataset, tiny_manifest.root, micro_cfg.mel.sample_rate)
    rebuilt = build_dataset(micro_cfg.dataset, tiny_manifest.root, micro_cfg.mel.sample_rate, force=True)
    assert rebuilt.counts == tiny_manifest.counts


def test_segments_are_aligned_crops(tiny_manifest, micro_cfg):
    entry = tiny_manifest.entries("train")[0]
    length = micro_cfg.mel.segment_samples
    segment = load_segment(tiny_manifest, entry, length)
    assert segment.stems.shape == (4, length)
    shifted = load_segment(tiny_manifest, entry, length, offset=100)
    full = load_segment(tiny_manifest, entry, length + 100)
    np.testing.assert_array_equal(shifted.stems, full.stems[:, 100:])
    np.testing.assert_array_equal(load_mixture(tiny_manifest, entry, length, offset=100), shifted.mixture())


def test_segment_offset_bounds():
    assert segment_offset(100, 100, True, np.random.default_rng(0)) == 0
    rng = np.random.default_rng(0)
    assert all(0 <= segment_offset(100, 40, True, rng) <= 60 for _ in range(50))
    with pytest.raises(DatasetError):
        segment_offset(10, 40, False, None)
    with pytest.raises(ValueError):
        segment_offset(100, 40, True, None)


def test_segment_dataset_items(tiny_manifest, micro_cfg):
    dataset = StemSegmentDataset(tiny_manifest, "train", micro_cfg.mel, random_shift=True, seed=3)
    assert len(dataset) == 8
    item = dataset[1]
    assert tuple(item["mels"].shape) == (4, micro_cfg.mel.frames, micro_cfg.mel.n_mels)
    assert tuple(item["mixture_mel"].shape) == (micro_cfg.mel.frames, micro_cfg.mel.n_mels)
    assert int(item["tag"]) == tiny_manifest.tag_index("energetic")
    again = StemSegmentDataset(tiny_manifest, "train", micro_cfg.mel, random_shift=True, seed=3)[1]
    assert np.array_equal(item["mels"].numpy(), again["mels"].numpy())


def test_unknown_split(tiny_manifest):
    with pytest.raises(DatasetError):
        tiny_manifest.entries("holdout")
