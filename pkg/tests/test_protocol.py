import json
import math

import numpy as np
import pytest

from stemdiff.errors import EvaluationError
from stemdiff.evaluation.protocol import (FADReport, FADResult, evaluate_protocol, noise_baseline,
                                          protocol_clips, write_report)

from .helpers import toy_embed


@pytest.fixture
def stems():
    rng = np.random.default_rng(0)
    generated = rng.normal(size=(6, 4, 400))
    given = rng.normal(size=(6, 4, 400))
    reference = rng.normal(size=(8, 4, 400))
    return generated, given, reference


def test_stem_protocol_sums_the_subset(stems):
    generated, given, reference = stems
    gen, ref = protocol_clips(generated, given, reference, (0, 2), "stem")
    np.testing.assert_allclose(gen, generated[:, 0] + generated[:, 2])
    np.testing.assert_allclose(ref, reference[:, 0] + reference[:, 2])


def test_mixture_protocol_uses_original_given_stems(stems):
    generated, given, reference = stems
    gen, ref = protocol_clips(generated, given, reference, (1,), "mixture")
    np.testing.assert_allclose(gen, generated[:, 1] + given[:, 0] + given[:, 2] + given[:, 3])
    np.testing.assert_allclose(ref, reference.sum(axis=1))


def test_full_subset_needs_no_given_stems(stems):
    generated, _, reference = stems
    gen, _ = protocol_clips(generated, None, reference, range(4), "mixture")
    np.testing.assert_allclose(gen, generated.sum(axis=1))


def test_protocol_errors(stems):
    generated, given, reference = stems
    with pytest.raises(EvaluationError, match="given"):
        protocol_clips(generated, None, reference, (0,), "mixture")
    with pytest.raises(EvaluationError):
        protocol_clips(generated, given, reference, (), "stem")
    with pytest.raises(EvaluationError):
        protocol_clips(generated, given, reference, (4,), "stem")
    with pytest.raises(EvaluationError):
        protocol_clips(generated, given, reference, (0,), "spectral")
    with pytest.raises(EvaluationError):
        protocol_clips(generated, given, reference[:, :, :300], (0,), "stem")


def test_evaluate_protocol_labels_subsets(stems):
    generated, given, reference = stems
    result = evaluate_protocol(generated, given, reference, "stem", toy_embed, subset=(0, 1))
    assert result.name == "BD" and result.protocol == "stem"
    assert result.n_generated == 6 and result.n_reference == 8
    assert result.fad >= 0.0


def test_noise_baseline_matches_reference_rms():
    reference = 0.2 * np.ones((3, 16000))
    noise = noise_baseline(reference, seed=0, num_clips=5)
    assert noise.shape == (5, 16000)
    assert np.sqrt(np.mean(noise ** 2)) == pytest.approx(0.2, rel=0.01)
    np.testing.assert_array_equal(noise, noise_baseline(reference, seed=0, num_clips=5))


def test_report_layout_and_files(tmp_path):
    report = FADReport("arrangement generation")
    for name, value in (("B", 0.5), ("DGP", 1.25)):
        report.add(FADResult(name, "mixture", value, 4, 4))
    report.add(FADResult("B", "stem", 0.75, 4, 4))
    report.notes.append("note line")

    text = report.to_text()
    lines = text.splitlines()
    assert lines[1].split() == ["protocol", "B", "DGP"]
    assert lines[2].split() == ["mixture", "0.500", "1.250"]
    assert lines[3].split() == ["stem", "0.750", "-"]
    assert lines[-1] == "note line"
    assert report.value("DGP", "mixture") == 1.25
    with pytest.raises(KeyError):
        report.value("DGP", "stem")

    text_path, json_path = write_report(report, tmp_path)
    assert text_path.read_text() == text
    data = json.loads(json_path.read_text())
    assert data["metric"] == "toy-FAD" and len(data["rows"]) == 3
    assert not report.has_nan()
    report.add(FADResult("G", "stem", math.nan, 4, 4))
    assert report.has_nan()
