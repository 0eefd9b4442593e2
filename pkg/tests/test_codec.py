import math

import numpy as np
import pytest
import torch

from stemdiff.audio.codec import MelVAE, kl_divergence, latent_geometry, vae_decode, vae_encode, vae_loss
from stemdiff.data.models import MelStack
from stemdiff.errors import ShapeMismatchError
from stemdiff.utils.seeding import make_generator


@pytest.fixture
def vae():
    torch.manual_seed(0)
    return MelVAE(latent_channels=2, compression=2, base_channels=4, mel_mean=-5.0, mel_std=2.0).eval()


def test_encode_decode_shapes(vae):
    mels = torch.randn(3, 4, 16, 8)
    z = vae_encode(mels, vae)
    assert z.shape == (3, 4, 2, 8, 4)
    assert vae_decode(z, vae).shape == (3, 4, 16, 8)
    geometry = latent_geometry(vae, 4, 16, 8)
    assert geometry.latent_shape == (4, 2, 8, 4)


def test_single_stack_round_trip_types(vae):
    stack = MelStack(np.random.default_rng(0).normal(size=(4, 16, 8)).astype(np.float32))
    z = vae_encode(stack, vae)
    assert z.shape == (4, 2, 8, 4)
    decoded = vae_decode(z, vae, hop_length=160)
    assert isinstance(decoded, MelStack)
    assert decoded.mels.shape == (4, 16, 8)


def test_stems_are_encoded_independently(vae):
    mels = torch.randn(1, 4, 16, 8)
    changed = mels.clone()
    changed[0, 1] += 3.0
    a, b = vae_encode(mels, vae), vae_encode(changed, vae)
    assert torch.equal(a[:, [0, 2, 3]], b[:, [0, 2, 3]])
    assert not torch.equal(a[:, 1], b[:, 1])


def test_mean_encoding_is_deterministic_and_sampling_seeded(vae):
    mels = torch.randn(2, 4, 16, 8)
    assert torch.equal(vae_encode(mels, vae), vae_encode(mels, vae))
    s1 = vae_encode(mels, vae, mode="sample", generator=make_generator(3))
    s2 = vae_encode(mels, vae, mode="sample", generator=make_generator(3))
    assert torch.equal(s1, s2)
    with pytest.raises(ValueError):
        vae_encode(mels, vae, mode="mode")


def test_statistics_are_stored_in_state_dict(vae):
    state = vae.state_dict()
    assert float(state["mel_mean"]) == -5.0
    assert float(state["mel_std"]) == 2.0
    rebuilt = MelVAE(**vae.architecture())
    rebuilt.load_state_dict(state)
    mels = torch.randn(1, 4, 16, 8)
    assert torch.equal(vae_encode(mels, rebuilt.eval()), vae_encode(mels, vae))


def test_loss_terms(vae):
    vae.train()
    out = vae_loss(vae, torch.randn(2, 4, 16, 8), kl_weight=1e-4, generator=make_generator(0))
    assert set(out) >= {"loss", "mse", "kl"}
    assert all(torch.isfinite(v) for v in out.values())
    out["loss"].backward()
    zeros = torch.zeros(2, 3)
    assert float(kl_divergence(zeros, zeros)) == 0.0


def test_invalid_geometry(vae):
    with pytest.raises(ShapeMismatchError):
        vae_encode(torch.randn(1, 4, 15, 8), vae)
    with pytest.raises(ShapeMismatchError):
        vae_decode(torch.randn(1, 4, 3, 8, 4), vae)
    with pytest.raises(ValueError):
        MelVAE(compression=3)


def test_decode_never_goes_below_log_floor():
    torch.manual_seed(0)
    wide = MelVAE(latent_channels=2, compression=2, base_channels=4, mel_mean=-5.0, mel_std=20.0).eval()
    z = torch.randn(4, 2, 8, 4) * 50
    decoded = vae_decode(z, wide, hop_length=160, log_floor=1e-5)
    assert decoded.mels.min() >= math.log(1e-5) - 1e-5
    batch = vae_decode(z.unsqueeze(0), wide, log_floor=1e-5)
    assert float(batch.min()) >= math.log(1e-5) - 1e-5


def test_mel_stack_rejects_bad_input():
    with pytest.raises(ShapeMismatchError):
        MelStack(np.zeros((16, 8)))
    bad = np.zeros((4, 16, 8))
    bad[1, 3, 2] = np.nan
    with pytest.raises(ValueError):
        MelStack(bad)
