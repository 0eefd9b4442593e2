"""
Per-stem mel VAE.

Every stem of a mel stack is encoded on its own by the same 2D convolutional
encoder, so a (B, S, T, F) batch becomes a (B, S, C, T/r, F/r) latent stack.
"""

import logging
import math
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config.sections import VAEConfig
from ..data.models import LatentGeometry, MelStack, as_float_tensor
from ..errors import ShapeMismatchError

logger = logging.getLogger(__name__)

# logvar is clamped to this range before exponentiation
LOGVAR_RANGE = (-30.0, 20.0)


def group_count(channels: int, max_groups: int) -> int:
    """Largest group count <= max_groups that divides `channels`."""
    groups = max(1, min(max_groups, channels))
    while channels % groups:
        groups -= 1
    return groups


def _norm(channels: int, max_groups: int = 8) -> nn.GroupNorm:
    return nn.GroupNorm(group_count(channels, max_groups), channels)


class MelVAE(nn.Module):
    """
    Convolutional VAE over single-stem log-mels.

    log2(r) stride-2 stages halve time and frequency; the mean and log
    variance heads each produce C channels. Log-mels are standardised with the
    scalar training statistics kept in the `mel_mean`/`mel_std` buffers.
    """

    def __init__(self, latent_channels: int = 8, compression: int = 4, base_channels: int = 32,
                 mel_mean: float = 0.0, mel_std: float = 1.0):
        super().__init__()
        if compression < 1 or compression & (compression - 1):
            raise ValueError(f"compression must be a power of two, got {compression}")

        self.latent_channels = latent_channels
        self.compression = compression
        self.base_channels = base_channels
        self.num_stages = int(round(math.log2(compression)))

        self.register_buffer("mel_mean", torch.tensor(float(mel_mean)))
        self.register_buffer("mel_std", torch.tensor(float(mel_std)))

        widths = [base_channels * 2 ** i for i in range(self.num_stages + 1)]

        encoder = [nn.Conv2d(1, widths[0], 3, padding=1)]
        for i in range(self.num_stages):
            encoder += [_norm(widths[i]), nn.SiLU(),
                        nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)]
        encoder += [_norm(widths[-1]), nn.SiLU(),
                    nn.Conv2d(widths[-1], 2 * latent_channels, 3, padding=1)]
        self.encoder = nn.Sequential(*encoder)

        decoder = [nn.Conv2d(latent_channels, widths[-1], 3, padding=1)]
        for i in reversed(range(self.num_stages)):
            decoder += [_norm(widths[i + 1]), nn.SiLU(),
                        nn.ConvTranspose2d(widths[i + 1], widths[i], 4, stride=2, padding=1)]
        decoder += [_norm(widths[0]), nn.SiLU(), nn.Conv2d(widths[0], 1, 3, padding=1)]
        self.decoder = nn.Sequential(*decoder)

    @classmethod
    def from_config(cls, cfg: VAEConfig, mel_mean: float = 0.0, mel_std: float = 1.0) -> "MelVAE":
        return cls(cfg.latent_channels, cfg.compression, cfg.base_channels, mel_mean, mel_std)

    def architecture(self) -> Dict[str, Any]:
        """Constructor arguments, enough to rebuild the network."""
        return {
            "latent_channels": self.latent_channels,
            "compression": self.compression,
            "base_channels": self.base_channels,
        }

    def set_statistics(self, mean: float, std: float) -> None:
        self.mel_mean.fill_(float(mean))
        self.mel_std.fill_(max(float(std), 1e-6))

    def _check_mels(self, mels: torch.Tensor) -> None:
        if mels.ndim != 4:
            raise ShapeMismatchError(f"expected (B, S, T, F) mels, got shape {tuple(mels.shape)}")
        r = self.compression
        if mels.shape[2] % r or mels.shape[3] % r:
            raise ShapeMismatchError(
                f"compression {r} must divide mel frames and bins, got shape {tuple(mels.shape)}"
            )

    def encode_moments(self, mels: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(B, S, T, F) log-mels -> mean and log variance of shape (B, S, C, T/r, F/r)."""
        self._check_mels(mels)
        b, s, t, f = mels.shape
        x = (mels.reshape(b * s, 1, t, f) - self.mel_mean) / self.mel_std
        moments = self.encoder(x)
        mean, logvar = moments.chunk(2, dim=1)
        logvar = logvar.clamp(*LOGVAR_RANGE)
        shape = (b, s, self.latent_channels) + tuple(mean.shape[-2:])
        return mean.reshape(shape), logvar.reshape(shape)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """(B, S, C, T/r, F/r) latents -> (B, S, T, F) log-mels."""
        if z.ndim != 5 or z.shape[2] != self.latent_channels:
            raise ShapeMismatchError(
                f"expected (B, S, {self.latent_channels}, T/r, F/r) latents, got shape {tuple(z.shape)}"
            )
        b, s, c, t, f = z.shape
        x = self.decoder(z.reshape(b * s, c, t, f))
        x = x * self.mel_std + self.mel_mean
        return x.reshape(b, s, t * self.compression, f * self.compression)

    def forward(self, mels: torch.Tensor, generator: Optional[torch.Generator] = None):
        mean, logvar = self.encode_moments(mels)
        noise = torch.randn(mean.shape, generator=generator, device=mean.device, dtype=mean.dtype)
        z = mean + torch.exp(0.5 * logvar) * noise
        return self.decode(z), mean, logvar


def kl_divergence(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Mean over elements of KL(N(mean, exp(logvar)) || N(0, 1))."""
    return 0.5 * torch.mean(mean.pow(2) + logvar.exp() - 1.0 - logvar)


def vae_loss(vae: MelVAE, mels: torch.Tensor, kl_weight: float,
             generator: Optional[torch.Generator] = None) -> Dict[str, torch.Tensor]:
    """
    Reconstruction MSE plus kl_weight times the KL term.

    The MSE is measured on standardised log-mels so the KL weight does not
    depend on the dB range of the data.
    """
    recon, mean, logvar = vae(mels, generator=generator)
    mse = F.mse_loss((recon - vae.mel_mean) / vae.mel_std, (mels - vae.mel_mean) / vae.mel_std)
    kl = kl_divergence(mean, logvar)
    return {"loss": mse + kl_weight * kl, "mse": mse, "kl": kl}


def _mels_tensor(m: Union[MelStack, np.ndarray, torch.Tensor], device: torch.device) -> Tuple[torch.Tensor, bool]:
    """Batched (B, S, T, F) tensor plus whether the input was unbatched."""
    if isinstance(m, MelStack):
        m = m.mels
    x = m.to(device=device, dtype=torch.float32) if isinstance(m, torch.Tensor) else as_float_tensor(m, device)
    if x.ndim == 3:
        return x.unsqueeze(0), True
    return x, False


def _device_of(module: nn.Module) -> torch.device:
    return next(module.parameters()).device


@torch.no_grad()
def vae_encode(m: Union[MelStack, np.ndarray, torch.Tensor], vae: MelVAE, mode: str = "mean",
               generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    Encode a mel stack (S, T, F) or batch (B, S, T, F) into latents.

    `mean` returns the posterior mean and is deterministic; `sample` draws
    from the posterior with `generator`.
    """
    if mode not in ("mean", "sample"):
        raise ValueError(f"mode must be mean or sample, got {mode!r}")
    x, unbatched = _mels_tensor(m, _device_of(vae))
    mean, logvar = vae.encode_moments(x)
    z = mean
    if mode == "sample":
        noise = torch.randn(mean.shape, generator=generator, device=mean.device, dtype=mean.dtype)
        z = mean + torch.exp(0.5 * logvar) * noise
    return z[0] if unbatched else z


@torch.no_grad()
def vae_decode(z: torch.Tensor, vae: MelVAE, hop_length: int = 160, log_floor: float = 1e-5):
    """
    Decode latents back to log-mels, clamped below at log(log_floor).

    A single (S, C, T/r, F/r) latent stack gives a MelStack; a batch gives a
    (B, S, T, F) tensor.
    """
    unbatched = z.ndim == 4
    x = z.unsqueeze(0) if unbatched else z
    mels = vae.decode(x.to(device=_device_of(vae), dtype=torch.float32))
    mels = torch.clamp_min(mels, math.log(log_floor))
    if unbatched:
        return MelStack(mels[0].cpu().numpy(), hop_length=hop_length, log_floor=log_floor)
    return mels


def latent_geometry(vae: MelVAE, num_stems: int, frames: int, n_mels: int) -> LatentGeometry:
    return LatentGeometry(num_stems, vae.latent_channels, vae.compression, frames, n_mels)
