"""
3D UNet noise predictor.

Stems are the input channels and the latent axes (C, T/r, F/r) are three
spatial axes. Down/upsampling acts on T/r and F/r only. The timestep and the
condition embedding modulate every residual block; the middle block adds
self-attention plus cross-attention to the condition token.
"""

import logging
import math
from typing import Any, Dict, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..audio.codec import group_count
from ..config.sections import LDMConfig
from ..data.models import ConditionEmbedding
from ..errors import ShapeMismatchError, StepIndexError

logger = logging.getLogger(__name__)


def timestep_embedding(n: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of (B,) step indices into (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, device=n.device, dtype=torch.float64) / half)
    args = n.double()[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock3D(nn.Module):
    """GroupNorm/SiLU/Conv3d residual block with feature-wise affine modulation."""

    def __init__(self, in_channels: int, out_channels: int, emb_dim: int, norm_groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(group_count(in_channels, norm_groups), in_channels)
        self.conv1 = nn.Conv3d(in_channels, out_channels, 3, padding=1)
        self.modulation = nn.Linear(emb_dim, 2 * out_channels)
        self.norm2 = nn.GroupNorm(group_count(out_channels, norm_groups), out_channels)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv3d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.modulation(F.silu(emb)).chunk(2, dim=-1)
        h = self.norm2(h) * (1 + scale[:, :, None, None, None]) + shift[:, :, None, None, None]
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class AttentionBlock3D(nn.Module):
    """Self-attention over all latent positions, cross-attention to the condition, feed-forward."""

    def __init__(self, channels: int, cond_dim: int, heads: int, norm_groups: int):
        super().__init__()
        heads = group_count(channels, heads)
        self.norm = nn.GroupNorm(group_count(channels, norm_groups), channels)
        self.self_attn = nn.MultiheadAttention(channels, heads, batch_first=True)
        self.cross_norm = nn.LayerNorm(channels)
        self.cond_proj = nn.Linear(cond_dim, channels)
        self.cross_attn = nn.MultiheadAttention(channels, heads, batch_first=True)
        self.ff_norm = nn.LayerNorm(channels)
        self.ff = nn.Sequential(nn.Linear(channels, 4 * channels), nn.GELU(), nn.Linear(4 * channels, channels))

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, ch, c, t, f = x.shape
        tokens = self.norm(x).reshape(b, ch, c * t * f).transpose(1, 2)
        h = tokens + self.self_attn(tokens, tokens, tokens, need_weights=False)[0]

        context = self.cond_proj(cond)[:, None, :]
        q = self.cross_norm(h)
        h = h + self.cross_attn(q, context, context, need_weights=False)[0]
        h = h + self.ff(self.ff_norm(h))

        return x + h.transpose(1, 2).reshape(b, ch, c, t, f)


class Downsample3D(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv3d(channels, channels, 3, stride=(1, 2, 2), padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample3D(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv3d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=(1, 2, 2), mode="nearest"))


class UNet3D(nn.Module):
    """
    Noise predictor eps_theta(z_n, n, c) over (B, S, C, T/r, F/r) latents.

    One residual block per encoder level and per decoder level, with a skip
    connection pairing them; `len(channel_mult)` levels in total.
    """

    def __init__(self, num_stems: int = 4, cond_dim: int = 64, base_width: int = 32,
                 channel_mult: Sequence[int] = (1, 2), time_embed_dim: int = 128,
                 attention_heads: int = 4, norm_groups: int = 8, num_steps: int = 1000):
        super().__init__()
        self.num_stems = num_stems
        self.cond_dim = cond_dim
        self.base_width = base_width
        self.channel_mult = tuple(channel_mult)
        self.time_embed_dim = time_embed_dim
        self.attention_heads = attention_heads
        self.norm_groups = norm_groups
        self.num_steps = num_steps

        emb_dim = 4 * time_embed_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(time_embed_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.cond_mlp = nn.Sequential(
            nn.Linear(cond_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        # Unconditional pathway: shared by condition dropout and unguided sampling
        self.null_token = nn.Parameter(torch.randn(cond_dim) / math.sqrt(cond_dim))

        widths = [base_width * m for m in self.channel_mult]
        block_emb = 2 * emb_dim

        self.input_conv = nn.Conv3d(num_stems, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        ch = widths[0]
        for i, width in enumerate(widths):
            self.down_blocks.append(ResBlock3D(ch, width, block_emb, norm_groups))
            ch = width
            if i < len(widths) - 1:
                self.downsamplers.append(Downsample3D(ch))

        self.mid_block1 = ResBlock3D(ch, ch, block_emb, norm_groups)
        self.mid_attention = AttentionBlock3D(ch, cond_dim, attention_heads, norm_groups)
        self.mid_block2 = ResBlock3D(ch, ch, block_emb, norm_groups)

        self.up_blocks = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        for i in reversed(range(len(widths))):
            self.up_blocks.append(ResBlock3D(ch + widths[i], widths[i], block_emb, norm_groups))
            ch = widths[i]
            if i > 0:
                self.upsamplers.append(Upsample3D(ch))

        self.output_norm = nn.GroupNorm(group_count(ch, norm_groups), ch)
        self.output_conv = nn.Conv3d(ch, num_stems, 3, padding=1)

    @classmethod
    def from_config(cls, cfg: LDMConfig, num_stems: int, cond_dim: int) -> "UNet3D":
        return cls(num_stems=num_stems, cond_dim=cond_dim, base_width=cfg.base_width,
                   channel_mult=cfg.channel_mult, time_embed_dim=cfg.time_embed_dim,
                   attention_heads=cfg.attention_heads, norm_groups=cfg.norm_groups,
                   num_steps=cfg.num_steps)

    def architecture(self) -> Dict[str, Any]:
        """Constructor arguments, enough to rebuild the network."""
        return {
            "num_stems": self.num_stems,
            "cond_dim": self.cond_dim,
            "base_width": self.base_width,
            "channel_mult": list(self.channel_mult),
            "time_embed_dim": self.time_embed_dim,
            "attention_heads": self.attention_heads,
            "norm_groups": self.norm_groups,
            "num_steps": self.num_steps,
        }

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.channel_mult) - 1)

    def condition_vectors(self, cond: Optional[ConditionEmbedding], batch: int,
                          like: torch.Tensor) -> torch.Tensor:
        """(B, cond_dim) condition input with null rows replaced by the null token."""
        null = self.null_token.to(like.dtype)[None, :].expand(batch, -1)
        if cond is None:
            return null
        cond = cond.repeat(batch)
        if cond.dim != self.cond_dim:
            raise ShapeMismatchError(f"condition dimension {cond.dim} != {self.cond_dim}")
        vector = cond.vector.to(device=like.device, dtype=like.dtype)
        is_null = cond.is_null.to(like.device)[:, None]
        return torch.where(is_null, null, vector)

    def _check_input(self, z: torch.Tensor) -> None:
        if z.ndim != 5 or z.shape[1] != self.num_stems:
            raise ShapeMismatchError(
                f"expected (B, {self.num_stems}, C, T/r, F/r) latents, got shape {tuple(z.shape)}"
            )
        d = self.downsample_factor
        if z.shape[3] % d or z.shape[4] % d:
            raise ShapeMismatchError(
                f"latent time/frequency axes {tuple(z.shape[3:])} not divisible by {d}"
            )

    def forward(self, z: torch.Tensor, n: torch.Tensor,
                cond: Optional[ConditionEmbedding] = None) -> torch.Tensor:
        self._check_input(z)
        batch = z.shape[0]

        t_emb = self.time_mlp(timestep_embedding(n, self.time_embed_dim).to(z.dtype))
        c_vec = self.condition_vectors(cond, batch, z)
        emb = torch.cat([t_emb, self.cond_mlp(c_vec)], dim=-1)

        h = self.input_conv(z)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, emb)
            skips.append(h)
            if i < len(self.downsamplers):
                h = self.downsamplers[i](h)

        h = self.mid_block1(h, emb)
        h = self.mid_attention(h, c_vec)
        h = self.mid_block2(h, emb)

        for i, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
            if i < len(self.upsamplers):
                h = self.upsamplers[i](h)

        return self.output_conv(F.silu(self.output_norm(h)))


def _step_tensor(n: Union[int, torch.Tensor], batch: int, num_steps: int,
                 device: torch.device) -> torch.Tensor:
    steps = torch.as_tensor(n, device=device).long()
    if steps.ndim == 0:
        steps = steps.expand(batch)
    if bool((steps < 1).any()) or bool((steps > num_steps).any()):
        raise StepIndexError(f"denoiser step must lie in [1, {num_steps}], got {n}")
    return steps


def denoise_predict(z_n: torch.Tensor, n: Union[int, torch.Tensor],
                    cond: Optional[ConditionEmbedding], model: UNet3D) -> torch.Tensor:
    """
    Predicted noise for a batch (B, S, C, T/r, F/r) or a single latent stack.

    `cond=None` or null rows take the learned null-token pathway.
    """
    unbatched = z_n.ndim == 4
    z = z_n.unsqueeze(0) if unbatched else z_n
    steps = _step_tensor(n, z.shape[0], model.num_steps, z.device)
    eps = model(z, steps, cond)
    return eps[0] if unbatched else eps


def count_parameters(model: nn.Module) -> int:
    """Number of trainable parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
