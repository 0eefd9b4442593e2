"""
Default configuration values and factory functions.

Provides the desk-scale defaults, the full-scale variant and a tiny
geometry for tests and smoke runs.
"""

from .sections import (
    ConditioningConfig,
    DatasetConfig,
    EvalConfig,
    LDMConfig,
    MelConfig,
    RunConfig,
    SamplerConfig,
    VAEConfig,
)


def get_default_run_config() -> RunConfig:
    """Desk-scale configuration: 2.56 s segments, latent 4x8x64x16, 512/64/64 split."""
    return RunConfig(
        seed=0,
        mel=MelConfig(frames=256),
        dataset=DatasetConfig(n_train=512, n_valid=64, n_test=64, duration=12.0),
        vae=VAEConfig(latent_channels=8, compression=4),
        conditioning=ConditioningConfig(embed_dim=64),
        ldm=LDMConfig(num_steps=1000, lr=3e-5, batch_size=8, condition_dropout=0.1),
        sampler=SamplerConfig(method="ddim", inference_steps=200, guidance_weight=2.0),
        eval=EvalConfig(num_generated=256),
    )


def get_full_scale_config() -> RunConfig:
    """
    Full-scale geometry: 10.24 s segments (T=1024, F=64) encoded to
    4x8x256x16 latents. The condition space keeps d=64 rather than a
    512-dimensional pretrained embedding.
    """
    return RunConfig(
        seed=0,
        mel=MelConfig(frames=1024),
        dataset=DatasetConfig(n_train=1500, n_valid=375, n_test=225, duration=12.0),
        vae=VAEConfig(latent_channels=8, compression=4, base_channels=64),
        conditioning=ConditioningConfig(embed_dim=64),
        ldm=LDMConfig(num_steps=1000, lr=3e-5, base_width=64, channel_mult=(1, 2),
                      epochs=1000, condition_dropout=0.1),
        sampler=SamplerConfig(method="ddim", inference_steps=200, guidance_weight=2.0),
        eval=EvalConfig(num_generated=225),
    )


def get_micro_config() -> RunConfig:
    """Tiny geometry (T=16, F=8, latent 4x2x8x4) for tests and smoke runs."""
    return RunConfig(
        seed=0,
        device="cpu",
        mel=MelConfig(frames=16, n_mels=8),
        dataset=DatasetConfig(n_train=8, n_valid=4, n_test=4, duration=0.5, workers=1),
        vae=VAEConfig(latent_channels=2, compression=2, base_channels=4,
                      batch_size=4, epochs=2, patience=2),
        conditioning=ConditioningConfig(embed_dim=8, base_channels=4, batch_size=4,
                                        epochs=2, patience=2),
        ldm=LDMConfig(num_steps=20, base_width=8, channel_mult=(1, 2), time_embed_dim=16,
                      attention_heads=2, norm_groups=4, lr=1e-3, batch_size=4, epochs=2),
        sampler=SamplerConfig(method="ddim", inference_steps=5, guidance_weight=2.0,
                              batch_size=2, griffin_lim_iters=4),
        eval=EvalConfig(num_generated=4, embed_batch_size=4),
    )
