"""
Latent diffusion training stage.

The VAE and the contrastive encoder are frozen. Every batch is encoded to
scaled latents and conditioned on the audio embedding of its own mixture,
dropped to the null token at the configured rate.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import torch
from tqdm import tqdm

from ..audio.codec import MelVAE
from ..conditioning.encoder import ContrastiveEncoder, drop_condition
from ..config.sections import RunConfig
from ..data.dataset import DatasetManifest, StemSegmentDataset
from ..data.models import ConditionEmbedding, ConditionSource
from ..data.storage import CheckpointDir, require_prerequisites
from ..diffusion.denoiser import UNet3D, count_parameters
from ..diffusion.sampler import training_loss
from ..diffusion.schedule import NoiseSchedule, schedule_from_config
from ..pipeline import load_encoder, load_vae
from ..utils.logger import TrainingLogger, progress_disabled, time_function
from ..utils.seeding import derive_seed, make_generator, resolve_device, seed_everything
from .common import (DROPOUT_STREAM, NOISE_STREAM, VALID_STREAM, config_snapshot, check_loss,
                     epoch_generator, make_loader, require_examples, restore, state_dict)

logger = logging.getLogger(__name__)


@torch.no_grad()
def encode_batch(batch, vae: MelVAE, encoder: ContrastiveEncoder, latent_scale: float,
                 device: torch.device):
    """Scaled mean latents and audio conditions of a dataset batch."""
    z0 = vae.encode_moments(batch["mels"].to(device))[0] * latent_scale
    vector = encoder.encode_mels(batch["mixture_mel"].to(device))
    cond = ConditionEmbedding(vector, torch.zeros(vector.shape[0], dtype=torch.bool, device=device),
                              ConditionSource.AUDIO)
    return z0, cond


@torch.no_grad()
def measure_latent_scale(vae: MelVAE, dataset: StemSegmentDataset, batch_size: int,
                         device: torch.device, max_items: int = 256) -> float:
    """1 / std of the unscaled training latents."""
    values = []
    seen = 0
    for batch in make_loader(dataset, batch_size, False, 0, 0):
        values.append(vae.encode_moments(batch["mels"].to(device))[0].double().flatten().cpu())
        seen += batch["mels"].shape[0]
        if seen >= max_items:
            break
    std = float(torch.cat(values).std()) if values else 1.0
    return 1.0 / max(std, 1e-6)


@torch.no_grad()
def validation_loss(model: UNet3D, loader, vae, encoder, latent_scale: float, sched: NoiseSchedule,
                    seed: int, device: torch.device) -> Optional[float]:
    """Conditional noise-prediction loss on the held-out split with fixed noise."""
    model.eval()
    generator = make_generator(derive_seed(seed, VALID_STREAM))
    total, steps = 0.0, 0
    for batch in loader:
        z0, cond = encode_batch(batch, vae, encoder, latent_scale, device)
        total += float(training_loss(z0, cond, model, sched, generator))
        steps += 1
    return total / steps if steps else None


@time_function
def train_ldm(cfg: RunConfig, manifest: DatasetManifest,
              checkpoint_root: Union[str, Path, None] = None) -> UNet3D:
    """
    Train (or resume training of) the 3D UNet on frozen VAE latents.

    Raises:
        CheckpointError: if the vae or clap stage has not been trained
        DatasetError: if the training split is empty
        TrainingDivergedError: if the loss becomes NaN or infinite
    """
    root = Path(checkpoint_root or cfg.checkpoint_root)
    require_prerequisites(root, "ldm")
    device = resolve_device(cfg.device)
    ckpt = CheckpointDir(root, "ldm")
    lcfg = cfg.ldm

    vae = load_vae(root, device).requires_grad_(False)
    encoder = load_encoder(root, device).requires_grad_(False)
    sched = schedule_from_config(lcfg)

    train_set = StemSegmentDataset(manifest, "train", cfg.mel, cfg.dataset.random_shift, cfg.seed)
    valid_set = StemSegmentDataset(manifest, "valid", cfg.mel, False, cfg.seed)
    require_examples(train_set, "ldm")
    latent_scale = measure_latent_scale(
        vae, StemSegmentDataset(manifest, "train", cfg.mel, False, cfg.seed), lcfg.batch_size, device
    )

    seed_everything(cfg.seed)
    model = UNet3D.from_config(lcfg, num_stems=len(manifest.stems), cond_dim=encoder.embed_dim).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=lcfg.lr)
    metrics = TrainingLogger(ckpt.metrics_path, "ldm")
    state = restore(ckpt, model, optimizer, metrics, device)
    logger.info("ldm: %d trainable parameters, latent scale %.4f", count_parameters(model), latent_scale)

    def manifest_extras():
        return {
            "architecture": model.architecture(),
            "schedule": sched.to_dict(),
            "latent_scale": latent_scale,
            "latent_shape": [len(manifest.stems), vae.latent_channels,
                             cfg.mel.frames // vae.compression, cfg.mel.n_mels // vae.compression],
            "parameters": count_parameters(model),
            "epoch": state.epoch,
        }

    for epoch in range(state.epoch, lcfg.epochs):
        model.train()
        noise = epoch_generator(cfg.seed, epoch, NOISE_STREAM)
        dropout = epoch_generator(cfg.seed, epoch, DROPOUT_STREAM)
        loader = make_loader(train_set, lcfg.batch_size, True, cfg.seed, epoch, lcfg.num_workers)
        total, steps = 0.0, 0
        for step, batch in enumerate(tqdm(loader, desc=f"ldm {epoch + 1}/{lcfg.epochs}",
                                          leave=False, disable=progress_disabled())):
            z0, cond = encode_batch(batch, vae, encoder, latent_scale, device)
            cond = drop_condition(cond, lcfg.condition_dropout, dropout)
            loss = training_loss(z0, cond, model, sched, noise)
            check_loss(loss, "ldm", epoch, step)
            optimizer.zero_grad()
            loss.backward()
            if lcfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), lcfg.grad_clip)
            optimizer.step()
            total += float(loss)
            steps += 1

        valid = validation_loss(model, make_loader(valid_set, lcfg.batch_size, False, cfg.seed, 0),
                                vae, encoder, latent_scale, sched, cfg.seed, device)
        record = {"train_loss": total / steps, "lr": lcfg.lr}
        if valid is not None:
            record["valid_loss"] = valid
        metrics.log_epoch(epoch, **record)

        state.epoch = epoch + 1
        ckpt.save(model, manifest_extras(), config_snapshot(cfg), state=state_dict(model, optimizer, state))

    if not ckpt.exists():
        ckpt.save(model, manifest_extras(), config_snapshot(cfg), state=state_dict(model, optimizer, state))
    summary = metrics.summary("train_loss")
    if summary:
        logger.info("ldm loss %.5f -> %.5f (%.0f%% drop)", summary["first"], summary["last"],
                    100 * summary["relative_drop"])
    model.eval()
    return model
