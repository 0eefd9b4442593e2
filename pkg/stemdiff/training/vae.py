"""
VAE training stage.

Trains the per-stem mel VAE on stem segments and keeps the weights with the
best held-out reconstruction MSE, stopping after `patience` epochs without
improvement.
"""

import logging
from pathlib import Path
from typing import Union

import torch
import torch.nn.functional as F
from tqdm import tqdm

from ..audio.codec import MelVAE, vae_loss
from ..config.sections import RunConfig
from ..data.dataset import DatasetManifest, StemSegmentDataset
from ..data.storage import CheckpointDir
from ..utils.logger import TrainingLogger, progress_disabled, time_function
from ..utils.seeding import resolve_device, seed_everything
from .common import (NOISE_STREAM, config_snapshot, check_loss, epoch_generator, improved,
                     make_loader, mel_statistics, require_examples, restore, state_dict)

logger = logging.getLogger(__name__)


@torch.no_grad()
def reconstruction_mse(vae: MelVAE, loader, device: torch.device) -> float:
    """Mean-mode reconstruction MSE on standardised log-mels."""
    vae.eval()
    total, count = 0.0, 0
    for batch in loader:
        mels = batch["mels"].to(device)
        mean, _ = vae.encode_moments(mels)
        recon = vae.decode(mean)
        err = F.mse_loss((recon - vae.mel_mean) / vae.mel_std,
                         (mels - vae.mel_mean) / vae.mel_std, reduction="sum")
        total += float(err)
        count += mels.numel()
    return total / max(count, 1)


@time_function
def train_vae(cfg: RunConfig, manifest: DatasetManifest,
              checkpoint_root: Union[str, Path, None] = None) -> MelVAE:
    """
    Train (or resume training of) the mel VAE.

    Returns:
        The VAE with the best held-out reconstruction weights loaded

    Raises:
        DatasetError: if the training split is empty
        TrainingDivergedError: if the loss becomes NaN or infinite
    """
    device = resolve_device(cfg.device)
    ckpt = CheckpointDir(checkpoint_root or cfg.checkpoint_root, "vae")
    vcfg = cfg.vae

    train_set = StemSegmentDataset(manifest, "train", cfg.mel, cfg.dataset.random_shift, cfg.seed)
    valid_set = StemSegmentDataset(manifest, "valid", cfg.mel, False, cfg.seed)
    require_examples(train_set, "vae")

    seed_everything(cfg.seed)
    mean, std = mel_statistics(StemSegmentDataset(manifest, "train", cfg.mel, False, cfg.seed))
    vae = MelVAE.from_config(vcfg, mean, std).to(device)
    optimizer = torch.optim.Adam(vae.parameters(), lr=vcfg.lr)
    metrics = TrainingLogger(ckpt.metrics_path, "vae")
    state = restore(ckpt, vae, optimizer, metrics, device)

    def manifest_extras():
        return {
            "architecture": vae.architecture(),
            "mel_mean": float(vae.mel_mean),
            "mel_std": float(vae.mel_std),
            "mel": config_snapshot(cfg)["mel"],
            "epoch": state.epoch,
            "best_valid_mse": state.best,
        }

    if state.finished or state.epoch >= vcfg.epochs:
        logger.info("vae training already complete (%d epochs)", state.epoch)
    for epoch in range(state.epoch, vcfg.epochs):
        if state.finished:
            break
        vae.train()
        noise = epoch_generator(cfg.seed, epoch, NOISE_STREAM)
        loader = make_loader(train_set, vcfg.batch_size, True, cfg.seed, epoch, vcfg.num_workers)
        sums = {"loss": 0.0, "mse": 0.0, "kl": 0.0}
        steps = 0
        for step, batch in enumerate(tqdm(loader, desc=f"vae {epoch + 1}/{vcfg.epochs}",
                                          leave=False, disable=progress_disabled())):
            terms = vae_loss(vae, batch["mels"].to(device), vcfg.kl_weight, generator=noise)
            check_loss(terms["loss"], "vae", epoch, step)
            optimizer.zero_grad()
            terms["loss"].backward()
            optimizer.step()
            for key in sums:
                sums[key] += float(terms[key])
            steps += 1

        valid_loader = make_loader(valid_set if len(valid_set) else train_set,
                                   vcfg.batch_size, False, cfg.seed, 0, vcfg.num_workers)
        valid_mse = reconstruction_mse(vae, valid_loader, device)
        metrics.log_epoch(epoch, train_loss=sums["loss"] / steps, train_mse=sums["mse"] / steps,
                          train_kl=sums["kl"] / steps, valid_mse=valid_mse, lr=vcfg.lr)

        state.epoch = epoch + 1
        if improved(valid_mse, state.best, higher_is_better=False):
            state.best = valid_mse
            state.bad_epochs = 0
            ckpt.save(vae, manifest_extras(), config_snapshot(cfg))
        else:
            state.bad_epochs += 1
            if state.bad_epochs >= vcfg.patience:
                logger.info("vae: no improvement for %d epochs, stopping", state.bad_epochs)
                state.finished = True
        ckpt.save_state(state_dict(vae, optimizer, state))

    if not ckpt.exists():
        ckpt.save(vae, manifest_extras(), config_snapshot(cfg))
    vae.load_state_dict(ckpt.load_weights(map_location=device))
    vae.eval()
    logger.info("vae best held-out mse %.5f", state.best if state.best is not None else float("nan"))
    return vae
