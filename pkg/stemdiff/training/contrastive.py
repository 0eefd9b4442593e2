"""
Contrastive encoder training stage.

Pairs every training mixture with its style tag and keeps the weights with
the best held-out audio-to-tag retrieval accuracy.
"""

import logging
from pathlib import Path
from typing import Union

import torch
from tqdm import tqdm

from ..conditioning.encoder import ContrastiveEncoder, contrastive_loss, retrieval_accuracy
from ..config.sections import RunConfig
from ..data.dataset import DatasetManifest, StemSegmentDataset
from ..data.storage import CheckpointDir
from ..errors import ConditioningError
from ..utils.logger import TrainingLogger, progress_disabled, time_function
from ..utils.seeding import resolve_device, seed_everything
from .common import (config_snapshot, check_loss, improved, make_loader, mel_statistics,
                     require_examples, restore, state_dict)

logger = logging.getLogger(__name__)


@torch.no_grad()
def evaluate_retrieval(encoder: ContrastiveEncoder, loader, device: torch.device) -> float:
    encoder.eval()
    embeddings, tags = [], []
    for batch in loader:
        embeddings.append(encoder.encode_mels(batch["mixture_mel"].to(device)))
        tags.append(batch["tag"].to(device))
    if not embeddings:
        return 0.0
    return retrieval_accuracy(torch.cat(embeddings), torch.cat(tags), encoder)


@time_function
def contrastive_train(cfg: RunConfig, manifest: DatasetManifest,
                      checkpoint_root: Union[str, Path, None] = None) -> ContrastiveEncoder:
    """
    Train (or resume training of) the audio/tag encoder.

    Raises:
        DatasetError: if the training split is empty
        ConditioningError: if the training split holds fewer than two distinct tags
        TrainingDivergedError: if the loss becomes NaN or infinite
    """
    device = resolve_device(cfg.device)
    ckpt = CheckpointDir(checkpoint_root or cfg.checkpoint_root, "clap")
    ccfg = cfg.conditioning

    train_set = StemSegmentDataset(manifest, "train", cfg.mel, cfg.dataset.random_shift, cfg.seed)
    valid_set = StemSegmentDataset(manifest, "valid", cfg.mel, False, cfg.seed)
    require_examples(train_set, "clap")
    present = {entry.tag for entry in manifest.entries("train")}
    if len(present) < 2:
        raise ConditioningError(
            f"contrastive training needs at least two tags in the training split, found {sorted(present)}"
        )


    seed_everything(cfg.seed)
    mean, std = mel_statistics(StemSegmentDataset(manifest, "train", cfg.mel, False, cfg.seed),
                               key="mixture_mel")
    encoder = ContrastiveEncoder.from_config(ccfg, manifest.tags).to(device)
    encoder.set_statistics(mean, std)
    optimizer = torch.optim.Adam(encoder.parameters(), lr=ccfg.lr)
    metrics = TrainingLogger(ckpt.metrics_path, "clap")
    state = restore(ckpt, encoder, optimizer, metrics, device)

    def manifest_extras():
        return {
            "architecture": encoder.architecture(),
            "mel_mean": float(encoder.mel_mean),
            "mel_std": float(encoder.mel_std),
            "mel": config_snapshot(cfg)["mel"],
            "epoch": state.epoch,
            "best_retrieval_accuracy": state.best,
        }

    for epoch in range(state.epoch, ccfg.epochs):
        if state.finished:
            break
        encoder.train()
        loader = make_loader(train_set, ccfg.batch_size, True, cfg.seed, epoch, ccfg.num_workers)
        total, steps = 0.0, 0
        for step, batch in enumerate(tqdm(loader, desc=f"clap {epoch + 1}/{ccfg.epochs}",
                                          leave=False, disable=progress_disabled())):
            audio = encoder.encode_mels(batch["mixture_mel"].to(device))
            loss = contrastive_loss(audio, batch["tag"].to(device), encoder)
            check_loss(loss, "clap", epoch, step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss)
            steps += 1

        held_out = valid_set if len(valid_set) else train_set
        accuracy = evaluate_retrieval(
            encoder, make_loader(held_out, ccfg.batch_size, False, cfg.seed, 0, ccfg.num_workers), device
        )
        metrics.log_epoch(epoch, train_loss=total / steps, retrieval_accuracy=accuracy,
                          temperature=float(1.0 / encoder.logit_scale.exp()), lr=ccfg.lr)

        state.epoch = epoch + 1
        if improved(accuracy, state.best, higher_is_better=True):
            state.best = accuracy
            state.bad_epochs = 0
            ckpt.save(encoder, manifest_extras(), config_snapshot(cfg))
        else:
            state.bad_epochs += 1
            if state.bad_epochs >= ccfg.patience:
                logger.info("clap: no improvement for %d epochs, stopping", state.bad_epochs)
                state.finished = True
        ckpt.save_state(state_dict(encoder, optimizer, state))

    if not ckpt.exists():
        ckpt.save(encoder, manifest_extras(), config_snapshot(cfg))
    encoder.load_state_dict(ckpt.load_weights(map_location=device))
    encoder.eval()
    logger.info("clap best retrieval accuracy %.3f", state.best or 0.0)
    return encoder
