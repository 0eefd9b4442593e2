"""
Shared pieces of the three training stages: seeded data loading, resume
state, divergence checks and mel statistics.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from ..config.sections import RunConfig
from ..config.validation import config_to_dict
from ..data.dataset import StemSegmentDataset
from ..data.storage import CheckpointDir
from ..errors import DatasetError, TrainingDivergedError
from ..utils.logger import TrainingLogger
from ..utils.seeding import derive_seed, make_generator

logger = logging.getLogger(__name__)

# Stream keys mixed into the run seed, one per source of training randomness
SHUFFLE_STREAM = 11
NOISE_STREAM = 12
DROPOUT_STREAM = 13
VALID_STREAM = 14


@dataclass
class ResumeState:
    """Progress of a stage read back from state.pt."""
    epoch: int = 0
    best: Optional[float] = None
    bad_epochs: int = 0
    finished: bool = False


def epoch_generator(seed: int, epoch: int, stream: int) -> torch.Generator:
    """Generator for one source of randomness in one epoch."""
    return make_generator(derive_seed(seed, epoch, stream))


def make_loader(dataset: Dataset, batch_size: int, shuffle: bool, seed: int, epoch: int,
                num_workers: int = 0) -> DataLoader:
    """DataLoader whose order and random shifts depend only on (seed, epoch)."""
    if isinstance(dataset, StemSegmentDataset):
        dataset.set_epoch(epoch)
    generator = epoch_generator(seed, epoch, SHUFFLE_STREAM) if shuffle else None
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator,
                      num_workers=num_workers, drop_last=False)


def require_examples(dataset: Dataset, stage: str) -> None:
    if len(dataset) == 0:
        raise DatasetError(f"{stage}: the training split is empty; rebuild with stemdiff dataset build")


def check_loss(loss: torch.Tensor, stage: str, epoch: int, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            f"{stage} loss became {loss.item()} at epoch {epoch}, step {step}; "
            f"lower the learning rate or check the data"
        )


def restore(ckpt: CheckpointDir, model: torch.nn.Module, optimizer: torch.optim.Optimizer,
            metrics: TrainingLogger, device: torch.device) -> ResumeState:
    """Load the latest model and optimizer state when the stage was started before."""
    saved = ckpt.load_state(map_location=device)
    if saved is None:
        metrics.truncate(0)
        return ResumeState()
    model.load_state_dict(saved["model"])
    optimizer.load_state_dict(saved["optimizer"])
    state = ResumeState(epoch=saved["epoch"], best=saved.get("best"),
                        bad_epochs=saved.get("bad_epochs", 0), finished=saved.get("finished", False))
    metrics.truncate(state.epoch)
    logger.info("resuming %s from epoch %d", ckpt.stage, state.epoch)
    return state


def state_dict(model: torch.nn.Module, optimizer: torch.optim.Optimizer,
               state: ResumeState) -> Dict[str, Any]:
    return {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "epoch": state.epoch,
        "best": state.best,
        "bad_epochs": state.bad_epochs,
        "finished": state.finished,
    }


def improved(value: float, best: Optional[float], higher_is_better: bool) -> bool:
    if best is None:
        return True
    return value > best if higher_is_better else value < best


def mel_statistics(dataset: StemSegmentDataset, key: str = "mels", max_items: int = 64) -> Tuple[float, float]:
    """Scalar mean and std of the log-mels of the first `max_items` items."""
    values = [dataset[i][key].numpy().ravel() for i in range(min(len(dataset), max_items))]
    if not values:
        return 0.0, 1.0
    stacked = np.concatenate(values).astype(np.float64)
    return float(stacked.mean()), float(max(stacked.std(), 1e-6))


def config_snapshot(cfg: RunConfig) -> Dict[str, Any]:
    return config_to_dict(cfg)
