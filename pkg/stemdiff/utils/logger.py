"""
Logging utilities and configuration.

Provides logging setup for the command line, a per-epoch training metrics
log persisted next to each checkpoint, and a timing decorator.
"""

import json
import logging
import sys
import time
from functools import wraps
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Setup application logging configuration."""
    level = getattr(logging, str(log_level).upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"unknown log level {log_level!r}")

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
    logger = logging.getLogger("stemdiff")
    logger.setLevel(level)
    return logger


def progress_disabled() -> bool:
    """tqdm bars are shown only when stemdiff logs at INFO or below."""
    return logging.getLogger("stemdiff").getEffectiveLevel() > logging.INFO


def time_function(func):
    """Decorator to debug-log function execution time."""
    logger = logging.getLogger(func.__module__)

    @wraps(func)
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        try:
            return func(*args, **kwargs)
        finally:
            logger.debug("%s took %.3fs", func.__qualname__, time.perf_counter() - start)
    return wrapper


class TrainingLogger:
    """
    Per-epoch training metrics log.

    Appends one JSON object per epoch to a metrics.jsonl file so training
    curves survive restarts and can be inspected without the code.
    """

    def __init__(self, path: Union[str, Path], stage: str):
        """Initialize metrics log at `path` for training stage `stage`."""
        self.path = Path(path)
        self.stage = stage
        self.logger = logging.getLogger(f"stemdiff.training.{stage}")
        self._records: List[Dict[str, Any]] = self._read_existing()

    def _read_existing(self) -> List[Dict[str, Any]]:
        if not self.path.exists():
            return []
        records = []
        with open(self.path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return records

    def truncate(self, epochs_done: int) -> None:
        """Drop records beyond `epochs_done` (used when resuming)."""
        self._records = [r for r in self._records if r["epoch"] < epochs_done]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            for record in self._records:
                f.write(json.dumps(record) + "\n")

    def log_epoch(self, epoch: int, **metrics: float) -> Dict[str, Any]:
        """Record metrics of one finished epoch."""
        record = {"stage": self.stage, "epoch": epoch, "time": time.time()}
        record.update({k: float(v) for k, v in metrics.items()})
        self._records.append(record)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record) + "\n")

        shown = " ".join(f"{k}={v:.5g}" for k, v in metrics.items())
        self.logger.info("epoch %d %s", epoch, shown)
        return record

    def history(self, key: str = "train_loss") -> List[float]:
        return [r[key] for r in self._records if key in r]

    def summary(self, key: str = "train_loss") -> Dict[str, float]:
        """First, best and last value of `key` plus the relative drop from the first epoch."""
        values = self.history(key)
        if not values:
            return {}
        first = values[0]
        last = values[-1]
        return {
            "epochs": len(values),
            "first": first,
            "best": min(values),
            "last": last,
            "relative_drop": (first - last) / first if first else 0.0,
        }
