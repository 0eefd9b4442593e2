"""
Data validation helpers.

Shape checks used at the boundaries of the schedule and the sampler so
mismatches surface with a clear message.
"""

from typing import Union

import numpy as np
import torch

from ..errors import ShapeMismatchError

ArrayLike = Union[np.ndarray, torch.Tensor]


def check_same_shape(a: ArrayLike, b: ArrayLike, what: str = "inputs") -> None:
    """Raise ShapeMismatchError unless `a` and `b` have identical shapes."""
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeMismatchError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")
