"""
Exception hierarchy for stemdiff.

Every failure the library raises on purpose derives from StemDiffError so
the command line can report it cleanly and exit with a stable status code.
"""


class StemDiffError(Exception):
    """Base class for all stemdiff errors."""


class ConfigError(StemDiffError):
    """Invalid, unknown or inconsistent configuration value."""


class ShapeMismatchError(StemDiffError, ValueError):
    """Array/tensor shapes do not agree with each other or with the geometry."""


class StepIndexError(StemDiffError, ValueError):
    """Diffusion step index outside the schedule or in the wrong order."""


class DatasetError(StemDiffError):
    """Dataset generation, manifest or audio loading problem."""


class CheckpointError(StemDiffError):
    """Missing, incomplete or incompatible checkpoint directory."""


class TrainingDivergedError(StemDiffError):
    """Loss became non-finite during training."""


class ConditioningError(StemDiffError):
    """Invalid conditioning input (unknown tag, wrong audio length, ...)."""


class EvaluationError(StemDiffError):
    """Invalid evaluation input or non-finite metric."""


class MaskError(StemDiffError, ValueError):
    """Stem subset outside the stack or not allowed in the current mode."""
