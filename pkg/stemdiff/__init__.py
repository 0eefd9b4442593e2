"""
stemdiff - Multi-track latent diffusion for music stems

Generates time-aligned bass, drums, guitar and piano stems jointly in the
latent space of a mel VAE, completes partial arrangements by masked
imputation, and evaluates generations with a Frechet distance on learned
audio embeddings.
"""

__version__ = "0.1.0"
__author__ = "stemdiff developers"

__all__ = [
    "StemStack",
    "MelStack",
    "RunConfig",
    "NoiseSchedule",
    "StemMask",
    "StemDiffPipeline",
    "StemDiffError",
]

# Lazy imports keep `import stemdiff` free of torch start-up cost
def __getattr__(name: str):
    if name == "StemStack":
        from .data.models import StemStack
        return StemStack
    elif name == "MelStack":
        from .data.models import MelStack
        return MelStack
    elif name == "RunConfig":
        from .config.sections import RunConfig
        return RunConfig
    elif name == "NoiseSchedule":
        from .diffusion.schedule import NoiseSchedule
        return NoiseSchedule
    elif name == "StemMask":
        from .diffusion.arrangement import StemMask
        return StemMask
    elif name == "StemDiffPipeline":
        from .pipeline import StemDiffPipeline
        return StemDiffPipeline
    elif name == "StemDiffError":
        from .errors import StemDiffError
        return StemDiffError
    raise AttributeError(f"module '{__name__}' has no attribute '{name}'")
