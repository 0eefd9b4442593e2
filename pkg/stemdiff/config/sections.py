"""
Configuration sections for dataset building, the three training stages,
sampling and evaluation.

Each section is a plain dataclass with documented defaults. The defaults are
desk scale; the full-scale values live in config/defaults.py.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

from ..errors import ConfigError


SCHEMA_VERSION = 1
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass
class MelConfig:
    """
    Mel-spectrogram front end shared by the VAE, the condition encoder and
    the vocoder.

    Attributes:
        sample_rate: Audio sample rate in Hz (only 16 kHz is supported)
        n_fft: STFT size in samples
        win_length: Analysis window length in samples
        hop_length: Hop between frames in samples
        n_mels: Number of mel bins (F)
        fmin: Lowest mel filter edge in Hz
        fmax: Highest mel filter edge in Hz
        frames: Frames per segment (T); audio is cropped/padded to this
        log_floor: Magnitude floor applied before the natural log
        htk: Use the HTK mel formula (2595*log10(1 + f/700))
    """

    sample_rate: int = 16000
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 160
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float = 8000.0
    frames: int = 256
    log_floor: float = 1e-5
    htk: bool = True

    @property
    def segment_samples(self) -> int:
        """Audio samples covered by one segment of `frames` frames."""
        return self.frames * self.hop_length

    @property
    def segment_seconds(self) -> float:
        return self.segment_samples / self.sample_rate

    def validate(self) -> None:
        if self.sample_rate != 16000:
            raise ConfigError(f"mel.sample_rate must be 16000, got {self.sample_rate}")
        if self.n_mels <= 0:
            raise ConfigError(f"mel.n_mels must be positive, got {self.n_mels}")
        if self.hop_length <= 0 or self.win_length <= 0 or self.n_fft < self.win_length:
            raise ConfigError("mel: need hop_length > 0 and n_fft >= win_length > 0")
        if not (0.0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ConfigError(f"mel: need 0 <= fmin < fmax <= {self.sample_rate / 2}")
        if self.frames <= 0:
            raise ConfigError(f"mel.frames must be positive, got {self.frames}")
        if self.log_floor <= 0.0:
            raise ConfigError("mel.log_floor must be positive")


@dataclass
class DatasetConfig:
    """
    Procedural multi-stem dataset settings.

    Attributes:
        root: Output/input directory of the synthetic dataset
        n_train: Number of training examples
        n_valid: Number of validation examples
        n_test: Number of test examples
        duration: Length of every generated example in seconds
        base_seed: Seed offset; split seed ranges are derived from it
        tags: Style tag vocabulary
        random_shift: Random segment offset during training
        workers: Worker processes used for generation (1 = serial)
    """

    root: str = "data/synth"
    n_train: int = 512
    n_valid: int = 64
    n_test: int = 64
    duration: float = 12.0
    base_seed: int = 1234
    tags: Tuple[str, ...] = ("soft", "energetic")
    random_shift: bool = True
    workers: int = 1

    def counts(self) -> dict:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}

    def validate(self) -> None:
        if min(self.n_train, self.n_valid, self.n_test) < 0:
            raise ConfigError("dataset split sizes must be non-negative")
        if self.duration <= 0:
            raise ConfigError("dataset.duration must be positive")
        if len(set(self.tags)) != len(self.tags) or not self.tags:
            raise ConfigError(f"dataset.tags must be non-empty and unique, got {self.tags}")
        if self.workers < 1:
            raise ConfigError("dataset.workers must be >= 1")


@dataclass
class VAEConfig:
    """
    Per-stem mel VAE (shared weights across stems).

    Attributes:
        latent_channels: Latent channels C
        compression: Compression ratio r on time and frequency (power of two)
        base_channels: Width of the first convolution stage
        kl_weight: Weight beta of the KL term
        lr: Adam learning rate
        batch_size: Examples per batch (each contributes S stems)
        epochs: Maximum epochs
        patience: Epochs without held-out improvement before stopping
        num_workers: DataLoader worker processes
    """

    latent_channels: int = 8
    compression: int = 4
    base_channels: int = 32
    kl_weight: float = 1e-4
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 50
    patience: int = 5
    num_workers: int = 0

    def validate(self) -> None:
        r = self.compression
        if r < 1 or (r & (r - 1)) != 0:
            raise ConfigError(f"vae.compression must be a power of two, got {r}")
        if self.latent_channels < 1 or self.base_channels < 1:
            raise ConfigError("vae channel counts must be positive")
        if self.kl_weight < 0:
            raise ConfigError("vae.kl_weight must be non-negative")


@dataclass
class ConditioningConfig:
    """
    Contrastive audio/tag encoder that produces the condition embeddings.

    Attributes:
        embed_dim: Shared embedding dimension d
        base_channels: Width of the audio CNN
        temperature: Initial softmax temperature of the contrastive loss
        lr: Adam learning rate
        batch_size: Mixtures per batch
        epochs: Maximum epochs
        patience: Epochs without retrieval improvement before stopping
        num_workers: DataLoader worker processes
    """

    embed_dim: int = 64
    base_channels: int = 32
    temperature: float = 0.07
    lr: float = 3e-4
    batch_size: int = 32
    epochs: int = 30
    patience: int = 5
    num_workers: int = 0

    def validate(self) -> None:
        if self.embed_dim < 2:
            raise ConfigError("conditioning.embed_dim must be >= 2")
        if self.temperature <= 0:
            raise ConfigError("conditioning.temperature must be positive")


@dataclass
class LDMConfig:
    """
    3D UNet latent diffusion model and its training loop.

    Attributes:
        schedule: Noise schedule kind ("linear" or "cosine")
        num_steps: Training diffusion steps N
        beta_start: First beta of the linear schedule
        beta_end: Last beta of the linear schedule
        base_width: UNet width of the first level
        channel_mult: Width multiplier per encoder level (one entry per level)
        time_embed_dim: Sinusoidal time embedding size
        attention_heads: Heads of the middle attention block
        norm_groups: Upper bound on GroupNorm groups
        condition_dropout: Probability of replacing the condition by the null token
        lr: Adam learning rate
        batch_size: Examples per batch
        epochs: Maximum epochs
        grad_clip: Gradient norm clip (0 disables)
        num_workers: DataLoader worker processes
    """

    schedule: str = "linear"
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    base_width: int = 32
    channel_mult: Tuple[int, ...] = (1, 2)
    time_embed_dim: int = 128
    attention_heads: int = 4
    norm_groups: int = 8
    condition_dropout: float = 0.1
    lr: float = 3e-5
    batch_size: int = 8
    epochs: int = 200
    grad_clip: float = 1.0
    num_workers: int = 0

    def validate(self) -> None:
        if self.schedule not in ("linear", "cosine"):
            raise ConfigError(f"ldm.schedule must be linear or cosine, got {self.schedule!r}")
        if self.num_steps < 1:
            raise ConfigError(f"ldm.num_steps must be >= 1, got {self.num_steps}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError("ldm: need 0 < beta_start <= beta_end < 1")
        if not self.channel_mult:
            raise ConfigError("ldm.channel_mult needs at least one level")
        if not (0.0 <= self.condition_dropout <= 1.0):
            raise ConfigError("ldm.condition_dropout must lie in [0, 1]")


@dataclass
class SamplerConfig:
    """
    Reverse-process sampler settings.

    Attributes:
        method: "ddim" (deterministic) or "ddpm" (ancestral)
        inference_steps: Number of DDIM steps (ignored by ddpm, which uses N)
        guidance_weight: Classifier-free guidance weight w
        cfg_convention: "uncond_weighted" (w*eps_u + (1-w)*eps_c) or "standard" (eps_u + w*(eps_c - eps_u))
        seed: Seed for every random draw of the sampler
        batch_size: Chains evaluated together
        griffin_lim_iters: Phase reconstruction iterations when rendering audio
    """

    method: str = "ddim"
    inference_steps: int = 200
    guidance_weight: float = 2.0
    cfg_convention: str = "uncond_weighted"
    seed: int = 0
    batch_size: int = 4
    griffin_lim_iters: int = 64

    def validate(self) -> None:
        if self.method not in ("ddim", "ddpm"):
            raise ConfigError(f"sampler.method must be ddim or ddpm, got {self.method!r}")
        if self.cfg_convention not in ("uncond_weighted", "standard"):
            raise ConfigError(f"sampler.cfg_convention must be uncond_weighted or standard, got {self.cfg_convention!r}")
        if self.inference_steps < 1:
            raise ConfigError("sampler.inference_steps must be >= 1")
        if self.griffin_lim_iters < 1:
            raise ConfigError("sampler.griffin_lim_iters must be >= 1")


@dataclass
class EvalConfig:
    """
    Toy-FAD evaluation settings.

    Attributes:
        split: Reference split
        num_generated: Samples generated per evaluated condition
        protocols: Arrangement protocols to report ("mixture", "stem")
        noise_seed: Seed of the Gaussian-noise baseline
        embed_batch_size: Clips embedded per forward pass
    """

    split: str = "test"
    num_generated: int = 256
    protocols: Tuple[str, ...] = ("mixture", "stem")
    noise_seed: int = 7
    embed_batch_size: int = 32

    def validate(self) -> None:
        if self.split not in ("train", "valid", "test"):
            raise ConfigError(f"eval.split must be train/valid/test, got {self.split!r}")
        unknown = set(self.protocols) - {"mixture", "stem"}
        if unknown or not self.protocols:
            raise ConfigError(f"eval.protocols must be a subset of mixture/stem, got {self.protocols}")


@dataclass
class RunConfig:
    """
    Root configuration of a stemdiff run.

    Attributes:
        schema_version: Config file format version
        seed: Global seed for training
        device: "auto", "cpu" or a torch device string
        checkpoint_root: Directory holding one checkpoint directory per stage
        output_root: Default directory for samples and reports
        log_level: Logging level name
    """

    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    device: str = "auto"
    checkpoint_root: str = "checkpoints"
    output_root: str = "outputs"
    log_level: str = "INFO"
    mel: MelConfig = field(default_factory=MelConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    vae: VAEConfig = field(default_factory=VAEConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    ldm: LDMConfig = field(default_factory=LDMConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def sections(self) -> List[object]:
        return [self.mel, self.dataset, self.vae, self.conditioning,
                self.ldm, self.sampler, self.eval]

    def validate(self) -> None:
        """Validate every section plus the cross-section constraints."""
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"config schema_version {self.schema_version} is not supported "
                f"(expected {SCHEMA_VERSION})"
            )
        for section in self.sections():
            section.validate()
        if str(self.log_level).upper() not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {', '.join(LOG_LEVELS)}, got {self.log_level!r}")

        r = self.vae.compression
        if self.mel.frames % r or self.mel.n_mels % r:
            raise ConfigError(
                f"vae.compression {r} must divide mel.frames {self.mel.frames} "
                f"and mel.n_mels {self.mel.n_mels}"
            )
        levels = len(self.ldm.channel_mult)
        down = 2 ** (levels - 1)
        if (self.mel.frames // r) % down or (self.mel.n_mels // r) % down:
            raise ConfigError(
                f"latent time/frequency axes must be divisible by {down} "
                f"for {levels} UNet levels"
            )
        if self.sampler.inference_steps > self.ldm.num_steps:
            raise ConfigError(
                f"sampler.inference_steps ({self.sampler.inference_steps}) exceeds "
                f"ldm.num_steps ({self.ldm.num_steps})"
            )
        if self.dataset.duration < self.mel.segment_seconds:
            raise ConfigError(
                f"dataset.duration {self.dataset.duration}s is shorter than one "
                f"segment ({self.mel.segment_seconds}s)"
            )

    def is_valid(self) -> bool:
        """Boolean form of validate()."""
        try:
            self.validate()
        except ConfigError:
            return False
        return True
