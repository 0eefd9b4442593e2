"""
End-to-end orchestration.

Loads the frozen stage checkpoints and runs audio -> latent -> audio for
total generation, conditioned generation and arrangement.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .audio.codec import MelVAE, vae_decode, vae_encode
from .audio.mel import mel_transform
from .audio.vocoder import invert_mel
from .conditioning.encoder import ContrastiveEncoder, embed_audio, embed_tag
from .config.sections import SCHEMA_VERSION, RunConfig
from .data.models import STEM_NAMES, ConditionEmbedding, LatentGeometry, MelStack, StemStack
from .data.storage import CheckpointDir, save_json, write_wav
from .diffusion.arrangement import StemMask, arrange_generate, replacement_generators
from .diffusion.denoiser import UNet3D
from .diffusion.sampler import generate
from .diffusion.schedule import NoiseSchedule
from .errors import ConditioningError, ShapeMismatchError
from .utils.seeding import make_generator, resolve_device

logger = logging.getLogger(__name__)

MODES = ("total", "audio_cond", "tag_cond")


def load_vae(root: Union[str, Path], device: torch.device = torch.device("cpu")) -> MelVAE:
    """Rebuild the VAE from its checkpoint manifest and weights."""
    ckpt = CheckpointDir(root, "vae")
    manifest = ckpt.load_manifest()
    vae = MelVAE(**manifest["architecture"], mel_mean=manifest["mel_mean"], mel_std=manifest["mel_std"])
    vae.load_state_dict(ckpt.load_weights(map_location=device))
    return vae.to(device).eval()


def load_encoder(root: Union[str, Path], device: torch.device = torch.device("cpu")) -> ContrastiveEncoder:
    ckpt = CheckpointDir(root, "clap")
    manifest = ckpt.load_manifest()
    encoder = ContrastiveEncoder(**manifest["architecture"], mel_mean=manifest["mel_mean"],
                                 mel_std=manifest["mel_std"])
    encoder.load_state_dict(ckpt.load_weights(map_location=device))
    return encoder.to(device).eval()


def load_denoiser(root: Union[str, Path], device: torch.device = torch.device("cpu")
                  ) -> Tuple[UNet3D, NoiseSchedule, Dict[str, Any]]:
    """UNet, noise schedule and manifest (latent scale, geometry) of the ldm stage."""
    ckpt = CheckpointDir(root, "ldm")
    manifest = ckpt.load_manifest()
    model = UNet3D(**manifest["architecture"])
    model.load_state_dict(ckpt.load_weights(map_location=device))
    return model.to(device).eval(), NoiseSchedule.from_dict(manifest["schedule"]), manifest


@dataclass
class GeneratedSample:
    """One generated example: rendered stems, the mixture and its metadata."""
    stems: StemStack
    mixture: np.ndarray
    metadata: Dict[str, Any]
    latents: Optional[torch.Tensor] = None
    given_audio: Dict[str, np.ndarray] = field(default_factory=dict)
    rendered_given: Dict[str, np.ndarray] = field(default_factory=dict)


class StemDiffPipeline:
    """
    Frozen VAE, encoder and denoiser wired together for sampling.

    Components are loaded from the checkpoint root on first use.
    """

    def __init__(self, cfg: RunConfig, checkpoint_root: Union[str, Path, None] = None):
        self.cfg = cfg
        self.checkpoint_root = Path(checkpoint_root or cfg.checkpoint_root)
        self.device = resolve_device(cfg.device)
        self._vae: Optional[MelVAE] = None
        self._encoder: Optional[ContrastiveEncoder] = None
        self._denoiser: Optional[Tuple[UNet3D, NoiseSchedule, Dict[str, Any]]] = None

    @property
    def vae(self) -> MelVAE:
        if self._vae is None:
            self._vae = load_vae(self.checkpoint_root, self.device)
        return self._vae

    @property
    def encoder(self) -> ContrastiveEncoder:
        if self._encoder is None:
            self._encoder = load_encoder(self.checkpoint_root, self.device)
        return self._encoder

    def _load_denoiser(self):
        if self._denoiser is None:
            self._denoiser = load_denoiser(self.checkpoint_root, self.device)
        return self._denoiser

    @property
    def model(self) -> UNet3D:
        return self._load_denoiser()[0]

    @property
    def schedule(self) -> NoiseSchedule:
        return self._load_denoiser()[1]

    @property
    def latent_scale(self) -> float:
        return float(self._load_denoiser()[2]["latent_scale"])

    @property
    def geometry(self) -> LatentGeometry:
        return LatentGeometry(self.model.num_stems, self.vae.latent_channels, self.vae.compression,
                              self.cfg.mel.frames, self.cfg.mel.n_mels)

    @property
    def stem_names(self) -> Tuple[str, ...]:
        return STEM_NAMES[:self.model.num_stems]

    # audio <-> latent

    def encode_stems(self, stack: StemStack) -> torch.Tensor:
        """(S, C, T/r, F/r) scaled latents of one segment."""
        if stack.num_samples != self.cfg.mel.segment_samples:
            raise ShapeMismatchError(
                f"expected {self.cfg.mel.segment_samples}-sample stems, got {stack.num_samples}"
            )
        mels = mel_transform(stack, self.cfg.mel)
        return vae_encode(mels, self.vae, mode="mean") * self.latent_scale

    def decode_mels(self, z: torch.Tensor) -> torch.Tensor:
        """(B, S, T, F) log-mels of scaled latents."""
        return vae_decode(z / self.latent_scale, self.vae, self.cfg.mel.hop_length, self.cfg.mel.log_floor)

    def render(self, z: torch.Tensor, seeds: Sequence[int]) -> List[StemStack]:
        """Decode a latent batch and invert every example to audio."""
        mels = self.decode_mels(z).cpu().numpy()
        return [
            invert_mel(MelStack(m, self.cfg.mel.hop_length, self.cfg.mel.log_floor), self.cfg.mel,
                       self.cfg.sampler.griffin_lim_iters, seed=seed, stem_names=self.stem_names)
            for m, seed in zip(mels, seeds)
        ]

    # conditions

    def condition_from_audio(self, mixtures: Sequence[np.ndarray]) -> ConditionEmbedding:
        return embed_audio(np.stack([np.asarray(m, dtype=np.float32) for m in mixtures]),
                           self.encoder, self.cfg.mel)

    def condition_from_tag(self, tag: str, batch: int) -> ConditionEmbedding:
        return embed_tag([tag] * batch, self.encoder)

    def _condition(self, mode: str, start: int, batch: int, tag: Optional[str],
                   references: Optional[Sequence[np.ndarray]]) -> Optional[ConditionEmbedding]:
        if mode == "total":
            return None
        if mode == "tag_cond":
            if tag is None:
                raise ConditioningError("tag_cond mode needs --tag")
            return self.condition_from_tag(tag, batch)
        if mode == "audio_cond":
            if not references:
                raise ConditioningError("audio_cond mode needs a reference mixture")
            chosen = [references[(start + k) % len(references)] for k in range(batch)]
            return self.condition_from_audio(chosen)
        raise ValueError(f"unknown sampling mode {mode!r} (expected one of {', '.join(MODES)})")

    def _metadata(self, mode: str, seed: int, guided: bool, **extra) -> Dict[str, Any]:
        sampler = self.cfg.sampler
        metadata = {
            "schema_version": SCHEMA_VERSION,
            "mode": mode,
            "seed": seed,
            "guidance_weight": sampler.guidance_weight if guided else None,
            "cfg_convention": sampler.cfg_convention,
            "method": sampler.method,
            "inference_steps": sampler.inference_steps if sampler.method == "ddim" else self.schedule.num_steps,
        }
        metadata.update({k: v for k, v in extra.items() if v is not None})
        return metadata

    def _batches(self, num_samples: int):
        size = self.cfg.sampler.batch_size
        for start in range(0, num_samples, size):
            yield start, min(size, num_samples - start)

    def sample(self, mode: str = "total", num_samples: int = 1, tag: Optional[str] = None,
               references: Optional[Sequence[np.ndarray]] = None,
               reference_names: Optional[Sequence[str]] = None,
               seed: Optional[int] = None) -> List[GeneratedSample]:
        """
        Generate `num_samples` examples; sample k uses seed + k.

        audio_cond conditions sample k on references[k % len(references)].
        """
        if mode not in MODES:
            raise ValueError(f"unknown sampling mode {mode!r} (expected one of {', '.join(MODES)})")
        base_seed = self.cfg.sampler.seed if seed is None else seed
        shape = self.geometry.latent_shape
        outputs: List[GeneratedSample] = []
        for start, batch in self._batches(num_samples):
            seeds = [base_seed + start + k for k in range(batch)]
            cond = self._condition(mode, start, batch, tag, references)
            z = generate(self.model, self.schedule, self.cfg.sampler, cond, (batch,) + shape,
                         generator=[make_generator(s) for s in seeds], device=self.device)
            for k, stack in enumerate(self.render(z, seeds)):
                reference = None
                if mode == "audio_cond" and reference_names:
                    reference = reference_names[(start + k) % len(reference_names)]
                metadata = self._metadata(mode, seeds[k], cond is not None, tag=tag, reference=reference)
                outputs.append(GeneratedSample(stack, stack.mixture(), metadata, z[k].cpu()))
        return outputs

    def arrange(self, given: StemStack, mask: StemMask, num_samples: int = 1,
                cond: Optional[ConditionEmbedding] = None,
                seed: Optional[int] = None) -> List[GeneratedSample]:
        """
        Generate the stems outside `mask` around the given stems of `given`.

        The output mixture sums the generated stems with the original given
        audio; the re-rendered given stems are kept alongside.
        """
        base_seed = self.cfg.sampler.seed if seed is None else seed
        z0 = self.encode_stems(given).to(self.device)
        names = self.stem_names
        outputs: List[GeneratedSample] = []
        for start, batch in self._batches(num_samples):
            seeds = [base_seed + start + k for k in range(batch)]
            z = arrange_generate(
                self.model, self.schedule, self.cfg.sampler, z0.unsqueeze(0).expand(batch, -1, -1, -1, -1),
                mask, cond=None if cond is None else cond.repeat(batch),
                generator=[make_generator(s) for s in seeds],
                replace_generator=replacement_generators(base_seed + start, batch),
            )
            for k, stack in enumerate(self.render(z, seeds)):
                mixed = stack.stems.copy()
                for i in mask.given:
                    mixed[i] = given.stems[i]
                metadata = self._metadata(
                    "arrange", seeds[k], cond is not None,
                    given=[names[i] for i in mask.given],
                    generated=[names[i] for i in mask.generated],
                )
                outputs.append(GeneratedSample(
                    stems=StemStack(mixed, stack.sample_rate, stack.stem_names),
                    mixture=mixed.sum(axis=0),
                    metadata=metadata,
                    latents=z[k].cpu(),
                    given_audio={names[i]: given.stems[i] for i in mask.given},
                    rendered_given={names[i]: stack.stems[i] for i in mask.given},
                ))
        return outputs


def write_sample(out_dir: Union[str, Path], sample: GeneratedSample, sample_rate: int = 16000,
                 given_files: Optional[Dict[str, Path]] = None) -> Path:
    """
    Write one sample directory: <stem>.wav per stem, mixture.wav, metadata.json.

    Given stems listed in `given_files` are copied byte for byte; their
    re-rendering goes to <stem>.rendered.wav.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    given_files = given_files or {}
    for name, audio in zip(sample.stems.stem_names, sample.stems.stems):
        if name in given_files:
            (out_dir / f"{name}.wav").write_bytes(Path(given_files[name]).read_bytes())
        else:
            write_wav(out_dir / f"{name}.wav", audio, sample_rate)
    for name, audio in sample.rendered_given.items():
        write_wav(out_dir / f"{name}.rendered.wav", audio, sample_rate)
    write_wav(out_dir / "mixture.wav", np.clip(sample.mixture, -1.0, 1.0), sample_rate)
    save_json(out_dir / "metadata.json", sample.metadata)
    return out_dir


def require_components(root: Union[str, Path]) -> None:
    """Raise CheckpointError naming the first stage still to be trained."""
    for stage in ("vae", "clap", "ldm"):
        CheckpointDir(root, stage).require()
