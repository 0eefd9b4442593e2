"""
Command line entry point for stemdiff.

Subcommands: dataset build, train --stage {vae,clap,ldm}, sample, arrange,
evaluate and config dump. Every command reads one RunConfig (JSON file plus
--set overrides) and is deterministic under that config and its seed.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config.defaults import get_default_run_config, get_full_scale_config, get_micro_config
from .config.sections import RunConfig
from .config.validation import config_to_dict, load_run_config, save_run_config
from .data.dataset import DatasetManifest, build_dataset, load_mixture, load_segment
from .data.models import ConditionEmbedding, StemStack
from .data.storage import CheckpointDir, read_wav
from .diffusion.arrangement import make_mask
from .errors import ConfigError, DatasetError, MaskError, StemDiffError
from .evaluation.fad import make_embedder
from .evaluation.protocol import PROTOCOLS, FADReport, write_report
from .evaluation.runner import evaluate_arrangement, evaluate_directories, evaluate_tags, evaluate_total
from .pipeline import MODES, StemDiffPipeline, require_components, write_sample
from .training.contrastive import contrastive_train
from .training.ldm import train_ldm
from .training.vae import train_vae
from .utils.logger import TrainingLogger, setup_logging

logger = logging.getLogger(__name__)

PRESETS = {
    "default": get_default_run_config,
    "full": get_full_scale_config,
    "micro": get_micro_config,
}
EXIT_ERROR = 2
EXIT_NAN_METRIC = 3
TRAINERS = {"vae": train_vae, "clap": contrastive_train, "ldm": train_ldm}
VALIDATION_METRICS = {"vae": "valid_mse", "clap": "retrieval_accuracy", "ldm": "valid_loss"}


def load_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig from --preset, --config and --set, in that order."""
    base = PRESETS[args.preset]()
    return load_run_config(args.config, args.set or (), base=base)


def load_manifest(cfg: RunConfig) -> DatasetManifest:
    return DatasetManifest.load(cfg.dataset.root)


def _print_summary(title: str, rows: Dict[str, object]) -> None:
    print(f"\n=== {title} ===")
    for key, value in rows.items():
        print(f"  - {key}: {value}")


# commands

def cmd_dataset_build(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = args.out or cfg.dataset.root
    manifest = build_dataset(cfg.dataset, out_dir, cfg.mel.sample_rate, force=args.force)
    _print_summary("Dataset", {
        "root": manifest.root,
        "examples": ", ".join(f"{k}={v}" for k, v in manifest.counts.items()),
        "tags": ", ".join(manifest.tags),
        "manifest": manifest.root / "manifest.json",
    })
    return 0


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    manifest = load_manifest(cfg)
    TRAINERS[args.stage](cfg, manifest, cfg.checkpoint_root)

    ckpt = CheckpointDir(cfg.checkpoint_root, args.stage)
    metrics = TrainingLogger(ckpt.metrics_path, args.stage)
    summary = metrics.summary("train_loss")
    rows: Dict[str, object] = {"checkpoint": ckpt.path}
    if summary:
        rows["epochs"] = summary["epochs"]
        rows["train loss"] = f"{summary['first']:.5f} -> {summary['last']:.5f} ({100 * summary['relative_drop']:.0f}% drop)"
    validation = metrics.history(VALIDATION_METRICS[args.stage])
    if validation:
        rows[VALIDATION_METRICS[args.stage]] = f"{validation[-1]:.5f}"
    _print_summary(f"Training ({args.stage})", rows)
    return 0


def _read_reference(cfg: RunConfig, path: str) -> np.ndarray:
    seg = cfg.mel.segment_samples
    audio, _ = read_wav(path, cfg.mel.sample_rate)
    if len(audio) < seg:
        raise DatasetError(f"{path}: {len(audio)} samples, need at least {seg}")
    return audio[:seg]


def _reference_mixtures(cfg: RunConfig, args: argparse.Namespace):
    """Reference mixtures and their names for audio_cond sampling."""
    seg = cfg.mel.segment_samples
    if args.reference:
        return [_read_reference(cfg, args.reference)], [str(args.reference)]
    if args.reference_split:
        manifest = load_manifest(cfg)
        entries = manifest.entries(args.reference_split)
        if not entries:
            raise DatasetError(f"split {args.reference_split!r} is empty")
        return [load_mixture(manifest, e, seg) for e in entries], [e.id for e in entries]
    return None, None


def cmd_sample(cfg: RunConfig, args: argparse.Namespace) -> int:
    require_components(cfg.checkpoint_root)
    if args.mode == "audio_cond" and not (args.reference or args.reference_split):
        raise ConfigError("audio_cond mode needs --reference WAV or --reference-split SPLIT")
    if args.mode == "tag_cond" and not args.tag:
        raise ConfigError("tag_cond mode needs --tag")

    pipeline = StemDiffPipeline(cfg)
    references, names = _reference_mixtures(cfg, args) if args.mode == "audio_cond" else (None, None)
    samples = pipeline.sample(args.mode, args.num_samples, tag=args.tag,
                              references=references, reference_names=names)
    out_dir = Path(args.out or Path(cfg.output_root) / args.mode)
    for sample in samples:
        write_sample(out_dir / f"sample_{sample.metadata['seed']:05d}", sample, cfg.mel.sample_rate)

    _print_summary(f"Sampling ({args.mode})", {
        "samples": len(samples),
        "output": out_dir,
        "method": f"{cfg.sampler.method}, {samples[0].metadata['inference_steps']} steps",
        "guidance": "none" if args.mode == "total" else f"w={cfg.sampler.guidance_weight} ({cfg.sampler.cfg_convention})",
    })
    return 0


def _given_stems(cfg: RunConfig, stems_dir: Path, given: Sequence[str],
                 stem_names: Sequence[str]) -> Tuple[StemStack, Dict[str, Path]]:
    """Given WAVs from stems_dir cropped to one segment; other stems are silent placeholders."""
    seg = cfg.mel.segment_samples
    stems = np.zeros((len(stem_names), seg), dtype=np.float32)
    files = {}
    for name in given:
        path = stems_dir / f"{name}.wav"
        audio, _ = read_wav(path, cfg.mel.sample_rate)
        if len(audio) < seg:
            raise DatasetError(f"{path}: {len(audio)} samples, need at least {seg}")
        stems[list(stem_names).index(name)] = audio[:seg]
        files[name] = path
    return StemStack(stems, cfg.mel.sample_rate, tuple(stem_names)), files


def _arrange_condition(pipeline: StemDiffPipeline, cfg: RunConfig,
                       args: argparse.Namespace) -> Optional[ConditionEmbedding]:
    """Single-row tag or reference condition for arrangement, or None."""
    if args.tag and args.reference:
        raise ConfigError("arrange takes --tag or --reference, not both")
    if args.tag:
        return pipeline.condition_from_tag(args.tag, 1)
    if args.reference:
        return pipeline.condition_from_audio([_read_reference(cfg, args.reference)])
    return None


def cmd_arrange(cfg: RunConfig, args: argparse.Namespace) -> int:
    require_components(cfg.checkpoint_root)
    if args.guidance_weight is not None:
        cfg.sampler.guidance_weight = args.guidance_weight
    pipeline = StemDiffPipeline(cfg)
    names = pipeline.stem_names

    if args.all_subsets:
        if args.tag or args.reference:
            raise ConfigError("--all-subsets runs unconditioned; drop --tag/--reference")
        manifest = load_manifest(cfg)
        report = evaluate_arrangement(pipeline, manifest, cfg, _embedder(cfg, pipeline), args.protocol)
        return _finish_report(report, Path(args.out or Path(cfg.output_root) / "arrangement"))

    if not args.stems_dir and not args.split:
        raise ConfigError("arrange needs --stems-dir DIR or --split SPLIT")
    given = [g.strip() for g in (args.given or "").split(",") if g.strip()]
    mask = make_mask(given, len(names), names)
    if mask.is_degenerate and not args.allow_degenerate:
        raise MaskError("arrangement needs at least one given and one generated stem "
                        "(pass --allow-degenerate to run an empty or full given set)")

    cond = _arrange_condition(pipeline, cfg, args)
    out_dir = Path(args.out or Path(cfg.output_root) / f"arrange_{mask.label(names)}")
    written: List[Path] = []
    if args.stems_dir:
        stack, files = _given_stems(cfg, Path(args.stems_dir), [names[i] for i in mask.given], names)
        jobs = [("given", stack, files)]
    else:
        manifest = load_manifest(cfg)
        entries = manifest.entries(args.split)[:args.limit] if args.limit else manifest.entries(args.split)
        jobs = [(e.id, load_segment(manifest, e, cfg.mel.segment_samples), None) for e in entries]

    for job_id, stack, files in jobs:
        for sample in pipeline.arrange(stack, mask, args.num_samples, cond=cond):
            sample.metadata["source"] = job_id
            if args.tag:
                sample.metadata["tag"] = args.tag
            if args.reference:
                sample.metadata["reference"] = str(args.reference)
            target = out_dir / job_id / f"sample_{sample.metadata['seed']:05d}"
            written.append(write_sample(target, sample, cfg.mel.sample_rate, given_files=files))

    _print_summary("Arrangement", {
        "given": ", ".join(names[i] for i in mask.given) or "none",
        "generated": ", ".join(names[i] for i in mask.generated) or "none",
        "condition": args.tag or args.reference or "none",
        "guidance": "none" if cond is None else f"w={cfg.sampler.guidance_weight} ({cfg.sampler.cfg_convention})",
        "sample directories": len(written),
        "output": out_dir,
    })
    return 0


def _embedder(cfg: RunConfig, pipeline: StemDiffPipeline):
    return make_embedder(pipeline.encoder, cfg.mel, cfg.eval.embed_batch_size)


def _finish_report(report: FADReport, out_dir: Path) -> int:
    text_path, json_path = write_report(report, out_dir)
    print()
    print(report.to_text(), end="")
    print(f"\nReport written to {text_path} and {json_path}")
    if report.has_nan():
        logger.error("report %r contains a NaN metric", report.title)
        return EXIT_NAN_METRIC
    return 0


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    manifest = load_manifest(cfg)
    out_dir = Path(args.out or Path(cfg.output_root) / "reports")
    if args.generated:
        CheckpointDir(cfg.checkpoint_root, "clap").require()
        pipeline = StemDiffPipeline(cfg)
        report = evaluate_directories(args.generated, manifest, cfg, _embedder(cfg, pipeline), args.protocol)
        return _finish_report(report, out_dir / "generated")

    require_components(cfg.checkpoint_root)
    pipeline = StemDiffPipeline(cfg)
    embed = _embedder(cfg, pipeline)
    tasks = {
        "total": lambda: evaluate_total(pipeline, manifest, cfg, embed),
        "tags": lambda: evaluate_tags(pipeline, manifest, cfg, embed),
        "arrangement": lambda: evaluate_arrangement(pipeline, manifest, cfg, embed, args.protocol),
    }
    status = 0
    for task in (tasks if args.task == "all" else [args.task]):
        status = max(status, _finish_report(tasks[task](), out_dir / task))
    return status


def cmd_config_dump(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.out:
        save_run_config(cfg, args.out)
        print(f"Configuration written to {args.out}")
    else:
        print(json.dumps(config_to_dict(cfg), indent=2))
    return 0


def create_argument_parser() -> argparse.ArgumentParser:
    """Create command line argument parser."""
    parser = argparse.ArgumentParser(
        prog="stemdiff",
        description="Multi-track latent diffusion for music stems",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", type=str, default=None, help="JSON run configuration file")
    parser.add_argument("--preset", choices=sorted(PRESETS), default="default",
                        help="Base configuration the config file and overrides apply to")
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="Override one config key (repeatable; values are JSON literals)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None,
                        help="Logging level (default: from config)")
    parser.add_argument("--log-file", type=str, default=None, help="Also write logs to this file")
    commands = parser.add_subparsers(dest="command", required=True)

    dataset = commands.add_parser("dataset", help="Synthetic dataset commands")
    dataset_commands = dataset.add_subparsers(dest="dataset_command", required=True)
    build = dataset_commands.add_parser("build", help="Render the synthetic stem dataset")
    build.add_argument("--out", type=str, default=None, help="Dataset root (default: dataset.root)")
    build.add_argument("--force", action="store_true", help="Overwrite a non-empty dataset root")
    build.set_defaults(handler=cmd_dataset_build)

    train = commands.add_parser("train", help="Train one stage (resumes from its checkpoint)")
    train.add_argument("--stage", choices=list(TRAINERS), required=True)
    train.set_defaults(handler=cmd_train)

    sample = commands.add_parser("sample", help="Generate all stems")
    sample.add_argument("--mode", choices=MODES, default="total")
    sample.add_argument("--tag", type=str, default=None, help="Vocabulary tag for tag_cond")
    sample.add_argument("--reference", type=str, default=None, help="Reference mixture WAV for audio_cond")
    sample.add_argument("--reference-split", choices=["train", "valid", "test"], default=None,
                        help="Condition sample k on mixture k of this dataset split")
    sample.add_argument("--num-samples", type=int, default=1)
    sample.add_argument("--out", type=str, default=None)
    sample.set_defaults(handler=cmd_sample)

    arrange = commands.add_parser("arrange", help="Generate the stems missing from a given set")
    arrange.add_argument("--given", type=str, default="", help="Comma-separated given stems, e.g. bass,drums")
    arrange.add_argument("--stems-dir", type=str, default=None, help="Directory holding <stem>.wav for given stems")
    arrange.add_argument("--split", choices=["train", "valid", "test"], default=None,
                         help="Arrange every example of a dataset split instead of --stems-dir")
    arrange.add_argument("--limit", type=int, default=None, help="Examples to take from --split")
    arrange.add_argument("--all-subsets", action="store_true",
                         help="Run every proper generated subset on the eval split and write the report")
    arrange.add_argument("--protocol", nargs="+", choices=PROTOCOLS, default=list(PROTOCOLS))
    arrange.add_argument("--allow-degenerate", action="store_true",
                         help="Permit an empty or full given set")
    arrange.add_argument("--tag", type=str, default=None, help="Condition the generated stems on a vocabulary tag")
    arrange.add_argument("--reference", type=str, default=None,
                         help="Condition the generated stems on a reference mixture WAV")
    arrange.add_argument("--guidance-weight", type=float, default=None,
                         help="Classifier-free guidance weight (default: sampler.guidance_weight)")
    arrange.add_argument("--num-samples", type=int, default=1)
    arrange.add_argument("--out", type=str, default=None)
    arrange.set_defaults(handler=cmd_arrange)

    evaluate = commands.add_parser("evaluate", help="toy-FAD reports")
    evaluate.add_argument("--task", choices=["total", "tags", "arrangement", "all"], default="all")
    evaluate.add_argument("--generated", nargs="+", default=None,
                          help="Score existing sample directories instead of generating")
    evaluate.add_argument("--protocol", nargs="+", choices=PROTOCOLS, default=list(PROTOCOLS))
    evaluate.add_argument("--out", type=str, default=None)
    evaluate.set_defaults(handler=cmd_evaluate)

    config = commands.add_parser("config", help="Configuration commands")
    config_commands = config.add_subparsers(dest="config_command", required=True)
    dump = config_commands.add_parser("dump", help="Print or write the effective configuration")
    dump.add_argument("--out", type=str, default=None)
    dump.set_defaults(handler=cmd_config_dump)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit status."""
    parser = create_argument_parser()
    args = parser.parse_args(argv)
    try:
        # config errors are logged before the configured level is known
        setup_logging(args.log_level or "INFO", args.log_file)
        cfg = load_config(args)
        if args.log_level is None:
            setup_logging(cfg.log_level, args.log_file)
        return args.handler(cfg, args)
    except StemDiffError as e:
        logger.error("%s", e)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
