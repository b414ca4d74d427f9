"""
synthmix command-line interface.

Each subcommand is a thin wrapper over one pipeline operation:

    train-gan         train a conditional GAN on a 28x28 grayscale set
    generate          sample a class-balanced synthetic set from a generator
    corrupt           write a shot-noise corrupted copy of a set (IDX pair)
    mix               compose a constant-size original/synthetic mixture
    train-classifier  train a classifier checkpoint
    evaluate          evaluate a classifier checkpoint on a set
    run               run an experiment grid from a TOML config
    report            emit CSV, markdown and plots from a results file

Data arguments accept an IDX images file (with ``--labels``), a ``.npz``
cache, a class-directory tree, or ``--cifar DIR --split train|test``.

Exit codes: 0 on success, 1 on a pipeline error (one diagnostic line),
2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from cgan import GanTrainConfig, generate_synthetic_dataset, load_generator, save_generator, train_cgan
from classifier import ClassifierConfig, evaluate, load_classifier, save_classifier, train_classifier
from corruption import CorruptionSpec, apply_shot_noise, cache_corrupted_set, ingest_corrupted_set
from dataset_io import (
    load_cifar10,
    load_idx,
    load_image_directory,
    load_npz,
    save_npz,
    write_idx,
    write_image_directory,
)
from fid import FidMonitor
from mixer import MixtureSpec, audit, compose
from models import LabeledImageSet, Provenance
from report import emit_report
from results_store import RESULTS_FILE_NAME, STATUS_OK
from runner import load_experiment_config, run_grid
from utils.artifacts import save_artifact
from utils.errors import FormatError, SynthMixError
from utils.logging import get_logger
from utils.settings import load_environment

logger = get_logger()


# ============================================================================
# DATA ARGUMENTS
# ============================================================================

def _add_data_args(parser: argparse.ArgumentParser, prefix: str = "") -> None:
    dest = prefix.replace("-", "_")
    parser.add_argument(f"--{prefix}images", dest=f"{dest}images", help="IDX file, .npz cache or class directory")
    parser.add_argument(f"--{prefix}labels", dest=f"{dest}labels", help="IDX labels file (IDX input only)")
    if not prefix:
        parser.add_argument("--cifar", help="CIFAR-10 binary batch directory")
        parser.add_argument("--split", choices=["train", "test"], default="train")
    parser.add_argument(f"--{prefix}num-classes", dest=f"{dest}num_classes", type=int, default=10)


def _as_synthetic(data: LabeledImageSet) -> LabeledImageSet:
    return LabeledImageSet.from_arrays(data.images, data.labels, data.num_classes, Provenance.SYNTHETIC, data.name)


def _load_data(args: argparse.Namespace, prefix: str = "") -> LabeledImageSet:
    data = _read_data(args, prefix)
    return _as_synthetic(data) if prefix == "synthetic-" else data


def _read_data(args: argparse.Namespace, prefix: str) -> LabeledImageSet:
    dest = prefix.replace("-", "_")
    images = getattr(args, f"{dest}images")
    labels = getattr(args, f"{dest}labels")
    num_classes = getattr(args, f"{dest}num_classes")
    if not prefix and getattr(args, "cifar", None):
        train, test = load_cifar10(args.cifar)
        return train if args.split == "train" else test
    if images is None:
        raise FormatError(f"--{prefix}images (or --cifar) is required")
    path = Path(images)
    if path.is_dir():
        return load_image_directory(path, num_classes, provenance=Provenance.REAL)
    if path.suffix == ".npz":
        return load_npz(path)
    if path.suffix == ".npy":
        return ingest_corrupted_set(path, labels, num_classes=num_classes)
    if labels is None:
        raise FormatError(f"--{prefix}labels is required for IDX input {path}")
    return load_idx(path, labels, num_classes=num_classes)


def _write_set(data: LabeledImageSet, out: Path) -> Path:
    if out.suffix == ".npz":
        return save_npz(data, out)
    if out.suffix == ".idx" or out.name.endswith("-ubyte"):
        images_path, _ = write_idx(data, out, out.with_name(out.name + ".labels"))
        return images_path
    return write_image_directory(data, out)


def _print_json(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_train_gan(args: argparse.Namespace) -> int:
    data = _load_data(args)
    overrides = {
        "epochs": args.epochs, "seed": args.seed, "batch_size": args.batch_size,
        "latent_dim": args.latent_dim, "base_channels": args.base_channels,
    }
    config = GanTrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    monitor = None
    if args.monitor_classifier:
        model = load_classifier(Path(args.monitor_classifier).read_bytes())
        monitor = FidMonitor(model, data, sample_count=config.monitor_sample_count, seed=config.seed)
    generator = train_cgan(data, config, monitor)
    path = save_artifact(save_generator(generator), args.out)
    logger.info("Generator written to %s", path)
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    generator = load_generator(Path(args.generator).read_bytes())
    counts = [int(c) for c in args.per_class.split(",")]
    if len(counts) == 1:
        counts = counts * generator.num_classes
    data = generate_synthetic_dataset(generator, counts, args.seed)
    path = _write_set(data, Path(args.out))
    logger.info("Wrote %d synthetic images to %s", len(data), path)
    return 0


def cmd_corrupt(args: argparse.Namespace) -> int:
    data = _load_data(args)
    if args.severity is not None:
        spec = CorruptionSpec.from_severity(args.severity, seed=args.seed)
    else:
        spec = CorruptionSpec(intensity=args.intensity, seed=args.seed)
    images_path, labels_path = cache_corrupted_set(apply_shot_noise(data, spec), args.out)
    logger.info("Corrupted set written to %s, %s", images_path, labels_path)
    return 0


def cmd_mix(args: argparse.Namespace) -> int:
    original = _load_data(args)
    synthetic = _load_data(args, prefix="synthetic-")
    spec = MixtureSpec.from_ratio(args.ratio, args.total, class_balanced=not args.unbalanced, seed=args.seed)
    mixed = compose(original, synthetic, spec)
    if args.out:
        _write_set(mixed, Path(args.out))
    _print_json(audit(mixed).to_dict())
    return 0


def cmd_train_classifier(args: argparse.Namespace) -> int:
    data = _load_data(args)
    overrides = {
        "architecture": args.architecture, "learning_rate": args.learning_rate,
        "epochs": args.epochs, "batch_size": args.batch_size, "seed": args.seed,
    }
    if args.dataset:
        config = ClassifierConfig.for_dataset(args.dataset, **overrides)
    else:
        config = ClassifierConfig(**{k: v for k, v in overrides.items() if v is not None})
    model = train_classifier(data, config, log_context={"dataset": data.name})
    path = save_artifact(save_classifier(model), args.out)
    logger.info("Classifier written to %s", path)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_classifier(Path(args.classifier).read_bytes())
    report = evaluate(model, _load_data(args))
    _print_json(report.to_dict())
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    overrides = {
        "output_dir": str(Path(args.out).resolve()) if args.out else None,
        "seeds": [int(s) for s in args.seeds.split(",")] if args.seeds else None,
        "workers": args.workers,
        "deterministic": args.deterministic,
    }
    config = load_experiment_config(args.config, overrides)
    results = run_grid(config, cache_dir=args.cache_dir)
    results_path = Path(config.output_dir) / RESULTS_FILE_NAME
    if results_path.exists():
        emit_report(results_path, config.output_dir)
    failed = sum(1 for r in results if r.status != STATUS_OK)
    logger.info("Grid finished: %d results, %d failed", len(results), failed)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    paths = emit_report(args.results, args.out)
    _print_json({k: [str(p) for p in v] for k, v in paths.items()})
    return 0


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthmix", description="Original/synthetic data mixing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-gan", help="train a conditional GAN")
    _add_data_args(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--monitor-classifier", help="classifier checkpoint for early stopping")
    p.add_argument("--out", required=True, help="generator checkpoint path")
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("generate", help="sample a synthetic set")
    p.add_argument("--generator", required=True)
    p.add_argument("--per-class", required=True, help="count per class, or comma-separated counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=".npz file, *-ubyte IDX file or directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("corrupt", help="apply shot noise")
    _add_data_args(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--intensity", type=float, default=25.0)
    group.add_argument("--severity", type=int, choices=[1, 2, 3, 4, 5])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for the IDX pair")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("mix", help="compose a mixture and print its audit")
    _add_data_args(p)
    _add_data_args(p, prefix="synthetic-")
    p.add_argument("--ratio", required=True, help="original:synthetic, e.g. 5:1")
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unbalanced", action="store_true", help="skip per-class stratification")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("train-classifier", help="train a classifier")
    _add_data_args(p)
    p.add_argument("--dataset", choices=["mnist", "fashion_mnist", "cifar10"], help="use recommended settings")
    p.add_argument("--architecture", choices=["simple_cnn", "deep_cnn"])
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="classifier checkpoint path")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("evaluate", help="evaluate a classifier")
    p.add_argument("--classifier", required=True)
    _add_data_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="run an experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seeds", help="comma-separated replication seeds")
    p.add_argument("--workers", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="emit report files from results")
    p.add_argument("results", help="results.jsonl or run.csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_environment()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SynthMixError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1
    except (OSError, ValueError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
