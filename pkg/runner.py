"""
Experiment-grid orchestration.

An experiment config (TOML) names a dataset, its files, how synthetic data
is obtained (trained cGAN or an external class-directory tree), a classifier
config, a corruption section and a grid of (train composition, test set)
cells. :func:`run_grid` runs every cell for every replication seed:

1. per seed, the main process prepares the synthetic training pool, the
   synthetic test set and the corrupted test set, caching each on disk by
   content key (generators are trained at most once per key);
2. each cell composes its training set, trains a fresh classifier and
   evaluates it, either inline or in a process pool;
3. results are appended to ``results.jsonl`` as cells complete, and
   completed cells are skipped when the same output directory is reused.

Usage:
    from runner import load_experiment_config, run_grid

    config = load_experiment_config("artifacts/configs/mnist_grid.toml")
    results = run_grid(config)
"""

from __future__ import annotations

import os
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor, as_completed
from datetime import datetime, timezone
from enum import Enum
from functools import lru_cache
from multiprocessing import get_context
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from cgan import GanTrainConfig, TrainedGenerator, generate_synthetic_dataset, load_generator, save_generator, train_cgan
from classifier import (
    RECOMMENDED_SETTINGS,
    ClassifierConfig,
    evaluate,
    load_classifier,
    save_classifier,
    train_classifier,
)
from corruption import (
    CorruptionSpec,
    apply_shot_noise,
    cache_corrupted_set,
    check_semantic_preservation,
    ingest_corrupted_set,
)
from dataset_io import load_cifar10, load_idx, load_image_directory, load_npz, save_npz
from fid import FidMonitor
from mixer import MixtureSpec, audit, compose, parse_ratio
from models import DatasetName, LabeledImageSet, check_shape_contract
from results_store import KEY_FIELD, RESULTS_FILE_NAME, STATUS_ERROR, STATUS_OK, ResultsSink
from utils.artifacts import content_key, resolve_relative, save_artifact, sha256_bytes
from utils.checkpoint import parameter_digest
from utils.errors import ConsistencyError, ValidationError
from utils.helpers import configure_determinism, derive_seed
from utils.logging import get_logger
from utils.settings import resolve_cache_dir

logger = get_logger()

MANIFEST_FILE_NAME = "manifest.json"
DEFAULT_SEEDS = [0, 1, 2]


# ============================================================================
# CONFIG MODELS
# ============================================================================

class TestSetKind(str, Enum):
    """Enumeration of evaluation sets."""
    ORIGINAL = "original"
    SYNTHETIC = "synthetic"
    CORRUPTED = "corrupted"

    @classmethod
    def is_valid(cls, value: str) -> bool:
        return value in cls._value2member_map_


PURE_ORIGINAL = "original"
PURE_SYNTHETIC = "synthetic"


class GridCell(BaseModel):
    """One (train composition, test set) pair; ``train`` is original, synthetic or a:b."""
    train: str
    test: TestSetKind

    @field_validator("train")
    @classmethod
    def _check_train(cls, value: str) -> str:
        value = value.strip().lower()
        if value in (PURE_ORIGINAL, PURE_SYNTHETIC):
            return value
        a, b = parse_ratio(value)
        return f"{a}:{b}"

    @property
    def is_pure(self) -> bool:
        return self.train in (PURE_ORIGINAL, PURE_SYNTHETIC)

    @property
    def ratio(self) -> tuple[int, int]:
        if self.train == PURE_ORIGINAL:
            return 1, 0
        if self.train == PURE_SYNTHETIC:
            return 0, 1
        return parse_ratio(self.train)

    @property
    def label(self) -> str:
        return f"{self.train}->{self.test.value}"


class DataSection(BaseModel):
    """Real dataset files: an IDX pair per split, or a CIFAR-10 batch directory."""
    train_images: Optional[Path] = None
    train_labels: Optional[Path] = None
    test_images: Optional[Path] = None
    test_labels: Optional[Path] = None
    cifar_dir: Optional[Path] = None


class GanSection(BaseModel):
    """Trained-cGAN settings, or external synthetic class-directory trees."""
    train: GanTrainConfig = Field(default_factory=GanTrainConfig)
    monitor: bool = Field(default=True, description="Early stop on feature Fréchet distance")
    synthetic_train_dir: Optional[Path] = None
    synthetic_test_dir: Optional[Path] = None

    @property
    def external(self) -> bool:
        return self.synthetic_train_dir is not None


class CorruptionSection(BaseModel):
    """Shot-noise generation parameters, or an externally corrupted test set to ingest."""
    intensity: float = Field(default=CorruptionSpec().intensity, gt=0)
    seed: int = Field(default=0)
    images: Optional[Path] = None
    labels: Optional[Path] = None


def _default_workers() -> int:
    """Half of os.cpu_count(), which counts SMT siblings; at least 1."""
    return max(1, (os.cpu_count() or 2) // 2)


class ExperimentConfig(BaseModel):
    """Declarative experiment grid."""
    model_config = ConfigDict(extra="forbid")

    dataset: DatasetName
    data: DataSection
    gan: GanSection = Field(default_factory=GanSection)
    classifier: ClassifierConfig
    corruption: CorruptionSection = Field(default_factory=CorruptionSection)
    cells: list[GridCell] = Field(default_factory=list)
    seeds: list[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS))
    total_size: Optional[int] = Field(default=None, gt=0)
    class_balanced: bool = Field(default=True)
    workers: int = Field(
        default_factory=_default_workers,
        ge=1,
        description="Process-pool size; defaults to half the logical CPUs as a physical-core estimate",
    )
    deterministic: bool = Field(default=True)
    output_dir: Path = Field(default=Path("results"))
    cache_dir: Optional[Path] = None

    @model_validator(mode="before")
    @classmethod
    def _fill_classifier_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        section = data.get("classifier") or {}
        if isinstance(section, ClassifierConfig):
            return data
        try:
            dataset = DatasetName(data.get("dataset"))
        except ValueError:
            return data  # reported by field validation
        return {**data, "classifier": {**RECOMMENDED_SETTINGS[dataset], **section}}

    @model_validator(mode="after")
    def _check_sources(self) -> "ExperimentConfig":
        if self.dataset == DatasetName.CIFAR10:
            if "train" in self.gan.model_fields_set:
                raise ValueError("cifar10 cannot train a cGAN; supply gan.synthetic_train_dir instead")
            if not self.gan.external:
                raise ValueError("cifar10 requires gan.synthetic_train_dir (external synthetic images)")
            if self.data.cifar_dir is None:
                raise ValueError("cifar10 requires data.cifar_dir")
        else:
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if getattr(self.data, key) is None:
                    raise ValueError(f"{self.dataset.value} requires data.{key}")
        if self.gan.external and self.gan.synthetic_test_dir is None and any(
            c.test == TestSetKind.SYNTHETIC for c in self.cells
        ):
            raise ValueError("synthetic test cells with external synthetic data need gan.synthetic_test_dir")
        images, labels = self.corruption.images, self.corruption.labels
        if labels is not None and images is None:
            raise ValueError("corruption.labels given without corruption.images")
        if images is not None and labels is None and not images.is_dir():
            raise ValueError("corruption.images needs corruption.labels unless it is a class directory")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        return self

    @property
    def needs_synthetic(self) -> bool:
        return any(c.ratio[1] > 0 or c.test == TestSetKind.SYNTHETIC for c in self.cells)

    def classifier_for(self, seed: int) -> ClassifierConfig:
        return self.classifier.model_copy(update={"seed": derive_seed(seed, "classifier")})

    def gan_for(self, seed: int) -> GanTrainConfig:
        return self.gan.train.model_copy(update={"seed": derive_seed(seed, "cgan")})


_PATH_KEYS: dict[Optional[str], tuple[str, ...]] = {
    None: ("output_dir", "cache_dir"),
    "data": ("train_images", "train_labels", "test_images", "test_labels", "cifar_dir"),
    "gan": ("synthetic_train_dir", "synthetic_test_dir"),
    "corruption": ("images", "labels"),
}


def _resolve_paths(raw: dict[str, Any], base_dir: Path) -> dict[str, Any]:
    out = dict(raw)
    for section, keys in _PATH_KEYS.items():
        block = out if section is None else dict(out.get(section) or {})
        for key in keys:
            if block.get(key) is not None:
                block[key] = str(resolve_relative(block[key], base_dir))
        if section is not None and section in out:
            out[section] = block
    return out


def validate_experiment_config(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except pydantic.ValidationError as e:
        raise ValidationError(f"Invalid experiment config: {e}") from e


def load_experiment_config(path: str | Path, overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    """
    Parse a TOML experiment config; paths in it are relative to the file.

    ``overrides`` (already-resolved values, e.g. from CLI flags) replace
    top-level keys before validation.

    Raises:
        ValidationError: If the file is unreadable or the config is invalid.
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ValidationError(f"Cannot read config {path}: {e}") from e
    raw = _resolve_paths(raw, path.resolve().parent)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate_experiment_config(raw)


# ============================================================================
# RESULTS
# ============================================================================

class ExperimentResult(BaseModel):
    """One (cell x seed) outcome as stored in the results file."""
    cell_key: str
    status: str
    dataset: str
    train_composition: str
    test_set: str
    seed: int
    accuracy: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    per_class_accuracy: list[Optional[float]] = Field(default_factory=list)
    n_original: int = 0
    n_synthetic: int = 0
    total: int = 0
    audit: dict[str, Any] = Field(default_factory=dict)
    wall_time_s: float = 0.0
    classifier_checksum: Optional[str] = None
    generator_checksum: Optional[str] = None
    error: Optional[str] = None


# ============================================================================
# PREPARATION (main process)
# ============================================================================

def dataset_fingerprint(data: LabeledImageSet) -> str:
    return sha256_bytes(data.images.tobytes() + data.labels.tobytes())[:16]


def load_real_sets(config: ExperimentConfig) -> tuple[LabeledImageSet, LabeledImageSet]:
    if config.dataset == DatasetName.CIFAR10:
        train, test = load_cifar10(config.data.cifar_dir)
    else:
        name = config.dataset.value
        train = load_idx(config.data.train_images, config.data.train_labels, name=f"{name}-train")
        test = load_idx(config.data.test_images, config.data.test_labels, name=f"{name}-test")
    check_shape_contract(train, config.dataset)
    check_shape_contract(test, config.dataset)
    return train, test


def _cached_set(path: Path, build: Callable[[], LabeledImageSet]) -> LabeledImageSet:
    if path.exists():
        logger.info("Cache hit %s", path.name)
        return load_npz(path)
    logger.info("Cache miss %s", path.name)
    data = build()
    save_npz(data, path)
    return data


def _monitor_classifier(config: ExperimentConfig, train: LabeledImageSet, cache: Path, fingerprint: str):
    settings = config.classifier.model_copy(update={"seed": derive_seed(0, "fid-monitor")})
    key = content_key({"train": fingerprint, "classifier": settings.model_dump(mode="json")})
    path = cache / "classifiers" / f"monitor-{key}.ckpt"
    if path.exists():
        logger.info("Cache hit monitor classifier %s", key)
        return load_classifier(path.read_bytes())
    logger.info("Cache miss monitor classifier %s; training", key)
    model = train_classifier(train, settings, log_context={"dataset": train.name, "cell": "fid-monitor"})
    save_artifact(save_classifier(model), path)
    return model


def _cached_generator(
    config: ExperimentConfig, seed: int, train: LabeledImageSet, cache: Path, fingerprint: str
) -> TrainedGenerator:
    gan_config = config.gan_for(seed)
    key = content_key({"train": fingerprint, "gan": gan_config.model_dump(mode="json"), "monitor": config.gan.monitor})
    path = cache / "generators" / f"{key}.ckpt"
    if path.exists():
        logger.info("Cache hit generator %s", key, extra={"seed": seed})
        return load_generator(path.read_bytes())
    logger.info("Cache miss generator %s; training", key, extra={"seed": seed})
    monitor = None
    if config.gan.monitor:
        monitor = FidMonitor(
            _monitor_classifier(config, train, cache, fingerprint),
            train,
            sample_count=gan_config.monitor_sample_count,
            seed=derive_seed(seed, "fid-reference"),
        )
    generator = train_cgan(train, gan_config, monitor)
    save_artifact(save_generator(generator), path)
    return generator


class SeedArtifacts(BaseModel):
    """Paths of the prepared per-seed sets (npz caches)."""
    seed: int
    synthetic_train: Optional[Path] = None
    synthetic_test: Optional[Path] = None
    generator_checksum: Optional[str] = None
    generator_manifest: dict[str, Any] = Field(default_factory=dict)


def prepare_seed(
    config: ExperimentConfig,
    seed: int,
    train: LabeledImageSet,
    test: LabeledImageSet,
    cache: Path,
    fingerprint: str,
) -> SeedArtifacts:
    """Synthetic training pool and synthetic test set for one replication seed."""
    num_classes = train.num_classes
    if config.gan.external:
        external_key = content_key([str(config.gan.synthetic_train_dir), str(config.gan.synthetic_test_dir)])
        pool_path = cache / "synthetic" / f"external-{external_key}-train.npz"
        _cached_set(pool_path, lambda: load_image_directory(
            config.gan.synthetic_train_dir, num_classes, name=f"{config.dataset.value}-synthetic-train"
        ))
        test_path = None
        if config.gan.synthetic_test_dir is not None:
            test_path = cache / "synthetic" / f"external-{external_key}-test.npz"
            _cached_set(test_path, lambda: load_image_directory(
                config.gan.synthetic_test_dir, num_classes, name=f"{config.dataset.value}-synthetic-test"
            ))
        return SeedArtifacts(seed=seed, synthetic_train=pool_path, synthetic_test=test_path)

    generator = _cached_generator(config, seed, train, cache, fingerprint)
    checksum = parameter_digest(generator.parameters)
    prefix = cache / "synthetic" / f"{checksum[:16]}-{seed}"
    pool_path = Path(f"{prefix}-train.npz")
    test_path = Path(f"{prefix}-test.npz")
    pool = _cached_set(pool_path, lambda: generate_synthetic_dataset(
        generator, train.class_counts(), derive_seed(seed, "synthetic-pool"),
        name=f"{config.dataset.value}-synthetic-train",
    ))
    _cached_set(test_path, lambda: generate_synthetic_dataset(
        generator, test.class_counts(), derive_seed(seed, "synthetic-test"),
        name=f"{config.dataset.value}-synthetic-test",
    ))
    logger.info("Synthetic pool %s checksum %s", pool.name, dataset_fingerprint(pool), extra={"seed": seed})
    return SeedArtifacts(
        seed=seed,
        synthetic_train=pool_path,
        synthetic_test=test_path,
        generator_checksum=checksum,
        generator_manifest=generator.training_manifest,
    )


def prepare_corrupted(config: ExperimentConfig, test: LabeledImageSet, cache: Path, fingerprint: str) -> Path:
    """Corrupted test set (ingested or generated), checked against the clean labels."""
    section = config.corruption
    if section.images is not None:
        corrupted = ingest_corrupted_set(section.images, section.labels, num_classes=test.num_classes)
        key = content_key({"ingested": dataset_fingerprint(corrupted)})
    else:
        spec = CorruptionSpec(intensity=section.intensity, seed=section.seed)
        key = content_key({"test": fingerprint, "corruption": spec.model_dump(mode="json")})
        directory = cache / "corrupted" / key
        images_path, labels_path = directory / "images-idx-ubyte", directory / "labels-idx1-ubyte"
        if not images_path.exists():
            logger.info("Cache miss corrupted set %s", key)
            cache_corrupted_set(apply_shot_noise(test, spec), directory)
        corrupted = load_idx(
            images_path, labels_path, num_classes=test.num_classes,
            name=f"{test.name}+shot_noise(lambda={spec.intensity:g})",
        )
    check_semantic_preservation(corrupted, test)
    path = cache / "corrupted" / f"{key}.npz"
    if not path.exists():
        save_npz(corrupted, path)
    return path


# ============================================================================
# CELL EXECUTION (worker side)
# ============================================================================

class CellTask(BaseModel):
    """Everything a worker needs to run one cell; paths point into the cache."""
    cell_key: str
    dataset: str
    cell: GridCell
    seed: int
    original_train: Path
    synthetic_train: Optional[Path] = None
    test_set: Path
    total_size: int
    class_balanced: bool
    classifier: ClassifierConfig
    deterministic: bool
    checkpoint_dir: Path
    generator_checksum: Optional[str] = None


@lru_cache(maxsize=8)
def _load_cached(path: str) -> LabeledImageSet:
    return load_npz(path)


def compose_training_set(
    original: LabeledImageSet,
    synthetic: LabeledImageSet,
    cell: GridCell,
    total_size: int,
    class_balanced: bool,
    seed: int,
) -> LabeledImageSet:
    """Pure compositions draw unstratified from one source; ratio cells use the mixer."""
    a, b = cell.ratio
    spec = MixtureSpec(
        ratio_original=a,
        ratio_synthetic=b,
        total_size=total_size,
        class_balanced=class_balanced and not cell.is_pure,
        seed=derive_seed(seed, "compose"),
    )
    return compose(original, synthetic, spec)


def run_cell(task: CellTask) -> dict[str, Any]:
    """Run one cell end-to-end; never raises, failures come back as error records."""
    started = time.perf_counter()
    context = {"dataset": task.dataset, "cell": task.cell.label, "seed": task.seed}
    record: dict[str, Any] = {
        KEY_FIELD: task.cell_key,
        "dataset": task.dataset,
        "train_composition": task.cell.train,
        "test_set": task.cell.test.value,
        "seed": task.seed,
        "generator_checksum": task.generator_checksum,
    }
    try:
        configure_determinism(task.deterministic)
        logger.info("Cell started", extra=context)
        original = _load_cached(str(task.original_train))
        if task.synthetic_train is not None:
            synthetic = _load_cached(str(task.synthetic_train))
        else:
            synthetic = LabeledImageSet.empty(original.image_shape, original.num_classes, name="no-synthetic")
        train = compose_training_set(
            original,
            synthetic,
            task.cell,
            task.total_size,
            task.class_balanced,
            task.seed,
        )
        mixture = audit(train)
        if mixture.total != task.total_size:
            raise ConsistencyError(f"composed {mixture.total} samples, expected {task.total_size}")
        model = train_classifier(train, task.classifier, log_context=context)
        report = evaluate(model, _load_cached(str(task.test_set)))
        payload = save_classifier(model)
        save_artifact(payload, task.checkpoint_dir / f"{task.cell_key}.ckpt")
        record.update(
            status=STATUS_OK,
            accuracy=report.accuracy,
            per_class_accuracy=report.to_dict()["per_class_accuracy"],
            n_original=mixture.n_original,
            n_synthetic=mixture.n_synthetic,
            total=mixture.total,
            audit=mixture.to_dict(),
            classifier_checksum=parameter_digest(model.parameters),
        )
        logger.info("Cell finished accuracy=%.4f", report.accuracy, extra=context)
    except Exception as e:  # recorded, grid continues
        logger.error("Cell failed: %s: %s", type(e).__name__, e, extra=context)
        record.update(status=STATUS_ERROR, error=f"{type(e).__name__}: {e}")
    record["wall_time_s"] = time.perf_counter() - started
    return record


# ============================================================================
# GRID
# ============================================================================

def cell_key(
    config: ExperimentConfig,
    cell: GridCell,
    seed: int,
    total_size: int,
    fingerprints: Optional[dict[str, Optional[str]]] = None,
) -> str:
    """Content key of one (cell, seed); ``fingerprints`` names the data the cell reads."""
    fingerprints = fingerprints or {}
    return content_key({
        "dataset": config.dataset.value,
        "train": cell.train,
        "test": cell.test.value,
        "seed": seed,
        "total_size": total_size,
        "class_balanced": config.class_balanced,
        "classifier": config.classifier.model_dump(mode="json"),
        "gan": (
            {"external": [str(config.gan.synthetic_train_dir), str(config.gan.synthetic_test_dir)]}
            if config.gan.external else {"train": config.gan.train.model_dump(mode="json"), "monitor": config.gan.monitor}
        ),
        "corruption": config.corruption.model_dump(mode="json") if cell.test == TestSetKind.CORRUPTED else None,
        "data": {
            "train": fingerprints.get("train"),
            "original": fingerprints.get("original"),
            "corrupted": fingerprints.get("corrupted") if cell.test == TestSetKind.CORRUPTED else None,
        },
    })


def _package_versions() -> dict[str, str]:
    import matplotlib
    import pandas
    import sklearn
    import torch

    return {
        "numpy": np.__version__,
        "torch": torch.__version__,
        "pandas": pandas.__version__,
        "scikit-learn": sklearn.__version__,
        "matplotlib": matplotlib.__version__,
        "pydantic": pydantic.__version__,
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out_dir: Path, manifest: dict[str, Any]) -> Path:
    return save_artifact(manifest, out_dir / MANIFEST_FILE_NAME)


def _execute(tasks: list[CellTask], workers: int, sink: ResultsSink) -> dict[str, dict[str, Any]]:
    records: dict[str, dict[str, Any]] = {}
    if workers <= 1 or len(tasks) <= 1:
        for task in tasks:
            record = run_cell(task)
            sink.append(record)
            records[task.cell_key] = record
        return records

    with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
        futures = {pool.submit(run_cell, task): task for task in tasks}
        for future in as_completed(futures):
            task = futures[future]
            try:
                record = future.result()
            except Exception as e:  # worker crashed outside run_cell's guard
                logger.error("Worker for %s died: %s", task.cell.label, e, extra={"seed": task.seed})
                record = {
                    KEY_FIELD: task.cell_key,
                    "status": STATUS_ERROR,
                    "dataset": task.dataset,
                    "train_composition": task.cell.train,
                    "test_set": task.cell.test.value,
                    "seed": task.seed,
                    "error": f"{type(e).__name__}: {e}",
                    "wall_time_s": 0.0,
                }
            sink.append(record)
            records[task.cell_key] = record
    return records


def run_grid(config: ExperimentConfig, *, cache_dir: Optional[str | Path] = None) -> list[ExperimentResult]:
    """
    Run every (cell x seed) of ``config``; one result per pair, in config order.

    Completed cells already present in the output directory's results file
    are not rerun. A failing cell is recorded with error status and the
    remaining cells continue; preparation failures (data, generator) abort.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = resolve_cache_dir(cache_dir, config.cache_dir, out_dir)
    configure_determinism(config.deterministic)
    sink = ResultsSink(out_dir / RESULTS_FILE_NAME)

    manifest: dict[str, Any] = {
        "config": config.model_dump(mode="json"),
        "resolved_defaults": {
            "classifier": config.classifier.model_dump(mode="json"),
            "gan": None if config.gan.external else config.gan.train.model_dump(mode="json"),
            "corruption": config.corruption.model_dump(mode="json"),
            "workers": config.workers,
            "deterministic": config.deterministic,
        },
        "package_versions": _package_versions(),
        "cache_dir": str(cache),
        "started_at": _now(),
        "finished_at": None,
        "seeds": {},
    }
    _write_manifest(out_dir, manifest)

    if not config.cells:
        logger.info("Empty grid; nothing to run")
        manifest["finished_at"] = _now()
        manifest["result_count"] = 0
        _write_manifest(out_dir, manifest)
        return []

    train, test = load_real_sets(config)
    total_size = config.total_size or len(train)
    manifest["total_size"] = total_size
    fingerprint = dataset_fingerprint(train)
    test_fingerprint = dataset_fingerprint(test)
    real_dir = cache / "real"
    train_path, test_path = real_dir / f"{fingerprint}-train.npz", real_dir / f"{test_fingerprint}-test.npz"
    for data, path in ((train, train_path), (test, test_path)):
        if not path.exists():
            save_npz(data, path)

    corrupted_path = None
    if any(c.test == TestSetKind.CORRUPTED for c in config.cells):
        corrupted_path = prepare_corrupted(config, test, cache, test_fingerprint)
    fingerprints = {
        "train": fingerprint,
        "original": test_fingerprint,
        "corrupted": corrupted_path.stem if corrupted_path is not None else None,
    }

    ordered_keys: list[str] = []
    tasks: list[CellTask] = []
    for seed in config.seeds:
        keys = [cell_key(config, cell, seed, total_size, fingerprints) for cell in config.cells]
        ordered_keys += keys
        if all(sink.is_complete(k) for k in keys):
            logger.info("All cells complete; skipping preparation", extra={"seed": seed})
            continue
        if config.needs_synthetic:
            prepared = prepare_seed(config, seed, train, test, cache, fingerprint)
        else:
            prepared = SeedArtifacts(seed=seed)
        manifest["seeds"][str(seed)] = {
            "generator_checksum": prepared.generator_checksum,
            "feature_frechet_distance_history": prepared.generator_manifest.get("feature_frechet_distance_history", []),
            "generator_epochs_run": prepared.generator_manifest.get("epochs_run"),
        }
        test_sets = {
            TestSetKind.ORIGINAL: test_path,
            TestSetKind.SYNTHETIC: prepared.synthetic_test,
            TestSetKind.CORRUPTED: corrupted_path,
        }
        for cell, key in zip(config.cells, keys):
            if sink.is_complete(key):
                logger.info("Skipping completed cell", extra={"cell": cell.label, "seed": seed})
                continue
            tasks.append(CellTask(
                cell_key=key,
                dataset=config.dataset.value,
                cell=cell,
                seed=seed,
                original_train=train_path,
                synthetic_train=prepared.synthetic_train,
                test_set=test_sets[cell.test],
                total_size=total_size,
                class_balanced=config.class_balanced,
                classifier=config.classifier_for(seed),
                deterministic=config.deterministic,
                checkpoint_dir=cache / "classifiers",
                generator_checksum=prepared.generator_checksum,
            ))
    _write_manifest(out_dir, manifest)

    logger.info("Running %d cells on %d workers", len(tasks), config.workers)
    fresh = _execute(tasks, config.workers, sink)

    previous = {r[KEY_FIELD]: r for r in sink.records() if r.get("status") == STATUS_OK}
    results = []
    for key in ordered_keys:
        record = fresh.get(key) or previous.get(key)
        if record is not None:
            results.append(ExperimentResult.model_validate(record))

    manifest["finished_at"] = _now()
    manifest["result_count"] = len(results)
    manifest["failed_cells"] = sum(1 for r in results if r.status != STATUS_OK)
    _write_manifest(out_dir, manifest)
    return results
