"""
Shot-noise corruption for out-of-distribution evaluation.

Generates MNIST-C style shot-noise test sets and ingests externally built
corrupted sets (IDX pairs, ``.npy`` pairs as published for MNIST-C, or
class-directory trees).
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from dataset_io import PathLike, load_idx, load_image_directory, write_idx
from models import LabeledImageSet, Provenance
from utils.errors import ConsistencyError, FormatError, RangeError
from utils.helpers import numpy_rng
from utils.logging import get_logger

logger = get_logger()

# Expected photon-count scale per severity level; lower means stronger noise.
SEVERITY_INTENSITIES: dict[int, float] = {1: 60.0, 2: 25.0, 3: 12.0, 4: 5.0, 5: 3.0}
DEFAULT_INTENSITY: float = 25.0


class CorruptionKind(str, Enum):
    """Enumeration of supported corruption types."""
    SHOT_NOISE = "shot_noise"


class CorruptionSpec(BaseModel):
    """Parameters of one corruption pass."""
    kind: CorruptionKind = Field(default=CorruptionKind.SHOT_NOISE)
    intensity: float = Field(default=DEFAULT_INTENSITY, gt=0, description="Poisson scale lambda")
    seed: int = Field(default=0)

    @classmethod
    def from_severity(cls, level: int, seed: int = 0) -> "CorruptionSpec":
        if level not in SEVERITY_INTENSITIES:
            raise RangeError(f"severity must be one of {sorted(SEVERITY_INTENSITIES)}; got {level}")
        return cls(intensity=SEVERITY_INTENSITIES[level], seed=seed)


def shot_noise_array(images: np.ndarray, intensity: float, seed: int, *, clip: bool = True) -> np.ndarray:
    """
    Poisson shot noise: x -> Poisson(x * intensity) / intensity.

    Each image draws from its own stream derived from (seed, image index) so
    that any partition of the batch produces the same output.
    """
    if not intensity > 0:
        raise RangeError(f"shot-noise intensity must be > 0; got {intensity}")
    images = np.asarray(images, dtype=np.float64)
    out = np.empty_like(images)
    for index in range(images.shape[0]):
        rng = numpy_rng(seed, "shot_noise", index)
        out[index] = rng.poisson(np.clip(images[index], 0.0, 1.0) * intensity) / intensity
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out.astype(np.float32)


def apply_shot_noise(data: LabeledImageSet, spec: CorruptionSpec) -> LabeledImageSet:
    """
    Corrupt every image of ``data``; labels and provenance are unchanged.

    Raises:
        RangeError: If ``spec.intensity`` is not positive or the kind is unknown.
    """
    if spec.kind != CorruptionKind.SHOT_NOISE:
        raise RangeError(f"apply_shot_noise cannot apply {spec.kind!r}")
    corrupted = shot_noise_array(data.images, spec.intensity, spec.seed)
    logger.info(
        "Applied shot noise lambda=%s to %d images", spec.intensity, len(data), extra={"seed": spec.seed}
    )
    return LabeledImageSet(
        images=corrupted,
        labels=data.labels,
        num_classes=data.num_classes,
        provenance=data.provenance,
        name=f"{data.name}+shot_noise(lambda={spec.intensity:g})",
    )


def _load_npy_pair(images_path: Path, labels_path: Path, num_classes: int, name: str) -> LabeledImageSet:
    try:
        raw_images = np.load(images_path, allow_pickle=False)
        raw_labels = np.load(labels_path, allow_pickle=False).reshape(-1)
    except (OSError, ValueError) as e:
        raise FormatError(f"Cannot read .npy pair {images_path}, {labels_path}: {e}") from e
    if raw_images.ndim == 3:
        raw_images = raw_images[..., np.newaxis]
    if raw_images.ndim != 4:
        raise FormatError(f"{images_path}: expected (count, h, w[, c]) array, got {raw_images.shape}")
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise ConsistencyError(
            f"image/label count mismatch: {raw_images.shape[0]} images vs {raw_labels.shape[0]} labels"
        )
    images = raw_images.astype(np.float32)
    if raw_images.dtype == np.uint8 or images.max(initial=0.0) > 1.0:
        images = images / 255.0
    return LabeledImageSet.from_arrays(images, raw_labels.astype(np.int64), num_classes, Provenance.REAL, name)


def ingest_corrupted_set(
    images_path: PathLike,
    labels_path: PathLike | None = None,
    *,
    corruption: str = "shot_noise",
    num_classes: int = 10,
) -> LabeledImageSet:
    """
    Load an externally corrupted test set with REAL provenance.

    ``images_path`` may be an IDX file (with ``labels_path``), a ``.npy`` file
    (with a ``.npy`` ``labels_path``) or a class-directory tree.

    Raises:
        FormatError, ConsistencyError: As in :mod:`dataset_io`.
    """
    images_path = Path(images_path)
    name = f"{images_path.stem}[{corruption}]"
    if images_path.is_dir():
        data = load_image_directory(images_path, num_classes, provenance=Provenance.REAL, name=name)
    elif labels_path is None:
        raise FormatError(f"{images_path}: a labels file is required for non-directory inputs")
    elif images_path.suffix == ".npy":
        data = _load_npy_pair(images_path, Path(labels_path), num_classes, name)
    else:
        data = load_idx(images_path, labels_path, num_classes=num_classes, name=name)
    logger.info("Ingested corrupted set %s (%d images)", name, len(data))
    return data


def check_semantic_preservation(corrupted: LabeledImageSet, clean: LabeledImageSet) -> None:
    """Raise :class:`ConsistencyError` unless both sets carry identical labels."""
    if len(corrupted) != len(clean):
        raise ConsistencyError(
            f"{corrupted.name}: {len(corrupted)} samples but clean set {clean.name} has {len(clean)}"
        )
    mismatches = int(np.count_nonzero(corrupted.labels != clean.labels))
    if mismatches:
        raise ConsistencyError(
            f"{corrupted.name}: {mismatches} labels differ from clean set {clean.name}"
        )


def cache_corrupted_set(data: LabeledImageSet, directory: PathLike) -> tuple[Path, Path]:
    """Write a corrupted set back as an IDX pair."""
    directory = Path(directory)
    return write_idx(data, directory / "images-idx-ubyte", directory / "labels-idx1-ubyte")
