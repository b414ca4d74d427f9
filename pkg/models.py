"""
Core data types for the synthmix pipeline.

This module defines the labeled image container passed between every stage
(loading, generation, corruption, mixing, training, evaluation) together
with the provenance flags and per-dataset shape contracts.

Pixels are float32 in [0, 1] everywhere past the I/O boundary; byte values
only exist inside the readers and writers of ``dataset_io``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np

from utils.errors import ConsistencyError, RangeError, ShapeError


class Provenance(IntEnum):
    """Per-sample origin flag carried through mixing."""
    REAL = 0
    SYNTHETIC = 1


class DatasetName(str, Enum):
    """Enumeration of the benchmark datasets."""
    MNIST = "mnist"
    FASHION_MNIST = "fashion_mnist"
    CIFAR10 = "cifar10"

    @classmethod
    def is_valid(cls, value: str) -> bool:
        """Check if a dataset value is valid."""
        return value in cls._value2member_map_


SHAPE_CONTRACTS: dict[DatasetName, tuple[int, int, int]] = {
    DatasetName.MNIST: (28, 28, 1),
    DatasetName.FASHION_MNIST: (28, 28, 1),
    DatasetName.CIFAR10: (32, 32, 3),
}


def _owned(array: np.ndarray, source: object) -> np.ndarray:
    """Return a read-only array that shares no memory with a caller-owned ``source``."""
    if isinstance(source, np.ndarray) and source.flags.writeable and np.shares_memory(array, source):
        array = array.copy()
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LabeledImageSet:
    """
    Immutable images + labels + provenance bundle.

    Attributes:
        images: float32 array (count, height, width, channels), values in [0, 1].
        labels: int64 array (count,), values in [0, num_classes).
        num_classes: Size of the label space.
        provenance: uint8 array (count,) of :class:`Provenance` values.
        name: Identifier used in logs, manifests and reports.
    """
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: np.ndarray
    name: str = field(default="unnamed")

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        provenance = np.asarray(self.provenance, dtype=np.uint8).reshape(-1)

        if images.ndim != 4:
            raise ShapeError(f"images must be 4-D (count, h, w, c); got shape {images.shape}")
        if self.num_classes < 1:
            raise RangeError(f"num_classes must be positive; got {self.num_classes}")
        count = images.shape[0]
        if labels.shape[0] != count or provenance.shape[0] != count:
            raise ConsistencyError(
                f"length mismatch: images={count} labels={labels.shape[0]} "
                f"provenance={provenance.shape[0]}"
            )
        if count:
            if labels.min() < 0 or labels.max() >= self.num_classes:
                raise RangeError(f"labels must lie in [0, {self.num_classes})")
            if not np.isfinite(images).all():
                raise RangeError("images contain non-finite values")
            if images.min() < 0.0 or images.max() > 1.0:
                raise RangeError("pixel values must lie in [0, 1]")
            if not np.isin(provenance, (Provenance.REAL, Provenance.SYNTHETIC)).all():
                raise RangeError("provenance flags must be REAL or SYNTHETIC")

        # frozen dataclass: bypass __setattr__ to store normalized, read-only arrays
        object.__setattr__(self, "images", _owned(images, self.images))
        object.__setattr__(self, "labels", _owned(labels, self.labels))
        object.__setattr__(self, "provenance", _owned(provenance, self.provenance))

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        images: np.ndarray,
        labels: np.ndarray,
        num_classes: int,
        provenance: Provenance,
        name: str,
    ) -> "LabeledImageSet":
        """Build a set whose samples all share one provenance flag."""
        labels = np.asarray(labels)
        return cls(
            images=images,
            labels=labels,
            num_classes=num_classes,
            provenance=np.full(labels.shape[0], int(provenance), dtype=np.uint8),
            name=name,
        )

    @classmethod
    def empty(cls, image_shape: Sequence[int], num_classes: int, name: str = "empty") -> "LabeledImageSet":
        return cls(
            images=np.zeros((0, *image_shape), dtype=np.float32),
            labels=np.zeros(0, dtype=np.int64),
            num_classes=num_classes,
            provenance=np.zeros(0, dtype=np.uint8),
            name=name,
        )

    # ------------------------------------------------------------------
    # Accessors
    # ------------------------------------------------------------------

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def count(self) -> int:
        return len(self)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.images.shape[1:])  # type: ignore[return-value]

    def class_counts(self) -> np.ndarray:
        """Histogram of labels over the full label space."""
        return np.bincount(self.labels, minlength=self.num_classes).astype(np.int64)

    def provenance_counts(self) -> dict[str, int]:
        return {
            p.name: int(np.count_nonzero(self.provenance == p)) for p in Provenance
        }

    def subset(self, indices: np.ndarray, name: str | None = None) -> "LabeledImageSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImageSet(
            images=self.images[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
            provenance=self.provenance[indices],
            name=name or self.name,
        )

    def renamed(self, name: str) -> "LabeledImageSet":
        return LabeledImageSet(self.images, self.labels, self.num_classes, self.provenance, name)

    def __repr__(self) -> str:
        """String representation for debugging and logging."""
        return (
            f"<LabeledImageSet(name={self.name!r}, count={len(self)}, "
            f"shape={self.image_shape}, num_classes={self.num_classes})>"
        )


def concatenate(sets: Iterable[LabeledImageSet], name: str) -> LabeledImageSet:
    """Stack sets sharing label space and image shape, keeping provenance."""
    sets = list(sets)
    if not sets:
        raise ConsistencyError("concatenate needs at least one set")
    first = sets[0]
    for other in sets[1:]:
        if other.num_classes != first.num_classes:
            raise ConsistencyError(
                f"num_classes mismatch: {first.name}={first.num_classes} {other.name}={other.num_classes}"
            )
        if other.image_shape != first.image_shape:
            raise ConsistencyError(
                f"image shape mismatch: {first.name}={first.image_shape} {other.name}={other.image_shape}"
            )
    return LabeledImageSet(
        images=np.concatenate([s.images for s in sets], axis=0),
        labels=np.concatenate([s.labels for s in sets], axis=0),
        num_classes=first.num_classes,
        provenance=np.concatenate([s.provenance for s in sets], axis=0),
        name=name,
    )


def check_shape_contract(data: LabeledImageSet, dataset: DatasetName | str) -> None:
    """Raise :class:`ShapeError` unless ``data`` matches the dataset's image shape."""
    expected = SHAPE_CONTRACTS[DatasetName(dataset)]
    if data.image_shape != expected:
        raise ShapeError(
            f"{data.name}: expected images of shape {expected} for {DatasetName(dataset).value}, "
            f"got {data.image_shape}"
        )
