"""
Dataset readers and writers for the synthmix pipeline.

Supported on-disk formats:
- IDX (ubyte) image/label pairs as distributed for MNIST and Fashion-MNIST,
  optionally gzip-compressed.
- CIFAR-10 binary batches (3073-byte records: 1 label byte + 3x32x32 pixels).
- Class-directory trees of lossless images (``<root>/<class index>/*.png``),
  used for externally generated synthetic sets.
- ``.npz`` cache files written by :func:`save_npz`.

Pixels leave this module as float32 in [0, 1]; bytes in 0-255 never do.

Usage:
    from dataset_io import load_idx, subsample_per_class

    train = load_idx("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
    small = subsample_per_class(train, [100] * 10, seed=0)
"""

from __future__ import annotations

import gzip
import hashlib
import io
import struct
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from models import LabeledImageSet, Provenance
from utils.artifacts import save_artifact
from utils.errors import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    TRUNCATED_FILE,
    CapacityError,
    ConsistencyError,
    FormatError,
    RangeError,
)
from utils.helpers import numpy_rng
from utils.logging import get_logger

logger = get_logger()

PathLike = Union[str, Path]

# ============================================================================
# CONSTANTS
# ============================================================================

IDX_IMAGES_MAGIC_3D: int = 0x00000803
IDX_IMAGES_MAGIC_4D: int = 0x00000804
IDX_LABELS_MAGIC_1D: int = 0x00000801

CIFAR_RECORD_BYTES: int = 1 + 3 * 32 * 32
CIFAR_TRAIN_BATCHES: tuple[str, ...] = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_BATCH: str = "test_batch.bin"

LOSSLESS_SUFFIXES = frozenset({".png", ".bmp", ".tif", ".tiff"})


# ============================================================================
# IDX
# ============================================================================

def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"Missing file: {path}")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _parse_idx(payload: bytes, path: PathLike, expected_magic: Sequence[int], what: str) -> np.ndarray:
    if len(payload) < 4:
        raise FormatError(f"{path}: {TRUNCATED_FILE} (no header)")
    (magic,) = struct.unpack(">I", payload[:4])
    if magic not in expected_magic:
        message = IDX_IMAGES_MAGIC if what == "images" else IDX_LABELS_MAGIC
        raise FormatError(f"{path}: {message} (got 0x{magic:08X})")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(payload) < header_len:
        raise FormatError(f"{path}: {TRUNCATED_FILE} (incomplete dimension header)")
    dims = struct.unpack(f">{ndim}I", payload[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64))
    body = payload[header_len:]
    if len(body) < expected:
        raise FormatError(f"{path}: {TRUNCATED_FILE} ({len(body)} of {expected} data bytes)")
    if len(body) > expected:
        raise FormatError(f"{path}: {len(body) - expected} unexpected trailing bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(
    images_path: PathLike,
    labels_path: PathLike,
    *,
    num_classes: int = 10,
    name: str | None = None,
) -> LabeledImageSet:
    """
    Parse an IDX image/label file pair into a REAL-provenance set.

    Args:
        images_path: IDX images file (magic 0x00000803, or 0x00000804 for color).
        labels_path: IDX labels file (magic 0x00000801).
        num_classes: Size of the label space.
        name: Set name; defaults to the images file name.

    Returns:
        LabeledImageSet with pixels scaled to [0, 1] by division by 255.

    Raises:
        FormatError: On magic mismatch, truncation, trailing bytes or labels out of range.
        ConsistencyError: If the image and label counts disagree.
    """
    raw_images = _parse_idx(
        _read_bytes(images_path), images_path, (IDX_IMAGES_MAGIC_3D, IDX_IMAGES_MAGIC_4D), "images"
    )
    raw_labels = _parse_idx(_read_bytes(labels_path), labels_path, (IDX_LABELS_MAGIC_1D,), "labels")

    if raw_images.shape[0] != raw_labels.shape[0]:
        raise ConsistencyError(
            f"image/label count mismatch: {raw_images.shape[0]} images vs {raw_labels.shape[0]} labels"
        )
    if raw_labels.size and int(raw_labels.max()) >= num_classes:
        raise FormatError(f"{labels_path}: label {int(raw_labels.max())} outside [0, {num_classes})")

    if raw_images.ndim == 3:
        raw_images = raw_images[..., np.newaxis]
    images = raw_images.astype(np.float32) / 255.0
    logger.debug("Loaded %d images from %s", images.shape[0], images_path)
    return LabeledImageSet.from_arrays(
        images, raw_labels.astype(np.int64), num_classes, Provenance.REAL,
        name or Path(images_path).name,
    )


def _to_bytes(images: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(images, dtype=np.float64) * 255.0).astype(np.uint8)


def write_idx(data: LabeledImageSet, images_path: PathLike, labels_path: PathLike) -> tuple[Path, Path]:
    """Companion writer for :func:`load_idx`; pixels are quantized with round(x * 255)."""
    pixels = _to_bytes(data.images)
    if data.image_shape[2] == 1:
        pixels = pixels[..., 0]
        magic = IDX_IMAGES_MAGIC_3D
    else:
        magic = IDX_IMAGES_MAGIC_4D
    image_header = struct.pack(">I", magic) + struct.pack(f">{pixels.ndim}I", *pixels.shape)
    label_header = struct.pack(">II", IDX_LABELS_MAGIC_1D, len(data))
    written_images = save_artifact(image_header + pixels.tobytes(order="C"), images_path)
    written_labels = save_artifact(label_header + data.labels.astype(np.uint8).tobytes(), labels_path)
    return written_images, written_labels


# ============================================================================
# CIFAR-10
# ============================================================================

def _parse_cifar_batch(path: Path) -> tuple[np.ndarray, np.ndarray]:
    payload = _read_bytes(path)
    if len(payload) % CIFAR_RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: size {len(payload)} is not a multiple of {CIFAR_RECORD_BYTES}-byte records"
        )
    records = np.frombuffer(payload, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        raise FormatError(f"{path}: label {int(labels.max())} outside [0, 10)")
    # stored channel-first (3, 32, 32); convert to height x width x channel
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return pixels, labels


def load_cifar10(directory: PathLike) -> tuple[LabeledImageSet, LabeledImageSet]:
    """
    Load the CIFAR-10 binary distribution.

    Accepts either the ``cifar-10-batches-bin`` directory itself or its parent.

    Raises:
        FormatError: If a batch file is missing or a file size is not a whole
            number of 3073-byte records.
    """
    root = Path(directory)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"

    def _load(files: Sequence[str], name: str) -> LabeledImageSet:
        parts = [_parse_cifar_batch(root / f) for f in files]
        pixels = np.concatenate([p for p, _ in parts], axis=0)
        labels = np.concatenate([lbl for _, lbl in parts], axis=0)
        return LabeledImageSet.from_arrays(
            pixels.astype(np.float32) / 255.0, labels, 10, Provenance.REAL, name
        )

    train = _load(CIFAR_TRAIN_BATCHES, "cifar10-train")
    test = _load((CIFAR_TEST_BATCH,), "cifar10-test")
    logger.info("Loaded CIFAR-10: %d train / %d test", len(train), len(test), extra={"dataset": "cifar10"})
    return train, test


# ============================================================================
# CLASS-DIRECTORY TREES
# ============================================================================

def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode in ("1", "L", "LA", "I", "I;16"):
            array = np.asarray(img.convert("L"), dtype=np.uint8)[..., np.newaxis]
        else:
            array = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return array


def load_image_directory(
    root: PathLike,
    num_classes: int,
    *,
    provenance: Provenance = Provenance.SYNTHETIC,
    name: str | None = None,
) -> LabeledImageSet:
    """
    Ingest ``<root>/<class index>/<image>`` trees of lossless images.

    Labels come from the subdirectory names; files are read in sorted order.

    Raises:
        FormatError: If a subdirectory name is not an integer in [0, num_classes),
            a file is not a lossless image, or the tree holds no images.
        ConsistencyError: If image dimensions differ.
    """
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"Not a directory: {root}")

    images: list[np.ndarray] = []
    labels: list[int] = []
    shape: tuple[int, ...] | None = None
    class_dirs = sorted(
        (p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")),
        key=lambda p: (not p.name.isdigit(), int(p.name) if p.name.isdigit() else 0, p.name),
    )
    for class_dir in class_dirs:
        try:
            label = int(class_dir.name)
        except ValueError as e:
            raise FormatError(f"Class directory name {class_dir.name!r} is not an integer") from e
        if not 0 <= label < num_classes:
            raise FormatError(f"Class directory {class_dir.name!r} outside [0, {num_classes})")
        for file in sorted(class_dir.iterdir()):
            if file.name.startswith(".") or not file.is_file():
                continue
            if file.suffix.lower() not in LOSSLESS_SUFFIXES:
                raise FormatError(f"{file}: only lossless images ({', '.join(sorted(LOSSLESS_SUFFIXES))}) are accepted")
            array = _read_image(file)
            if shape is None:
                shape = array.shape
            elif array.shape != shape:
                raise ConsistencyError(f"{file}: image shape {array.shape} differs from {shape}")
            images.append(array)
            labels.append(label)

    if not images:
        raise FormatError(f"No images found under {root}")
    stacked = np.stack(images).astype(np.float32) / 255.0
    logger.debug("Ingested %d images from %s", len(images), root)
    return LabeledImageSet.from_arrays(
        stacked, np.asarray(labels, dtype=np.int64), num_classes, provenance, name or root.name
    )


def write_image_directory(data: LabeledImageSet, root: PathLike) -> Path:
    """Companion writer for :func:`load_image_directory` (PNG, one file per sample)."""
    root = Path(root)
    pixels = _to_bytes(data.images)
    for index, (image, label) in enumerate(zip(pixels, data.labels)):
        target = root / str(int(label)) / f"{index:06d}.png"
        target.parent.mkdir(parents=True, exist_ok=True)
        frame = Image.fromarray(image[..., 0] if image.shape[2] == 1 else image)
        buffer = io.BytesIO()
        frame.save(buffer, format="PNG")
        save_artifact(buffer, target)
    return root


# ============================================================================
# NPZ CACHE
# ============================================================================

def save_npz(data: LabeledImageSet, path: PathLike) -> Path:
    buffer = io.BytesIO()
    np.savez(
        buffer,
        images=data.images,
        labels=data.labels,
        provenance=data.provenance,
        num_classes=np.asarray(data.num_classes, dtype=np.int64),
        name=np.asarray(data.name),
    )
    return save_artifact(buffer, path)


def load_npz(path: PathLike) -> LabeledImageSet:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"Missing file: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            return LabeledImageSet(
                images=archive["images"],
                labels=archive["labels"],
                num_classes=int(archive["num_classes"]),
                provenance=archive["provenance"],
                name=str(archive["name"]),
            )
    except (KeyError, ValueError, OSError) as e:
        raise FormatError(f"{path}: not a synthmix image-set archive ({e})") from e


# ============================================================================
# SUBSAMPLING
# ============================================================================

def _canonical_order(images: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Order ``indices`` by image content digest, ties by index."""
    if indices.size == 0:
        return indices
    digests = np.fromiter(
        (int.from_bytes(hashlib.blake2b(images[i].tobytes(), digest_size=8).digest(), "big") for i in indices),
        dtype=np.uint64,
        count=indices.size,
    )
    return indices[np.lexsort((indices, digests))]


def _select(images: np.ndarray, candidates: np.ndarray, quota: int, seed: int, stream: int | str) -> np.ndarray:
    canonical = _canonical_order(images, candidates)
    permutation = numpy_rng(seed, "subsample", stream).permutation(canonical.size)
    return canonical[permutation[:quota]]


def subsample_per_class(
    data: LabeledImageSet,
    per_class: Sequence[int],
    seed: int,
    *,
    name: str | None = None,
) -> LabeledImageSet:
    """
    Draw ``per_class[k]`` samples of each class k without replacement.

    Selection is a seeded shuffle of the class members in canonical (content)
    order, so it is a pure function of (set content, per_class, seed). The
    selected samples keep their original relative order.

    Raises:
        RangeError: If ``per_class`` has the wrong length or a negative entry.
        CapacityError: If a class holds fewer samples than requested.
    """
    quotas = np.asarray(per_class, dtype=np.int64)
    if quotas.shape != (data.num_classes,):
        raise RangeError(f"per_class must have {data.num_classes} entries; got {quotas.shape[0] if quotas.ndim else 0}")
    if (quotas < 0).any():
        raise RangeError("per_class entries must be non-negative")
    available = data.class_counts()
    for k in range(data.num_classes):
        if quotas[k] > available[k]:
            raise CapacityError(
                f"{data.name}: class {k} needs {int(quotas[k])} samples but only {int(available[k])} "
                f"are available (shortfall {int(quotas[k] - available[k])})",
                class_index=k,
                shortfall=int(quotas[k] - available[k]),
            )

    chosen = [
        _select(data.images, np.flatnonzero(data.labels == k), int(quotas[k]), seed, k)
        for k in range(data.num_classes)
        if quotas[k] > 0
    ]
    selected = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    return data.subset(selected, name=name)


def subsample(data: LabeledImageSet, count: int, seed: int, *, name: str | None = None) -> LabeledImageSet:
    """Unstratified variant of :func:`subsample_per_class`."""
    if count < 0:
        raise RangeError("count must be non-negative")
    if count > len(data):
        raise CapacityError(
            f"{data.name}: needs {count} samples but only {len(data)} are available "
            f"(shortfall {count - len(data)})",
            shortfall=count - len(data),
        )
    if count == len(data):
        return data.subset(np.arange(len(data)), name=name)
    selected = np.sort(_select(data.images, np.arange(len(data)), count, seed, "all"))
    return data.subset(selected, name=name)
