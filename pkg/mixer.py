"""
Constant-size mixing of original and synthetic training sets.

A mixture of ratio a:b and total size N holds
``n_o = round_half_up(N * a / (a + b))`` original samples and ``N - n_o``
synthetic ones. With class balancing, per-class totals and per-class
original quotas are both fixed by largest-remainder apportionment with ties
broken by ascending class index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from dataset_io import subsample, subsample_per_class
from models import LabeledImageSet, Provenance, concatenate
from utils.errors import ConsistencyError, RangeError
from utils.helpers import derive_seed
from utils.logging import get_logger

logger = get_logger()

_RATIO_PATTERN = re.compile(r"^\s*(\d+)\s*:\s*(\d+)\s*$")


def parse_ratio(text: str) -> tuple[int, int]:
    """Parse ``"a:b"`` into ``(a, b)``."""
    match = _RATIO_PATTERN.match(text)
    if not match:
        raise ValueError(f"ratio must look like 'a:b' with non-negative integers; got {text!r}")
    a, b = int(match.group(1)), int(match.group(2))
    if a + b < 1:
        raise ValueError(f"ratio {text!r} must have a + b >= 1")
    return a, b


class MixtureSpec(BaseModel):
    """Declarative description of one hybrid training set."""
    ratio_original: int = Field(..., ge=0)
    ratio_synthetic: int = Field(..., ge=0)
    total_size: int = Field(..., gt=0)
    class_balanced: bool = Field(default=True)
    seed: int = Field(default=0)

    @model_validator(mode="after")
    def _check_ratio(self) -> "MixtureSpec":
        if self.ratio_original + self.ratio_synthetic < 1:
            raise ValueError("ratio_original + ratio_synthetic must be >= 1")
        return self

    @classmethod
    def from_ratio(cls, ratio: str, total_size: int, *, class_balanced: bool = True, seed: int = 0) -> "MixtureSpec":
        a, b = parse_ratio(ratio)
        return cls(ratio_original=a, ratio_synthetic=b, total_size=total_size, class_balanced=class_balanced, seed=seed)

    @property
    def ratio(self) -> str:
        return f"{self.ratio_original}:{self.ratio_synthetic}"


# ============================================================================
# APPORTIONMENT
# ============================================================================

def split_global(total: int, a: int, b: int) -> tuple[int, int]:
    """Original/synthetic counts with round-half-up on the original share."""
    n_original = (2 * total * a + (a + b)) // (2 * (a + b))
    return n_original, total - n_original


def largest_remainder(total: int, weights: Sequence[int]) -> np.ndarray:
    """
    Apportion ``total`` integer slots proportionally to ``weights``.

    Leftover slots go to the largest fractional remainders; ties go to the
    lowest index.
    """
    weights = [int(w) for w in weights]
    weight_sum = sum(weights)
    if weight_sum == 0:
        if total:
            raise RangeError("cannot apportion a positive total over zero weights")
        return np.zeros(len(weights), dtype=np.int64)
    quotas = [Fraction(total * w, weight_sum) for w in weights]
    floors = [q.numerator // q.denominator for q in quotas]
    leftover = total - sum(floors)
    order = sorted(range(len(weights)), key=lambda k: (-(quotas[k] - floors[k]), k))
    for k in order[:leftover]:
        floors[k] += 1
    return np.asarray(floors, dtype=np.int64)


def class_quotas(spec: MixtureSpec, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class (original, synthetic) counts for a class-balanced mixture."""
    if spec.total_size < num_classes:
        raise RangeError(
            f"class-balanced mixtures need total_size >= num_classes ({spec.total_size} < {num_classes})"
        )
    n_original, _ = split_global(spec.total_size, spec.ratio_original, spec.ratio_synthetic)
    per_class_total = largest_remainder(spec.total_size, [1] * num_classes)
    original = largest_remainder(n_original, per_class_total)
    return original, per_class_total - original


# ============================================================================
# COMPOSITION
# ============================================================================

def _check_compatible(original: LabeledImageSet, synthetic: LabeledImageSet) -> None:
    if original.num_classes != synthetic.num_classes:
        raise ConsistencyError(
            f"num_classes mismatch: {original.name}={original.num_classes}, "
            f"{synthetic.name}={synthetic.num_classes}"
        )
    if original.image_shape != synthetic.image_shape:
        raise ConsistencyError(
            f"image shape mismatch: {original.name}={original.image_shape}, "
            f"{synthetic.name}={synthetic.image_shape}"
        )


def compose(original: LabeledImageSet, synthetic: LabeledImageSet, spec: MixtureSpec) -> LabeledImageSet:
    """
    Build a mixture of exactly ``spec.total_size`` samples.

    Original samples come first, then synthetic ones; each part keeps its
    source order. Provenance flags are carried over from the sources.

    Raises:
        CapacityError: If either source cannot fill its quota (names class and shortfall).
        ConsistencyError: If the sources disagree on label space or image shape.
        RangeError: If a class-balanced mixture has total_size < num_classes.
    """
    _check_compatible(original, synthetic)
    name = f"mix[{spec.ratio},N={spec.total_size}]"
    original_seed = derive_seed(spec.seed, "mix", "original")
    synthetic_seed = derive_seed(spec.seed, "mix", "synthetic")

    if spec.class_balanced:
        original_quota, synthetic_quota = class_quotas(spec, original.num_classes)
        parts = [
            subsample_per_class(original, original_quota, original_seed),
            subsample_per_class(synthetic, synthetic_quota, synthetic_seed),
        ]
    else:
        n_original, n_synthetic = split_global(spec.total_size, spec.ratio_original, spec.ratio_synthetic)
        parts = [
            subsample(original, n_original, original_seed),
            subsample(synthetic, n_synthetic, synthetic_seed),
        ]

    mixed = concatenate(parts, name=name)
    logger.debug(
        "Composed %s: %d original + %d synthetic", name, len(parts[0]), len(parts[1]),
        extra={"seed": spec.seed},
    )
    return mixed


# ============================================================================
# AUDIT
# ============================================================================

@dataclass(frozen=True)
class MixtureAudit:
    """Counts by class x provenance (columns: REAL, SYNTHETIC)."""
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_original(self) -> int:
        return int(self.counts[:, Provenance.REAL].sum())

    @property
    def n_synthetic(self) -> int:
        return int(self.counts[:, Provenance.SYNTHETIC].sum())

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "n_original": self.n_original,
            "n_synthetic": self.n_synthetic,
            "per_class": {
                str(k): {"REAL": int(row[Provenance.REAL]), "SYNTHETIC": int(row[Provenance.SYNTHETIC])}
                for k, row in enumerate(self.counts)
            },
        }


def audit(mixed: LabeledImageSet) -> MixtureAudit:
    counts = np.zeros((mixed.num_classes, len(Provenance)), dtype=np.int64)
    np.add.at(counts, (mixed.labels, mixed.provenance.astype(np.int64)), 1)
    return MixtureAudit(counts=counts)
