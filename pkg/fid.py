"""
Feature Fréchet distance between two image sets.

Features come from the penultimate layer of a classifier trained on real
data (128 dimensions), not from an Inception network; outputs therefore call
the metric "feature Fréchet distance".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from classifier import TrainedClassifier, extract_features
from dataset_io import subsample
from models import LabeledImageSet
from utils.errors import CapacityError, ConsistencyError, NumericalError
from utils.logging import get_logger

logger = get_logger()

SHRINKAGE_EPSILON = 1e-6
PSD_TOLERANCE = 1e-6
IMAGINARY_TOLERANCE = 1e-3
SYMMETRY_TOLERANCE = 1e-8


@dataclass(frozen=True)
class FeatureStats:
    """Gaussian fit of a feature distribution."""
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        covariance = np.asarray(self.covariance, dtype=np.float64)
        dim = mean.shape[0]
        if covariance.shape != (dim, dim):
            raise ConsistencyError(f"covariance shape {covariance.shape} does not match mean dimension {dim}")
        if self.sample_count < 2:
            raise CapacityError(f"feature statistics need at least 2 samples; got {self.sample_count}")
        if not np.allclose(covariance, covariance.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
            raise NumericalError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)

    @property
    def feature_dim(self) -> int:
        return int(self.mean.shape[0])


def fit_stats(features: np.ndarray) -> FeatureStats:
    """
    Sample mean and unbiased covariance of a (count, feature_dim) array.

    When count < feature_dim the covariance is shrunk by ``SHRINKAGE_EPSILON * I``.

    Raises:
        CapacityError: If fewer than 2 samples are given.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        features = features.reshape(features.shape[0], -1)
    count, dim = features.shape
    if count < 2:
        raise CapacityError(f"feature statistics need at least 2 samples; got {count}")
    mean = features.mean(axis=0)
    centered = features - mean
    covariance = centered.T @ centered / (count - 1)
    covariance = (covariance + covariance.T) / 2.0
    if count < dim:
        covariance = covariance + SHRINKAGE_EPSILON * np.eye(dim)
    return FeatureStats(mean=mean, covariance=covariance, sample_count=count)


def _clamped_eigh(matrix: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix with small negative eigenvalues clamped to 0."""
    eigenvalues, eigenvectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    scale = max(float(np.abs(eigenvalues).max(initial=0.0)), np.finfo(np.float64).tiny)
    worst = float(eigenvalues.min(initial=0.0))
    if worst < -IMAGINARY_TOLERANCE * scale:
        raise NumericalError(
            f"{what} has eigenvalue {worst:.3e} (relative {worst / scale:.3e}); square root would be complex"
        )
    if worst < -PSD_TOLERANCE * scale:
        logger.warning("Clamping negative eigenvalue %.3e of %s", worst, what)
    return np.clip(eigenvalues, 0.0, None), eigenvectors


def trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """Tr((Σa Σb)^{1/2}) via the symmetric form Σa^{1/2} Σb Σa^{1/2}."""
    values_a, vectors_a = _clamped_eigh(sigma_a, "first covariance")
    root_a = (vectors_a * np.sqrt(values_a)) @ vectors_a.T
    product = root_a @ sigma_b @ root_a
    values, _ = _clamped_eigh(product, "covariance product")
    return float(np.sqrt(values).sum())


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """
    ‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2}), clamped to be non-negative.

    Raises:
        ConsistencyError: If the feature dimensions differ.
        NumericalError: If the matrix square root would carry a significant imaginary part.
    """
    if a.feature_dim != b.feature_dim:
        raise ConsistencyError(f"feature dimension mismatch: {a.feature_dim} vs {b.feature_dim}")
    diff = a.mean - b.mean
    distance = (
        float(diff @ diff)
        + float(np.trace(a.covariance))
        + float(np.trace(b.covariance))
        - 2.0 * trace_sqrt_product(a.covariance, b.covariance)
    )
    return max(distance, 0.0)


def fid_between_sets(model: TrainedClassifier, a: LabeledImageSet, b: LabeledImageSet) -> float:
    return frechet_distance(
        fit_stats(extract_features(model, a)),
        fit_stats(extract_features(model, b)),
    )


class FidMonitor:
    """
    Measures generated sets against cached statistics of a reference set.

    Args:
        model: Classifier trained on real data of the same domain.
        reference: Real images; at most ``sample_count`` of them are used.
        sample_count: Size of the reference subsample.
        seed: Seed of the reference subsample.
    """

    def __init__(self, model: TrainedClassifier, reference: LabeledImageSet, sample_count: int = 1000, seed: int = 0):
        if len(reference) > sample_count:
            reference = subsample(reference, sample_count, seed, name=f"{reference.name}[fid-reference]")
        self.model = model
        self.sample_count = sample_count
        self.reference_stats = fit_stats(extract_features(model, reference))
        self.history: list[float] = []

    def measure(self, generated: LabeledImageSet) -> float:
        distance = frechet_distance(self.reference_stats, fit_stats(extract_features(self.model, generated)))
        self.history.append(distance)
        return distance
