"""
Tests for feature statistics and the Fréchet distance.
"""

import numpy as np
import pytest

from classifier import ClassifierConfig, train_classifier
from conftest import make_set, make_striped_set
from fid import FeatureStats, FidMonitor, fid_between_sets, fit_stats, frechet_distance, trace_sqrt_product
from utils.errors import CapacityError, ConsistencyError, NumericalError


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------

def _stats(mean, covariance, count=100):
    return FeatureStats(mean=np.asarray(mean, dtype=float), covariance=np.asarray(covariance, dtype=float),
                        sample_count=count)


def _random_spd(rng, dim=8):
    a = rng.standard_normal((dim, dim))
    return a @ a.T + dim * np.eye(dim) * 0.1


def _denman_beavers_sqrt(matrix, iterations=60):
    """Slow reference square root for matrices with positive real spectrum."""
    y, z = matrix.copy(), np.eye(matrix.shape[0])
    for _ in range(iterations):
        y, z = 0.5 * (y + np.linalg.inv(z)), 0.5 * (z + np.linalg.inv(y))
    return y


# --------------------------------------------------------------------------
# fit_stats
# --------------------------------------------------------------------------

def test_fit_stats_constant_features():
    stats = fit_stats(np.full((5, 3), 2.0))
    assert np.allclose(stats.mean, 2.0)
    assert np.array_equal(stats.covariance, np.zeros((3, 3)))


def test_fit_stats_hand_arithmetic():
    stats = fit_stats(np.array([[0.0, 0.0], [2.0, 0.0]]))
    assert np.allclose(stats.mean, [1.0, 0.0])
    assert np.allclose(stats.covariance, [[2.0, 0.0], [0.0, 0.0]])
    assert stats.sample_count == 2


def test_fit_stats_monte_carlo():
    draws = np.random.default_rng(0).standard_normal((100_000, 4))
    stats = fit_stats(draws)
    assert np.abs(stats.mean).max() < 0.02
    assert np.abs(np.diag(stats.covariance) - 1.0).max() < 0.05
    assert np.allclose(stats.covariance, stats.covariance.T, atol=1e-8)


def test_fit_stats_needs_two_samples():
    with pytest.raises(CapacityError):
        fit_stats(np.zeros((1, 3)))


def test_fit_stats_shrinks_rank_deficient_covariance():
    stats = fit_stats(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    assert stats.covariance[2, 2] == pytest.approx(1e-6)


# --------------------------------------------------------------------------
# frechet_distance
# --------------------------------------------------------------------------

def test_identical_stats_give_zero():
    rng = np.random.default_rng(1)
    stats = fit_stats(rng.standard_normal((50, 8)))
    assert frechet_distance(stats, stats) == pytest.approx(0.0, abs=1e-6)


def test_mean_shift_only():
    a = _stats([0.0, 0.0], np.eye(2))
    b = _stats([1.0, 1.0], np.eye(2))
    assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-9)


def test_commuting_diagonal_covariances():
    a = _stats([0.0, 0.0], np.diag([1.0, 4.0]))
    b = _stats([0.0, 0.0], np.diag([9.0, 1.0]))
    scalar = sum((np.sqrt(x) - np.sqrt(y)) ** 2 for x, y in ((1.0, 9.0), (4.0, 1.0)))
    assert scalar == 5.0
    assert frechet_distance(a, b) == pytest.approx(5.0, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = _stats(rng.standard_normal(8), _random_spd(rng))
    b = _stats(rng.standard_normal(8), _random_spd(rng))
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-6)
    assert frechet_distance(a, b) >= 0.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_matches_denman_beavers_reference(seed):
    rng = np.random.default_rng(seed)
    sigma_a, sigma_b = _random_spd(rng), _random_spd(rng)
    reference = float(np.trace(_denman_beavers_sqrt(sigma_a @ sigma_b)))
    assert trace_sqrt_product(sigma_a, sigma_b) == pytest.approx(reference, rel=1e-5)


def test_dimension_mismatch():
    with pytest.raises(ConsistencyError):
        frechet_distance(_stats([0.0, 0.0], np.eye(2)), _stats([0.0, 0.0, 0.0], np.eye(3)))


def test_indefinite_covariance_is_a_numerical_error():
    a = _stats([0.0, 0.0], np.diag([1.0, -1.0]))
    b = _stats([0.0, 0.0], np.eye(2))
    with pytest.raises(NumericalError):
        frechet_distance(a, b)


# --------------------------------------------------------------------------
# Classifier-feature distances
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def feature_model():
    data = make_striped_set(per_class=20)
    return train_classifier(data, ClassifierConfig(learning_rate=1e-3, epochs=5, batch_size=20, seed=0))


def test_fid_of_set_with_itself(feature_model):
    data = make_striped_set(per_class=5, seed=3)
    assert fid_between_sets(feature_model, data, data) == pytest.approx(0.0, abs=1e-3)


def test_real_halves_are_closer_than_noise(feature_model):
    data = make_striped_set(per_class=50, seed=4)
    half_a = data.subset(np.arange(0, len(data), 2))
    half_b = data.subset(np.arange(1, len(data), 2))
    noise = make_set(per_class=50, quantized=False, seed=5)
    same = fid_between_sets(feature_model, half_a, half_b)
    different = fid_between_sets(feature_model, data, noise)
    assert different > 10 * same


def test_monitor_records_history(feature_model):
    reference = make_striped_set(per_class=30, seed=6)
    monitor = FidMonitor(feature_model, reference, sample_count=100, seed=0)
    assert monitor.reference_stats.sample_count == 100
    close = monitor.measure(make_striped_set(per_class=10, seed=7))
    far = monitor.measure(make_set(per_class=10, quantized=False, seed=8))
    assert monitor.history == [close, far]
    assert close < far
