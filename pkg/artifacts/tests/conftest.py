"""
Shared fixtures for the synthmix test suites.

All fixtures build tiny in-memory datasets so the suites run on CPU in
seconds; real-dataset acceptance checks live in test_acceptance.py.
"""

import os
import sys

import numpy as np
import pytest

# Add the project root directory to Python path to import the pipeline modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from models import LabeledImageSet, Provenance  # noqa: E402
from utils.helpers import configure_determinism  # noqa: E402


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------

def make_set(
    per_class=5,
    num_classes=10,
    shape=(28, 28, 1),
    seed=0,
    provenance=Provenance.REAL,
    name="tiny",
    quantized=True,
):
    """Random images with ``per_class`` samples of every class (labels interleaved)."""
    rng = np.random.default_rng(seed)
    count = per_class * num_classes
    if quantized:
        images = rng.integers(0, 256, size=(count, *shape)).astype(np.float32) / 255.0
    else:
        images = rng.random((count, *shape), dtype=np.float32)
    labels = np.tile(np.arange(num_classes), per_class)
    return LabeledImageSet.from_arrays(images, labels, num_classes, provenance, name)


def make_striped_set(per_class=10, num_classes=10, seed=0):
    """Class k shows a bright horizontal band at rows 2k..2k+2 over faint noise."""
    rng = np.random.default_rng(seed)
    count = per_class * num_classes
    labels = np.repeat(np.arange(num_classes), per_class)
    images = rng.random((count, 28, 28, 1), dtype=np.float32) * 0.1
    for i, k in enumerate(labels):
        images[i, 2 * k:2 * k + 3, :, 0] = 1.0
    return LabeledImageSet.from_arrays(images, labels, num_classes, Provenance.REAL, "striped")


# --------------------------------------------------------------------------
# Fixtures
# --------------------------------------------------------------------------

@pytest.fixture
def tiny_set():
    return make_set()


@pytest.fixture
def striped_set():
    return make_striped_set()


@pytest.fixture
def deterministic():
    configure_determinism(True)
    yield
    configure_determinism(False)


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    monkeypatch.delenv("SYNTHMIX_CACHE", raising=False)
    monkeypatch.chdir(tmp_path)
