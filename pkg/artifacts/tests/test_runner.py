"""
Tests for experiment configs and grid execution on a tiny IDX dataset.
"""

import json
from pathlib import Path

import pytest

import runner
from conftest import make_set
from dataset_io import load_npz, write_idx
from models import Provenance
from results_store import RESULTS_FILE_NAME, STATUS_ERROR, STATUS_OK, load_results
from runner import (
    MANIFEST_FILE_NAME,
    GridCell,
    cell_key,
    compose_training_set,
    load_experiment_config,
    run_grid,
    validate_experiment_config,
)
from utils.errors import ValidationError


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------

def _write_tiny_mnist(root):
    train = make_set(per_class=10, seed=0, name="train")
    test = make_set(per_class=3, seed=1, name="test")
    write_idx(train, root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
    write_idx(test, root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte")
    return {
        "train_images": str(root / "train-images-idx3-ubyte"),
        "train_labels": str(root / "train-labels-idx1-ubyte"),
        "test_images": str(root / "t10k-images-idx3-ubyte"),
        "test_labels": str(root / "t10k-labels-idx1-ubyte"),
    }


def _raw_config(tmp_path, cells, **extra):
    raw = {
        "dataset": "mnist",
        "data": _write_tiny_mnist(tmp_path),
        "gan": {
            "train": {"epochs": 1, "base_channels": 4, "batch_size": 20, "latent_dim": 8},
            "monitor": False,
        },
        "classifier": {"epochs": 1, "batch_size": 20},
        "cells": cells,
        "seeds": [0],
        "total_size": 40,
        "workers": 1,
        "output_dir": str(tmp_path / "out"),
    }
    raw.update(extra)
    return raw


GRID = [
    {"train": "original", "test": "original"},
    {"train": "1:1", "test": "synthetic"},
    {"train": "synthetic", "test": "corrupted"},
]


# --------------------------------------------------------------------------
# Config validation
# --------------------------------------------------------------------------

def test_grid_cell_normalizes_ratio():
    assert GridCell(train=" 5 : 1 ", test="original").train == "5:1"
    assert GridCell(train="Original", test="corrupted").ratio == (1, 0)
    assert GridCell(train="synthetic", test="synthetic").is_pure
    with pytest.raises(ValueError):
        GridCell(train="half", test="original")


def test_recommended_classifier_settings_fill_gaps(tmp_path):
    config = validate_experiment_config(_raw_config(tmp_path, GRID))
    assert config.classifier.architecture.value == "simple_cnn"
    assert config.classifier.learning_rate == 1e-4
    assert config.classifier.epochs == 1


def test_cifar_cannot_train_a_gan():
    raw = {
        "dataset": "cifar10",
        "data": {"cifar_dir": "cifar"},
        "gan": {"train": {"epochs": 1}, "synthetic_train_dir": "synthetic"},
    }
    with pytest.raises(ValidationError):
        validate_experiment_config(raw)


def test_cifar_needs_external_synthetic_data():
    with pytest.raises(ValidationError):
        validate_experiment_config({"dataset": "cifar10", "data": {"cifar_dir": "cifar"}})


def test_cifar_defaults_to_deep_cnn():
    raw = {"dataset": "cifar10", "data": {"cifar_dir": "cifar"}, "gan": {"synthetic_train_dir": "synthetic"}}
    config = validate_experiment_config(raw)
    assert config.classifier.architecture.value == "deep_cnn"
    assert config.classifier.epochs == 50


def test_idx_paths_are_required():
    with pytest.raises(ValidationError):
        validate_experiment_config({"dataset": "mnist", "data": {}})


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ValidationError):
        validate_experiment_config(_raw_config(tmp_path, GRID, epochs=3))


def test_empty_seed_list_is_rejected(tmp_path):
    with pytest.raises(ValidationError):
        validate_experiment_config(_raw_config(tmp_path, GRID, seeds=[]))


def test_toml_paths_resolve_relative_to_file(tmp_path):
    (tmp_path / "configs").mkdir()
    path = tmp_path / "configs" / "tiny.toml"
    path.write_text(
        'dataset = "fashion_mnist"\n'
        'output_dir = "../out"\n'
        "[data]\n"
        'train_images = "../data/a"\n'
        'train_labels = "../data/b"\n'
        'test_images = "../data/c"\n'
        'test_labels = "../data/d"\n'
        "[[cells]]\n"
        'train = "5:1"\n'
        'test = "original"\n'
    )
    config = load_experiment_config(path, {"seeds": [4, 5], "workers": None})
    assert config.data.train_images == (tmp_path / "data" / "a").resolve()
    assert config.output_dir == (tmp_path / "out").resolve()
    assert config.seeds == [4, 5]
    assert config.cells[0].test == runner.TestSetKind.ORIGINAL


def test_unreadable_config(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("dataset = [")
    with pytest.raises(ValidationError):
        load_experiment_config(path)


def test_cell_key_tracks_inputs(tmp_path):
    config = validate_experiment_config(_raw_config(tmp_path, GRID))
    cell = config.cells[0]
    assert cell_key(config, cell, 0, 40) == cell_key(config, cell, 0, 40)
    assert cell_key(config, cell, 0, 40) != cell_key(config, cell, 1, 40)
    assert cell_key(config, cell, 0, 40) != cell_key(config, config.cells[1], 0, 40)
    assert cell_key(config, cell, 0, 40, {"train": "a", "original": "b"}) != cell_key(
        config, cell, 0, 40, {"train": "c", "original": "b"}
    )
    assert cell_key(config, cell, 0, 40, {"train": "a", "original": "b"}) != cell_key(
        config, cell, 0, 40, {"train": "a", "original": "d"}
    )


def test_compose_training_set_pure_and_ratio():
    original = make_set(per_class=10)
    synthetic = make_set(per_class=10, seed=1, provenance=Provenance.SYNTHETIC)
    pure = compose_training_set(original, synthetic, GridCell(train="synthetic", test="original"), 37, True, 0)
    assert len(pure) == 37
    assert set(pure.provenance.tolist()) == {Provenance.SYNTHETIC}
    mixed = compose_training_set(original, synthetic, GridCell(train="3:1", test="original"), 40, True, 0)
    assert mixed.provenance_counts() == {"REAL": 30, "SYNTHETIC": 10}


# --------------------------------------------------------------------------
# Grid execution
# --------------------------------------------------------------------------

def test_run_grid_end_to_end(tmp_path):
    config = validate_experiment_config(_raw_config(tmp_path, GRID))
    results = run_grid(config)

    assert [r.status for r in results] == [STATUS_OK] * 3
    assert [(r.train_composition, r.test_set) for r in results] == [
        ("original", "original"), ("1:1", "synthetic"), ("synthetic", "corrupted"),
    ]
    assert [(r.n_original, r.n_synthetic) for r in results] == [(40, 0), (20, 20), (0, 40)]
    assert all(0.0 <= r.accuracy <= 1.0 for r in results)
    assert all(r.generator_checksum for r in results)

    out = tmp_path / "out"
    assert len(load_results(out / RESULTS_FILE_NAME, strict=True)) == 3
    manifest = json.loads((out / MANIFEST_FILE_NAME).read_text())
    assert manifest["result_count"] == 3
    assert manifest["failed_cells"] == 0
    assert manifest["finished_at"] is not None
    assert "torch" in manifest["package_versions"]
    assert list((out / "cache" / "generators").glob("*.ckpt"))
    assert len(list((out / "cache" / "classifiers").glob("*.ckpt"))) == 3


def test_run_grid_resumes_completed_cells(tmp_path, monkeypatch):
    config = validate_experiment_config(_raw_config(tmp_path, GRID[:1]))
    first = run_grid(config)

    def _no_training(*args, **kwargs):
        raise AssertionError("completed cell was retrained")

    monkeypatch.setattr(runner, "train_classifier", _no_training)
    monkeypatch.setattr(runner, "train_cgan", _no_training)
    second = run_grid(config)

    assert [r.accuracy for r in second] == [r.accuracy for r in first]
    assert len(load_results(tmp_path / "out" / RESULTS_FILE_NAME)) == 1


def test_failing_cell_is_recorded_and_grid_continues(tmp_path):
    cells = [{"train": "1:1", "test": "original"}, {"train": "original", "test": "original"}]
    config = validate_experiment_config(_raw_config(tmp_path, cells, total_size=5))
    results = run_grid(config)

    assert [r.status for r in results] == [STATUS_ERROR, STATUS_OK]
    assert "RangeError" in results[0].error
    manifest = json.loads((tmp_path / "out" / MANIFEST_FILE_NAME).read_text())
    assert manifest["failed_cells"] == 1


def test_empty_grid(tmp_path):
    config = validate_experiment_config(_raw_config(tmp_path, []))
    assert run_grid(config) == []
    manifest = json.loads((tmp_path / "out" / MANIFEST_FILE_NAME).read_text())
    assert manifest["result_count"] == 0
    assert (tmp_path / "out" / RESULTS_FILE_NAME).exists()


def test_explicit_cache_dir(tmp_path):
    config = validate_experiment_config(_raw_config(tmp_path, GRID[:1]))
    run_grid(config, cache_dir=tmp_path / "shared-cache")
    assert list((tmp_path / "shared-cache" / "real").glob("*.npz"))


def test_real_only_grid_skips_generator(tmp_path, monkeypatch):
    def _no_gan(*args, **kwargs):
        raise AssertionError("generator trained for a real-only grid")

    monkeypatch.setattr(runner, "train_cgan", _no_gan)
    cells = [{"train": "original", "test": "original"}, {"train": "original", "test": "corrupted"}]
    results = run_grid(validate_experiment_config(_raw_config(tmp_path, cells)))
    assert [r.status for r in results] == [STATUS_OK, STATUS_OK]
    assert all(r.generator_checksum is None for r in results)


TABLE_ROWS = [
    ("original", "original"), ("synthetic", "synthetic"), ("synthetic", "original"),
    ("original", "synthetic"), ("1:1", "original"), ("2:1", "original"),
    ("1:2", "original"), ("5:1", "original"), ("5:1", "synthetic"),
]


@pytest.mark.parametrize(
    "name",
    ["mnist_grid", "fashion_mnist_grid", "cifar10_grid", "mnist_corrupted", "fashion_mnist_corrupted", "mnist_c_sweep"],
)
def test_shipped_configs_validate(name):
    configs = Path(__file__).resolve().parents[1] / "configs"
    config = load_experiment_config(configs / f"{name}.toml")
    assert config.cells
    assert config.seeds == [0, 1, 2]


@pytest.mark.parametrize("name", ["mnist_grid", "fashion_mnist_grid", "cifar10_grid"])
def test_dataset_grids_hold_the_nine_mixing_rows(name):
    configs = Path(__file__).resolve().parents[1] / "configs"
    config = load_experiment_config(configs / f"{name}.toml")
    assert [(c.train, c.test.value) for c in config.cells] == TABLE_ROWS


def test_rerun_reproduces_accuracies_and_generator(tmp_path):
    first_dir, second_dir = tmp_path / "first", tmp_path / "second"
    first_dir.mkdir()
    second_dir.mkdir()
    first = run_grid(validate_experiment_config(_raw_config(first_dir, GRID)))
    second = run_grid(validate_experiment_config(_raw_config(second_dir, GRID)))
    assert [r.status for r in first] == [STATUS_OK] * len(GRID)
    assert [r.accuracy for r in first] == [r.accuracy for r in second]
    assert [r.classifier_checksum for r in first] == [r.classifier_checksum for r in second]
    assert first[0].generator_checksum == second[0].generator_checksum


def test_changed_data_reruns_cells_in_same_output_dir(tmp_path):
    cells = GRID[:1]
    config = validate_experiment_config(_raw_config(tmp_path, cells))
    run_grid(config)

    changed = make_set(per_class=10, seed=7, name="train")
    write_idx(changed, tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte")
    run_grid(config)

    records = load_results(tmp_path / "out" / RESULTS_FILE_NAME)
    assert len(records) == 2
    assert records[0]["cell_key"] != records[1]["cell_key"]


def test_synthetic_test_set_shares_no_images_with_pool(tmp_path):
    config = validate_experiment_config(_raw_config(tmp_path, GRID[1:2]))
    train, test = runner.load_real_sets(config)
    cache = tmp_path / "cache"
    prepared = runner.prepare_seed(config, 0, train, test, cache, runner.dataset_fingerprint(train))

    pool = load_npz(prepared.synthetic_train)
    synthetic_test = load_npz(prepared.synthetic_test)
    pool_rows = {row.tobytes() for row in pool.images.reshape(len(pool), -1)}
    shared = sum(row.tobytes() in pool_rows for row in synthetic_test.images.reshape(len(synthetic_test), -1))
    assert len(synthetic_test) == 30
    assert shared == 0


def test_default_workers_estimate_physical_cores(tmp_path, monkeypatch):
    monkeypatch.setattr(runner.os, "cpu_count", lambda: 8)
    raw = _raw_config(tmp_path, GRID)
    del raw["workers"]
    assert validate_experiment_config(raw).workers == 4
    monkeypatch.setattr(runner.os, "cpu_count", lambda: None)
    assert validate_experiment_config(raw).workers == 1
    assert "physical-core" in runner.ExperimentConfig.model_fields["workers"].description
