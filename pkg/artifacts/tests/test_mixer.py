"""
Tests for constant-size mixing: apportionment rules, composition and audit.
"""

import numpy as np
import pytest

from conftest import make_set
from mixer import (
    MixtureSpec,
    audit,
    class_quotas,
    compose,
    largest_remainder,
    parse_ratio,
    split_global,
)
from models import Provenance
from utils.errors import CapacityError, ConsistencyError, RangeError


# --------------------------------------------------------------------------
# Apportionment
# --------------------------------------------------------------------------

@pytest.mark.parametrize(
    "total, a, b, expected",
    [
        (60000, 5, 1, (50000, 10000)),
        (10000, 7, 1, (8750, 1250)),
        (20, 1, 1, (10, 10)),
        (60000, 1, 0, (60000, 0)),
        (60000, 0, 1, (0, 60000)),
        (5, 1, 1, (3, 2)),  # 2.5 rounds half up
        (7, 10, 1, (6, 1)),
    ],
)
def test_split_global(total, a, b, expected):
    assert split_global(total, a, b) == expected


def test_largest_remainder_ties_go_to_lowest_index():
    assert largest_remainder(7, [1, 1, 1]).tolist() == [3, 2, 2]
    assert largest_remainder(10, [1] * 4).tolist() == [3, 3, 2, 2]


def test_largest_remainder_proportional():
    assert largest_remainder(10, [5, 3, 2]).tolist() == [5, 3, 2]
    assert largest_remainder(10, [1, 1, 0]).tolist() == [5, 5, 0]


@pytest.mark.parametrize("total", [10, 20, 37, 60000, 10007])
@pytest.mark.parametrize("ratio", [(1, 1), (5, 1), (7, 1), (1, 2), (10, 1), (1, 0), (0, 1)])
def test_class_quotas_invariants(total, ratio):
    spec = MixtureSpec(ratio_original=ratio[0], ratio_synthetic=ratio[1], total_size=total)
    original, synthetic = class_quotas(spec, 10)
    n_original, n_synthetic = split_global(total, *ratio)

    assert int(original.sum()) == n_original
    assert int(synthetic.sum()) == n_synthetic
    per_class = original + synthetic
    assert per_class.max() - per_class.min() <= 1
    assert (original >= 0).all() and (synthetic >= 0).all()


def test_class_quotas_oracle_five_to_one():
    spec = MixtureSpec.from_ratio("5:1", 60000)
    original, synthetic = class_quotas(spec, 10)
    assert original.tolist() == [5000] * 10
    assert synthetic.tolist() == [1000] * 10


def test_class_quotas_requires_total_at_least_classes():
    with pytest.raises(RangeError):
        class_quotas(MixtureSpec.from_ratio("1:1", 9), 10)


# --------------------------------------------------------------------------
# Spec parsing and validation
# --------------------------------------------------------------------------

def test_parse_ratio():
    assert parse_ratio("5:1") == (5, 1)
    assert parse_ratio(" 10 : 0 ") == (10, 0)
    for bad in ("5", "a:b", "-1:2", "0:0"):
        with pytest.raises(ValueError):
            parse_ratio(bad)


def test_spec_rejects_zero_ratio():
    with pytest.raises(ValueError):
        MixtureSpec(ratio_original=0, ratio_synthetic=0, total_size=10)


def test_spec_rejects_non_positive_total():
    with pytest.raises(ValueError):
        MixtureSpec(ratio_original=1, ratio_synthetic=1, total_size=0)


# --------------------------------------------------------------------------
# Composition
# --------------------------------------------------------------------------

def _sources(per_class=10):
    original = make_set(per_class=per_class, seed=0, provenance=Provenance.REAL, name="orig")
    synthetic = make_set(per_class=per_class, seed=1, provenance=Provenance.SYNTHETIC, name="synth")
    return original, synthetic


def test_compose_one_to_one_twenty():
    original, synthetic = _sources()
    mixed = compose(original, synthetic, MixtureSpec.from_ratio("1:1", 20, seed=3))

    report = audit(mixed)
    assert report.total == 20
    assert report.n_original == 10 and report.n_synthetic == 10
    assert report.counts[:, Provenance.REAL].tolist() == [1] * 10
    assert report.counts[:, Provenance.SYNTHETIC].tolist() == [1] * 10


def test_compose_puts_originals_first():
    original, synthetic = _sources()
    mixed = compose(original, synthetic, MixtureSpec.from_ratio("3:1", 40))
    n_original = audit(mixed).n_original
    assert (mixed.provenance[:n_original] == Provenance.REAL).all()
    assert (mixed.provenance[n_original:] == Provenance.SYNTHETIC).all()


def test_compose_is_deterministic():
    original, synthetic = _sources()
    spec = MixtureSpec.from_ratio("2:1", 60, seed=7)
    assert np.array_equal(compose(original, synthetic, spec).images, compose(original, synthetic, spec).images)


def test_compose_seed_changes_selection():
    original, synthetic = _sources()
    a = compose(original, synthetic, MixtureSpec.from_ratio("1:1", 20, seed=0))
    b = compose(original, synthetic, MixtureSpec.from_ratio("1:1", 20, seed=1))
    assert not np.array_equal(a.images, b.images)


def test_compose_pure_original_draws_only_originals():
    original, synthetic = _sources()
    mixed = compose(original, synthetic, MixtureSpec.from_ratio("1:0", 50))
    assert audit(mixed).n_synthetic == 0
    assert len(mixed) == 50


def test_compose_unbalanced():
    original, synthetic = _sources()
    spec = MixtureSpec.from_ratio("1:1", 30, class_balanced=False)
    report = audit(compose(original, synthetic, spec))
    assert (report.n_original, report.n_synthetic) == (15, 15)


def test_compose_capacity_error_names_class():
    original, synthetic = _sources(per_class=2)
    with pytest.raises(CapacityError) as info:
        compose(original, synthetic, MixtureSpec.from_ratio("1:0", 30))
    assert info.value.class_index == 0
    assert info.value.shortfall == 1


def test_compose_rejects_mismatched_sources():
    original = make_set(per_class=2)
    synthetic = make_set(per_class=2, shape=(32, 32, 3), provenance=Provenance.SYNTHETIC)
    with pytest.raises(ConsistencyError):
        compose(original, synthetic, MixtureSpec.from_ratio("1:1", 10))


def test_audit_to_dict():
    original, synthetic = _sources()
    record = audit(compose(original, synthetic, MixtureSpec.from_ratio("1:1", 20))).to_dict()
    assert record["total"] == 20
    assert record["per_class"]["0"] == {"REAL": 1, "SYNTHETIC": 1}
