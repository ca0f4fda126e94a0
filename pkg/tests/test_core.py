import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decoremoval.core import (LabeledDataset, OodSpec, SplitSpec, make_ood_split,
                              ood_relabel_count, split_dataset)
from decoremoval.errors import InputError


def make_dataset(n, dim=3, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.standard_normal((n, dim)), rng.integers(0, classes, n),
                          np.arange(100, 100 + n))


class TestLabeledDataset:
    def test_rejects_mismatched_rows(self):
        with pytest.raises(InputError):
            LabeledDataset(np.zeros((3, 2)), [0, 1], [0, 1, 2])

    def test_rejects_duplicate_ids(self):
        with pytest.raises(InputError, match="unique"):
            LabeledDataset(np.zeros((2, 2)), [0, 1], [5, 5])

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        X = np.zeros((2, 2))
        X[1, 0] = bad
        with pytest.raises(InputError):
            LabeledDataset(X, [0, 1], [0, 1])

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            LabeledDataset(np.zeros((0, 2)), [], [])

    def test_caller_arrays_are_copied(self):
        X = np.ones((2, 2))
        ds = LabeledDataset(X, [0, 1], [0, 1])
        X[0, 0] = 7.0
        assert ds.features[0, 0] == 1.0
        assert X.flags.writeable
        assert not ds.features.flags.writeable

    def test_rows_for_ids_lists_unknown(self):
        ds = make_dataset(4)
        assert list(ds.rows_for_ids([102, 100])) == [2, 0]
        with pytest.raises(InputError, match=r"\[7, 8\]"):
            ds.rows_for_ids([100, 7, 8])

    def test_fingerprint_tracks_content(self):
        a, b = make_dataset(5), make_dataset(5)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != make_dataset(5, seed=1).fingerprint()


@pytest.mark.parametrize("n,ratios,seed,sizes", [
    (10, (0.7, 0.1, 0.2), 1, (7, 1, 2)),
    (9, (7 / 9, 1 / 9, 1 / 9), 0, (7, 1, 1)),
    (9, (7 / 9, 1 / 9, 1 / 9), 123, (7, 1, 1)),
])
def test_split_sizes(n, ratios, seed, sizes):
    parts = split_dataset(make_dataset(n), SplitSpec(*ratios, seed=seed))
    assert tuple(p.n for p in parts) == sizes


def test_split_is_deterministic():
    ds = make_dataset(50)
    a = split_dataset(ds, SplitSpec(seed=3))
    b = split_dataset(ds, SplitSpec(seed=3))
    for x, y in zip(a, b):
        assert np.array_equal(x.ids, y.ids)


def test_split_rejects_empty_partition():
    with pytest.raises(InputError, match="val split"):
        split_dataset(make_dataset(5), SplitSpec(0.9, 0.05, 0.05))


def test_split_spec_validates_ratios():
    with pytest.raises(InputError):
        SplitSpec(0.5, 0.2, 0.2)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(40, 200), seed=st.integers(0, 2**32 - 1),
       train=st.floats(0.3, 0.9))
def test_split_partitions_ids(n, seed, train):
    rest = (1 - train) / 2
    ds = make_dataset(n)
    parts = split_dataset(ds, SplitSpec(train, rest, 1 - train - rest, seed))
    joined = np.concatenate([p.ids for p in parts])
    assert sorted(joined.tolist()) == sorted(ds.ids.tolist())


def test_ood_exact_count():
    ds = LabeledDataset(np.zeros((130, 1)), [0] * 100 + [1] * 30, np.arange(130))
    shifted = make_ood_split(ds, OodSpec(0, 1, 0.10, seed=4))
    changed = np.flatnonzero(shifted.labels != ds.labels)
    assert changed.size == 10
    assert np.all(ds.labels[changed] == 0) and np.all(shifted.labels[changed] == 1)


def test_ood_floor_to_zero():
    ds = LabeledDataset(np.zeros((8, 1)), [0] * 5 + [1] * 3, np.arange(8))
    shifted = make_ood_split(ds, OodSpec(0, 1, 0.1))
    assert np.array_equal(shifted.labels, ds.labels)


@pytest.mark.parametrize("frac", [0.0, 1.5])
def test_ood_spec_validates_fraction(frac):
    with pytest.raises(InputError):
        OodSpec(0, 1, frac)


def test_ood_deterministic():
    ds = make_dataset(200)
    a = make_ood_split(ds, OodSpec(0, 1, 0.25, seed=42))
    b = make_ood_split(ds, OodSpec(0, 1, 0.25, seed=42))
    assert np.array_equal(a.labels, b.labels)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 150), frac=st.floats(0.001, 1), seed=st.integers(0, 1000))
def test_ood_changes_only_labels(n, frac, seed):
    ds = make_dataset(n, seed=seed)
    count = int(np.sum(ds.labels == 0))
    if count == 0:
        return
    shifted = make_ood_split(ds, OodSpec(0, 1, frac, seed))
    assert np.array_equal(shifted.features, ds.features)
    assert np.array_equal(shifted.ids, ds.ids)
    assert int(np.sum(shifted.labels != ds.labels)) == math.floor(frac * count + 1e-9)
    assert ood_relabel_count(count, frac) == math.floor(frac * count + 1e-9)
