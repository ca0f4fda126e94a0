"""Dataset container, train/val/test splitting and the OOD relabel split.

All randomness goes through ``numpy.random.default_rng`` (PCG64), which is
specified bit-for-bit across platforms for a given integer seed.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with dense integer labels and unique sample ids."""

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    label_names: tuple = field(default=())

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {X.shape}")
        y = np.array(self.labels, dtype=np.int64)
        ids = np.array(self.ids, dtype=np.int64)
        n, m = X.shape
        if n < 1 or m < 1:
            raise InputError(f"dataset needs n >= 1 and m_X >= 1, got {X.shape}")
        if y.shape != (n,) or ids.shape != (n,):
            raise InputError(
                f"row count mismatch: features {n}, labels {y.shape}, ids {ids.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("features contain non-finite entries")
        if y.min() < 0:
            raise InputError("labels must be nonnegative class indices")
        if np.unique(ids).size != n:
            raise InputError("sample ids are not unique")
        X.setflags(write=False)
        y.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows], self.ids[rows],
                              self.label_names)

    def rows_for_ids(self, ids):
        """Row positions for ``ids``; raises InputError listing unknown ids."""
        lookup = {int(v): i for i, v in enumerate(self.ids)}
        missing = [int(v) for v in ids if int(v) not in lookup]
        if missing:
            raise InputError(f"unknown sample ids: {missing}")
        return np.array([lookup[int(v)] for v in ids], dtype=np.int64)

    def fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.features, self.labels, self.ids):
            h.update(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 7 / 9
    val_ratio: float = 1 / 9
    test_ratio: float = 1 / 9
    seed: int = 0

    def __post_init__(self):
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if any(r < 0 for r in ratios):
            raise InputError(f"split ratios must be nonnegative, got {ratios}")
        if abs(sum(ratios) - 1.0) > 1e-12:
            raise InputError(f"split ratios must sum to 1, got {sum(ratios)!r}")


@dataclass(frozen=True)
class OodSpec:
    source_class: int
    target_class: int
    fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.source_class == self.target_class:
            raise InputError("source_class and target_class must differ")
        if not 0.0 < self.fraction <= 1.0:
            raise InputError(f"fraction must lie in (0, 1], got {self.fraction}")


def split_dataset(dataset, spec):
    """Shuffle rows with ``spec.seed`` and cut into (train, val, test).

    Validation and test sizes are ``round(n * ratio)``; train takes the rest.
    A split that would come out empty is an error, since datasets need a row.
    """
    n = dataset.n
    n_val = int(round(n * spec.val_ratio))
    n_test = int(round(n * spec.test_ratio))
    if n_val + n_test > n:
        n_test = n - n_val
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = n - n_val - n_test
    for name, size in (("train", n_train), ("val", n_val), ("test", n_test)):
        if size == 0:
            raise InputError(f"{name} split of {n} samples would be empty")
    return (dataset.subset(np.sort(perm[:n_train])),
            dataset.subset(np.sort(perm[n_train:n_train + n_val])),
            dataset.subset(np.sort(perm[n_train + n_val:])))


def ood_relabel_count(count, fraction):
    # tolerance keeps e.g. 0.29 * 100 from flooring to 28
    return int(math.floor(fraction * count + 1e-9))


def make_ood_split(test, spec):
    """Relabel a random ``fraction`` of ``source_class`` rows as ``target_class``."""
    source_rows = np.flatnonzero(test.labels == spec.source_class)
    if source_rows.size == 0:
        raise InputError(f"class {spec.source_class} absent from the test set")
    k = ood_relabel_count(source_rows.size, spec.fraction)
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(source_rows, size=k, replace=False)
    labels = test.labels.copy()
    labels[chosen] = spec.target_class
    return LabeledDataset(test.features, labels, test.ids, test.label_names)
