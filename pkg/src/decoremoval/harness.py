"""Data loading, synthetic fixtures, metrics and a loss-threshold MIA."""
from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import LabeledDataset
from .errors import InputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    weighted_f1: float
    per_class_f1: tuple
    support: tuple
    classes: tuple

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MiaReport:
    attack_success: float
    threshold: float
    member_count: int
    nonmember_count: int
    attack: str = "loss-threshold"

    def to_dict(self):
        return asdict(self)


def _paired(pred, truth):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if truth.size == 0:
        raise InputError("metrics need at least one prediction")
    if pred.shape != truth.shape:
        raise InputError(f"length mismatch: {pred.size} predictions, {truth.size} labels")
    return pred, truth


def accuracy(pred, truth):
    pred, truth = _paired(pred, truth)
    return float(np.mean(pred == truth))


def weighted_f1(pred, truth):
    """Per-class F1 over the classes present in ``truth``, support-weighted."""
    pred, truth = _paired(pred, truth)
    classes, support = np.unique(truth, return_counts=True)
    f1 = np.zeros(classes.size)
    for i, c in enumerate(classes):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        # 2PR/(P+R) == 2tp/(2tp+fp+fn); zero when both P and R vanish
        denom = 2 * tp + fp + fn
        f1[i] = 2 * tp / denom if tp > 0 else 0.0
    wf1 = float(np.dot(support / truth.size, f1))
    return MetricsReport(accuracy(pred, truth), wf1, tuple(float(v) for v in f1),
                         tuple(int(v) for v in support), tuple(int(c) for c in classes))


def mia_threshold_attack(member_losses, nonmember_losses):
    """Best balanced accuracy of the rule ``loss < t  =>  member`` over all t."""
    mem = np.sort(np.asarray(member_losses, dtype=np.float64).reshape(-1))
    non = np.sort(np.asarray(nonmember_losses, dtype=np.float64).reshape(-1))
    if mem.size == 0 or non.size == 0:
        raise InputError("MIA needs at least one member and one nonmember loss")
    values = np.unique(np.concatenate([mem, non]))
    thresholds = np.append(values, np.nextafter(values[-1], np.inf))
    tpr = np.searchsorted(mem, thresholds, side="left") / mem.size
    tnr = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    balanced = 0.5 * (tpr + tnr)
    best = int(np.argmax(balanced))
    return MiaReport(float(balanced[best]), float(thresholds[best]), int(mem.size),
                     int(non.size))


def load_csv_dataset(path, has_header=False, label_column=0):
    """Read a comma-separated file; every non-label column is a float feature.

    Labels are mapped to 0, 1, ... in order of first appearance and the
    original strings are kept in ``label_names``. Errors name the 1-based
    line number.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"dataset file not found: {path}")
    rows, labels, names = [], [], {}
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
                if not -width <= label_column < width:
                    raise InputError(f"row {lineno}: label column {label_column} missing")
                if width < 2:
                    raise InputError(f"row {lineno}: need a label and at least one feature")
            elif len(row) != width:
                raise InputError(f"row {lineno}: expected {width} cells, found {len(row)}")
            lab_idx = label_column % width
            label = row[lab_idx].strip()
            feats = []
            for j, cell in enumerate(row):
                if j == lab_idx:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(f"row {lineno}: non-numeric feature {cell!r}") from None
                if not math.isfinite(v):
                    raise InputError(f"row {lineno}: non-finite feature {cell!r}")
                feats.append(v)
            labels.append(names.setdefault(label, len(names)))
            rows.append(feats)
    if not rows:
        raise InputError(f"dataset file {path} has no data rows")
    return LabeledDataset(np.array(rows), np.array(labels), np.arange(len(rows)),
                          tuple(names))


def save_csv_dataset(dataset, path):
    """Write label first, then features; the inverse of ``load_csv_dataset``."""
    names = dataset.label_names or tuple(str(i) for i in range(int(dataset.labels.max()) + 1))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for lab, feats in zip(dataset.labels, dataset.features):
            writer.writerow([names[lab]] + [repr(float(v)) for v in feats])


def gen_correlated(n, d, rho, seed, label_noise=0.1):
    """Gaussian features with unit variances and pairwise correlation ``rho``.

    Labels come from a random hyperplane through the origin, then a random
    ``label_noise`` fraction of them is flipped.
    """
    if n < 2 or d < 2:
        raise InputError("gen_correlated needs n >= 2 and d >= 2")
    if not 0.0 <= rho < 1.0:
        raise InputError(f"rho must lie in [0, 1), got {rho}")
    rng = np.random.default_rng(seed)
    common = rng.standard_normal((n, 1))
    X = math.sqrt(rho) * common + math.sqrt(1.0 - rho) * rng.standard_normal((n, d))
    normal = rng.standard_normal(d)
    y = (X @ normal > 0).astype(np.int64)
    flip = rng.choice(n, size=int(round(label_noise * n)), replace=False)
    y[flip] = 1 - y[flip]
    return LabeledDataset(X, y, np.arange(n), ("0", "1"))


def _read_maybe_gzip(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"IDX file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_header(raw, magic, ndim, path):
    size = 4 + 4 * ndim
    if len(raw) < size:
        raise InputError(f"{path}: truncated IDX header")
    fields = struct.unpack(">" + "I" * (1 + ndim), raw[:size])
    if fields[0] != magic:
        raise InputError(f"{path}: bad IDX magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    dims = fields[1:]
    expected = size + int(np.prod(dims))
    if len(raw) < expected:
        raise InputError(f"{path}: truncated payload, {len(raw)} of {expected} bytes")
    return dims, size


def load_idx_images(images_path, labels_path, classes=None):
    """Pair an IDX image file with its label file; pixels scale to [0, 1].

    ``classes`` keeps only those digits and remaps them to 0, 1, ... in
    sorted order (e.g. ``{3, 8}`` becomes 3 -> 0, 8 -> 1).
    """
    img_raw = _read_maybe_gzip(images_path)
    lab_raw = _read_maybe_gzip(labels_path)
    (count, rows, cols), off = _idx_header(img_raw, IDX_IMAGES_MAGIC, 3, images_path)
    (lcount,), loff = _idx_header(lab_raw, IDX_LABELS_MAGIC, 1, labels_path)
    if count != lcount:
        raise InputError(f"image/label count mismatch: {count} images, {lcount} labels")
    pixels = np.frombuffer(img_raw, dtype=np.uint8, count=count * rows * cols, offset=off)
    X = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lab_raw, dtype=np.uint8, count=count, offset=loff).astype(np.int64)
    ids = np.arange(count)
    names = tuple(str(v) for v in range(int(y.max()) + 1)) if count else ()
    if classes is not None:
        keep_classes = sorted(int(c) for c in classes)
        mask = np.isin(y, keep_classes)
        X, y, ids = X[mask], y[mask], ids[mask]
        y = np.searchsorted(keep_classes, y)
        names = tuple(str(c) for c in keep_classes)
    if y.size == 0:
        raise InputError("no images left after class filtering")
    return LabeledDataset(X, y, ids, names)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (count, rows, cols) and labels as uncompressed IDX."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def find_mnist(directory):
    """Return (images, labels) paths for MNIST training files in ``directory``."""
    directory = Path(directory)
    for stem in ("train-images-idx3-ubyte", "train-images.idx3-ubyte"):
        for suffix in ("", ".gz"):
            img = directory / (stem + suffix)
            lab = directory / (stem.replace("images", "labels").replace("idx3", "idx1") + suffix)
            if img.exists() and lab.exists():
                return img, lab
    return None
