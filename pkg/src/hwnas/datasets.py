"""Synthetic datasets, CSV ingestion, readout windowing, normalization, and
stratified k-fold splitting.

The two generators are desk-scale analogues of the case-study data: a
Gaussian-mixture multiclass table and a binary I/Q time-series set whose
class signal lives only inside a known window. All generation is driven by
an explicit seed; there is no global RNG state anywhere in this module.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from hwnas.config import WindowSpec


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetTable:
    features: np.ndarray  # (n_samples, n_features) float64
    labels: np.ndarray    # (n_samples,) int64
    class_count: int
    # time-series tables store I then Q as two contiguous blocks per sample
    series_length: Optional[int] = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DatasetError("labels must align with feature rows")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.class_count):
            raise DatasetError("labels out of [0, class_count) range")
        if self.series_length is not None and \
                self.features.shape[1] != 2 * self.series_length:
            raise DatasetError("time-series feature dim must be 2*series_length")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "DatasetTable":
        return DatasetTable(self.features[idx], self.labels[idx],
                            self.class_count, self.series_length)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray  # fold index per sample

    def train_val_indices(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        val = np.flatnonzero(self.assignments == fold)
        if self.k == 1:
            # degenerate single-fold plan: train and validate on everything
            return val, val
        train = np.flatnonzero(self.assignments != fold)
        return train, val


def _balanced_labels(n: int, classes: int) -> np.ndarray:
    # counts differ by at most one; lower class ids get the remainder
    base, extra = divmod(n, classes)
    counts = [base + (1 if c < extra else 0) for c in range(classes)]
    return np.repeat(np.arange(classes), counts)


def gen_jet_like(n: int, dims: int, classes: int, separation: float,
                 seed: int) -> DatasetTable:
    """Gaussian mixture with `classes` balanced components whose means are
    pairwise `separation` apart (unit isotropic noise)."""
    if n < classes or dims < 1 or classes < 1:
        raise DatasetError(f"need n >= classes >= 1 and dims >= 1, "
                           f"got n={n} dims={dims} classes={classes}")
    rng = np.random.default_rng(seed)
    # orthonormal directions -> pairwise mean distance = separation
    basis, _ = np.linalg.qr(rng.standard_normal((dims, max(dims, classes))))
    means = (separation / np.sqrt(2.0)) * basis[:, :classes].T
    labels = _balanced_labels(n, classes)
    feats = means[labels] + rng.standard_normal((n, dims))
    return DatasetTable(feats, labels.astype(np.int64), classes)


def gen_iq_readout(n: int, series_length: int, informative: WindowSpec,
                   snr: float, seed: int) -> DatasetTable:
    """Binary I/Q readout traces: the class-conditional means differ only
    inside `informative`; everything is unit Gaussian noise otherwise."""
    if informative.start + informative.size > series_length:
        raise DatasetError("informative window exceeds series length")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, 2)
    feats = rng.standard_normal((n, 2 * series_length))
    lo, hi = informative.start, informative.start + informative.size
    shift = snr / 2.0
    sign = np.where(labels == 1, 1.0, -1.0)[:, None]
    feats[:, lo:hi] += sign * shift                                  # I block
    feats[:, series_length + lo:series_length + hi] -= sign * shift  # Q block
    return DatasetTable(feats, labels.astype(np.int64), 2,
                        series_length=series_length)


def extract_window(table: DatasetTable, w: WindowSpec) -> DatasetTable:
    """Slice [start, start+size) out of both the I and Q blocks and
    concatenate; output dimension is 2*size."""
    if table.series_length is None:
        raise DatasetError("extract_window needs a time-series table")
    if w.start + w.size > table.series_length:
        raise DatasetError(f"window [{w.start}, {w.start + w.size}) exceeds "
                           f"series length {table.series_length}")
    L = table.series_length
    i_block = table.features[:, w.start:w.start + w.size]
    q_block = table.features[:, L + w.start:L + w.start + w.size]
    return DatasetTable(np.concatenate([i_block, q_block], axis=1),
                        table.labels, table.class_count)


def load_csv(path: str, label_column: str = "label",
             has_header: bool = True) -> DatasetTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    if has_header:
        header = rows[0]
        rows = rows[1:]
    else:
        header = [f"f{i}" for i in range(len(rows[0]) - 1)] + [label_column]
    if label_column not in header:
        raise DatasetError(f"{path}: unknown label column {label_column!r}")
    label_idx = header.index(label_column)
    width = len(header)

    feats = np.empty((len(rows), width - 1))
    labels = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        rownum = r + (2 if has_header else 1)
        if len(row) != width:
            raise DatasetError(f"{path}: ragged row {rownum} "
                               f"({len(row)} cells, expected {width})")
        col_out = 0
        for c, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise DatasetError(f"{path}: non-numeric cell at row "
                                   f"{rownum}, column {c + 1}: {cell!r}")
            if c == label_idx:
                if value != int(value):
                    raise DatasetError(f"{path}: non-integral label at row "
                                       f"{rownum}")
                labels[r] = int(value)
            else:
                feats[r, col_out] = value
                col_out += 1
    return DatasetTable(feats, labels, class_count=int(labels.max()) + 1)


def export_csv(table: DatasetTable, path: str,
               label_column: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(table.n_features)]
                        + [label_column])
        for x, y in zip(table.features, table.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def stratified_kfold(labels: np.ndarray, k: int, seed: int) -> FoldPlan:
    """Deal each class round-robin across folds after a seeded shuffle, so
    per-class counts differ by at most one between folds."""
    labels = np.asarray(labels)
    if k < 1:
        raise DatasetError("k must be >= 1")
    rng = np.random.default_rng(seed)
    assignments = np.empty(labels.shape[0], dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise DatasetError(f"class {cls} has {idx.size} samples, "
                               f"fewer than k={k}")
        rng.shuffle(idx)
        assignments[idx] = np.arange(idx.size) % k
    return FoldPlan(k=k, assignments=assignments)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray  # 0 for constant features, else 1/std

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) * self.scale

    def apply_table(self, table: DatasetTable) -> DatasetTable:
        return DatasetTable(self.apply(table.features), table.labels,
                            table.class_count, table.series_length)


def fit_normalizer(features: np.ndarray) -> Normalizer:
    """Per-feature standardization fit on the training split only; constant
    features map to all zeros."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise DatasetError("cannot fit a normalizer on an empty split")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    scale = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 0.0)
    return Normalizer(mean=mean, scale=scale)
