"""Loading raw tabular data and turning it into normalised binary tasks."""
from __future__ import annotations

import csv
import gzip
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import BadFraction, EmptyDataset, InconsistentWidth, ParseError, UnknownClass


@dataclass(frozen=True)
class RawDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0 or self.features.shape[1] == 0:
            raise EmptyDataset("dataset needs at least one row and one feature")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label per row required")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8", newline="")


def _parse_label(tok, line):
    tok = tok.strip()
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"label {tok!r} is not numeric", line) from None
    if not v.is_integer():
        raise ParseError(f"label {tok!r} is not an integer class id", line)
    return int(v)


def _load_csv(path, label_column):
    rows, labels = [], []
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataset(f"{path}: empty file")
        header = [h.strip() for h in header]
        if isinstance(label_column, int):
            li = label_column
        elif label_column in header:
            li = header.index(label_column)
        else:
            raise ParseError(f"label column {label_column!r} not in header", 1)
        width = len(header)
        names = tuple(h for i, h in enumerate(header) if i != li)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise InconsistentWidth(f"expected {width} fields, got {len(row)}", lineno)
            vals = []
            for i, cell in enumerate(row):
                if i == li:
                    continue
                cell = cell.strip()
                if cell == "":
                    raise ParseError("missing value", lineno)
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r}", lineno) from None
            labels.append(_parse_label(row[li], lineno))
            rows.append(vals)
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")
    return RawDataset(np.array(rows, dtype=float), np.array(labels, dtype=np.int64), names)


def _load_libsvm(path, n_features):
    entries, labels = [], []
    d = 0
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            labels.append(_parse_label(toks[0], lineno))
            row = {}
            for tok in toks[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise ParseError(f"bad feature token {tok!r}", lineno) from None
                if not sep or j < 1:
                    raise ParseError(f"bad feature token {tok!r}", lineno)
                row[j - 1] = v
                d = max(d, j)
            entries.append(row)
    if not entries:
        raise EmptyDataset(f"{path}: no data rows")
    if n_features is not None:
        if d > n_features:
            raise InconsistentWidth(f"feature index {d} exceeds n_features={n_features}")
        d = n_features
    X = np.zeros((len(entries), max(d, 1)))
    for i, row in enumerate(entries):
        for j, v in row.items():
            X[i, j] = v
    return RawDataset(X, np.array(labels, dtype=np.int64))


def load_dataset(path, format: Optional[str] = None, label_column: Union[str, int] = "label",
                 n_features: Optional[int] = None) -> RawDataset:
    """Read a csv (header row + label column) or libsvm file; ``.gz`` is transparent."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if format is None:
        name = path.name[:-3] if path.name.endswith(".gz") else path.name
        format = "libsvm" if name.endswith((".libsvm", ".svm", ".txt")) else "csv"
    if format == "csv":
        return _load_csv(path, label_column)
    if format == "libsvm":
        return _load_libsvm(path, n_features)
    raise ValueError(f"unknown format {format!r}")


@dataclass(frozen=True)
class PreparedTask:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    eps: float
    norm_stats: np.ndarray  # shape (2, d): per-feature min and max
    seed: int
    classes: tuple  # class ids; for binary tasks (positive_class,)
    one_vs_all: bool = False
    labels_train: Optional[np.ndarray] = None
    labels_val: Optional[np.ndarray] = None
    labels_test: Optional[np.ndarray] = None

    @property
    def d(self):
        return self.X_train.shape[1]

    def split(self, name):
        return {"train": (self.X_train, self.y_train), "val": (self.X_val, self.y_val),
                "test": (self.X_test, self.y_test)}[name]

    def labels(self, name):
        return {"train": self.labels_train, "val": self.labels_val, "test": self.labels_test}[name]


def normalize(X, norm_stats):
    lo, hi = norm_stats
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    Z = np.where(span > 0, (X - lo) / safe, 0.0)
    return np.clip(Z, 0.0, 1.0)


def _encode(labels, classes, one_vs_all):
    if one_vs_all:
        return np.column_stack([np.where(labels == c, 1.0, -1.0) for c in classes])
    return np.where(labels == classes[0], 1.0, -1.0)


def prepare_task(raw: RawDataset, positive_class, eps: float = 0.0, val_frac: float = 0.2,
                 seed: int = 0, test: Optional[RawDataset] = None, test_frac: float = 0.2,
                 norm_stats=None, max_train: Optional[int] = None) -> PreparedTask:
    """Split, normalise with training statistics and encode labels.

    Without ``test`` a fraction ``test_frac`` (rounded up) of the rows is held
    out first; the remaining rows are split into train and validation.
    ``max_train`` subsamples the pool before the validation split.
    ``norm_stats`` fixes the per-feature (min, max) instead of estimating it.
    """
    if not 0 <= val_frac < 1:
        raise BadFraction(f"val_frac must be in [0, 1), got {val_frac}")
    if test is None and not 0 < test_frac < 1:
        raise BadFraction(f"test_frac must be in (0, 1), got {test_frac}")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    one_vs_all = positive_class in ("one-vs-all", "one_vs_all")
    present = np.unique(raw.labels)
    if one_vs_all:
        classes = tuple(int(c) for c in present)
        if len(classes) < 2:
            raise UnknownClass("one-vs-all needs at least two classes")
    else:
        if int(positive_class) not in present:
            raise UnknownClass(f"class {positive_class} not among {present.tolist()}")
        classes = (int(positive_class),)
    if test is not None and test.d != raw.d:
        raise InconsistentWidth(f"test set has {test.d} features, expected {raw.d}")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(raw.n)
    if test is None:
        n_test = math.ceil(raw.n * test_frac)
        test_idx, pool = perm[:n_test], perm[n_test:]
        X_test_raw, l_test = raw.features[test_idx], raw.labels[test_idx]
    else:
        pool = perm
        X_test_raw, l_test = test.features, test.labels
    if max_train is not None and max_train < pool.size:
        pool = pool[:max_train]
    n_val = int(math.floor(pool.size * val_frac))
    val_idx, train_idx = pool[:n_val], pool[n_val:]
    if train_idx.size == 0:
        raise EmptyDataset("no training rows left after splitting")
    Xtr, Xva = raw.features[train_idx], raw.features[val_idx]
    if norm_stats is None:
        norm_stats = np.vstack((Xtr.min(axis=0), Xtr.max(axis=0)))
    else:
        norm_stats = np.asarray(norm_stats, dtype=float)
        if norm_stats.shape != (2, raw.d):
            norm_stats = np.broadcast_to(norm_stats.reshape(2, -1), (2, raw.d)).copy()
    l_tr, l_va = raw.labels[train_idx], raw.labels[val_idx]
    return PreparedTask(
        X_train=normalize(Xtr, norm_stats), y_train=_encode(l_tr, classes, one_vs_all),
        X_val=normalize(Xva, norm_stats), y_val=_encode(l_va, classes, one_vs_all),
        X_test=normalize(X_test_raw, norm_stats), y_test=_encode(l_test, classes, one_vs_all),
        eps=float(eps), norm_stats=norm_stats, seed=int(seed), classes=classes,
        one_vs_all=one_vs_all, labels_train=l_tr, labels_val=l_va, labels_test=l_test)
