"""Covtype ingestion and the simulated data-collection process.

Devices each draw a Poisson(n0) number of training points; collection points
(CPs) are formed by merging contiguous blocks of device shards.
"""
from __future__ import annotations

import csv
import gzip
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COVTYPE_FEATURES = 54
COVTYPE_CLASSES = range(1, 8)


class DataError(ValueError):
    """Malformed input data or an infeasible partition request."""


@dataclass
class LabeledDataset:
    """Feature matrix plus labels.

    ``labels`` holds the original class ids until :func:`filter_binary` maps
    them to -1/+1; ``classes`` always keeps the original ids.
    """

    features: np.ndarray
    labels: np.ndarray
    classes: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        if len(self.labels) != len(self.features):
            raise DataError("features and labels differ in length")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if self.classes is None:
            self.classes = self.labels.copy()

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledDataset(self.features[idx], self.labels[idx], self.classes[idx])


def _open_text(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="ascii")
    return open(path, "r", encoding="ascii")


def _locate_bad_line(path: Path, ncols: int) -> str:
    with _open_text(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != ncols:
                return f"line {lineno}: expected {ncols} columns, found {len(row)}"
            for col, value in enumerate(row, start=1):
                try:
                    float(value)
                except ValueError:
                    return f"line {lineno}, column {col}: non-numeric field {value!r}"
            if not float(row[-1]).is_integer() or int(float(row[-1])) not in COVTYPE_CLASSES:
                return f"line {lineno}: class label {row[-1]!r} outside 1..7"
    return "unparseable input"


def load_covtype(path) -> LabeledDataset:
    """Read the Covtype CSV (54 features then the 1..7 cover type, no header).

    Gzip input is recognised by a ``.gz`` suffix.  Errors name the offending
    line.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    ncols = COVTYPE_FEATURES + 1
    try:
        with _open_text(path) as fh, warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty input is reported below
            raw = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=float)
    except ValueError:
        raise DataError(f"{path}: {_locate_bad_line(path, ncols)}") from None
    if raw.size == 0:
        raise DataError(f"{path}: no data rows")
    if raw.shape[1] != ncols:
        raise DataError(f"{path}: {_locate_bad_line(path, ncols)}")
    cls = raw[:, -1]
    if not np.all(np.isin(cls, list(COVTYPE_CLASSES))):
        raise DataError(f"{path}: {_locate_bad_line(path, ncols)}")
    cls = cls.astype(np.int64)
    return LabeledDataset(raw[:, :-1], cls.copy(), cls)


def filter_binary(ds: LabeledDataset, class_pos: int, class_neg: int) -> LabeledDataset:
    """Keep two cover types, mapping ``class_pos`` to +1 and ``class_neg`` to -1."""
    if class_pos == class_neg:
        raise DataError("positive and negative class must differ")
    for c in (class_pos, class_neg):
        if c not in COVTYPE_CLASSES:
            raise DataError(f"class id {c} outside 1..7")
        if not np.any(ds.classes == c):
            raise DataError(f"class {c} absent from dataset")
    keep = np.flatnonzero((ds.classes == class_pos) | (ds.classes == class_neg))
    labels = np.where(ds.classes[keep] == class_pos, 1, -1).astype(np.int8)
    return LabeledDataset(ds.features[keep], labels, ds.classes[keep])


def split_train_test(ds: LabeledDataset, train_fraction: float, seed: int):
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_train = math.floor(train_fraction * len(ds))
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:])


def standardize(train: LabeledDataset, *others: LabeledDataset):
    """Z-score every column with training statistics; constant columns are centred only."""
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std[std == 0] = 1.0
    out = [LabeledDataset((ds.features - mean) / std, ds.labels, ds.classes) for ds in (train, *others)]
    return out[0] if not others else tuple(out)


def poisson_inverse(u: float, lam: float) -> int:
    """Poisson(lam) variate from one uniform by sequential CDF search.

    Terms are built in log space so large ``lam`` does not underflow.
    """
    log_lam = math.log(lam)
    k, cdf = 0, 0.0
    while True:
        cdf += math.exp(-lam + k * log_lam - math.lgamma(k + 1))
        if u <= cdf or (k > lam and cdf >= 1.0 - 1e-15):
            return k
        k += 1


@dataclass
class ShardSet:
    """Index lists into a dataset, one per device or per CP.

    For a regrouped set, ``moved[i]`` counts the points CP ``i`` received from
    other devices and ``hosts[i]`` is the device acting as that CP.
    """

    shards: list[np.ndarray]
    n0_target: float
    seed: int | None = None
    moved: list[int] = field(default_factory=list)
    hosts: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.shards = [np.asarray(s, dtype=np.intp) for s in self.shards]
        if not self.moved:
            self.moved = [0] * len(self.shards)
        if not self.hosts:
            self.hosts = list(range(len(self.shards)))

    def __len__(self) -> int:
        return len(self.shards)

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]

    @property
    def total_points(self) -> int:
        return sum(self.sizes)

    @property
    def total_moved(self) -> int:
        return sum(self.moved)

    def all_indices(self) -> np.ndarray:
        return np.concatenate(self.shards) if self.shards else np.empty(0, dtype=np.intp)

    def is_disjoint(self) -> bool:
        idx = self.all_indices()
        return len(np.unique(idx)) == len(idx)

    def to_json(self) -> str:
        return json.dumps([s.tolist() for s in self.shards])


def partition_poisson(train: LabeledDataset, m0: int, n0: float, seed: int) -> ShardSet:
    """Give each of ``m0`` devices a Poisson(n0)-sized block of distinct points."""
    if m0 < 1 or n0 < 1:
        raise DataError("m0 and n0 must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train))
    draws = [poisson_inverse(u, n0) for u in rng.random(m0)]
    demand = sum(draws)
    if demand > len(train):
        raise DataError(
            f"devices request {demand} points but only {len(train)} training points exist; "
            f"lower m0*n0 (now {m0}*{n0}) or provide more data"
        )
    bounds = np.cumsum([0] + draws)
    shards = [order[bounds[k]:bounds[k + 1]] for k in range(m0)]
    return ShardSet(shards, n0_target=n0, seed=seed)


def regroup(devices: ShardSet, gamma: float) -> ShardSet:
    """Merge device shards into m1 = round(m0 / gamma) collection points.

    CP ``i`` takes devices ``[i*m0//m1, (i+1)*m0//m1)`` and is hosted by the
    first of them, whose own points do not count as moved.
    """
    m0 = len(devices)
    if not 1 <= gamma <= m0:
        raise DataError(f"gamma must lie in [1, {m0}]")
    m1 = max(1, round(m0 / gamma))
    shards, moved, hosts = [], [], []
    for i in range(m1):
        lo, hi = i * m0 // m1, (i + 1) * m0 // m1
        block = devices.shards[lo:hi]
        shards.append(np.concatenate(block))
        moved.append(sum(len(s) for s in block[1:]))
        hosts.append(lo)
    return ShardSet(shards, n0_target=devices.n0_target, seed=devices.seed, moved=moved, hosts=hosts)
