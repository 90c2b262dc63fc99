"""Dataset loading, preprocessing and fold assignment."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Dataset",
    "SplitPlan",
    "CSVFormatError",
    "load_csv",
    "write_csv",
    "preprocess",
    "make_folds",
    "duplicate_rows",
    "separable_classes",
    "two_moons",
]


@dataclass
class Dataset:
    features: np.ndarray                 # (N, F)
    labels: np.ndarray                   # (N,) int class ids or float targets
    feature_names: Sequence[str] = ()
    source: str = ""
    classes: Sequence = ()               # original label per class id; empty for real targets
    n_rejected: int = 0

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def categorical(self) -> bool:
        return len(self.classes) > 0

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], labels=self.labels[idx])


@dataclass(frozen=True)
class SplitPlan:
    k: int
    seed: int
    fold_of: np.ndarray                  # fold index per sample
    stratified: bool = True

    def folds(self):
        """Yield ``(train_idx, test_idx)`` for each fold in order."""
        for j in range(self.k):
            yield np.flatnonzero(self.fold_of != j), np.flatnonzero(self.fold_of == j)


class CSVFormatError(ValueError):
    pass


def load_csv(path, label_column=-1, has_header: bool = True, categorical: bool = True) -> Dataset:
    """Read a comma-separated file into a ``Dataset``.

    ``label_column`` is a header name or a (possibly negative) column index.
    Categorical labels are mapped to dense ids in order of first appearance;
    with ``categorical=False`` the label column is parsed as real targets.
    Rows holding NaN or infinite values are dropped and counted in
    ``n_rejected`` (a warning is issued).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if has_header:
        if not rows:
            raise CSVFormatError(f"{path}: empty file")
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    else:
        header = None
    if not rows:
        raise CSVFormatError(f"{path}: no data rows")

    width = len(header) if header else len(rows[0][1])
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None or label_column not in header:
            raise CSVFormatError(f"{path}: label column {label_column!r} not found")
        lab = header.index(label_column)
    else:
        lab = int(label_column)
        if not -width <= lab < width:
            raise CSVFormatError(f"{path}: label column index {lab} out of range for {width} columns")
        lab %= width
    feat_cols = [c for c in range(width) if c != lab]
    names = [header[c] for c in feat_cols] if header else [f"x{c}" for c in feat_cols]

    feats, raw_labels, rejected = [], [], 0
    for lineno, r in rows:
        if len(r) != width:
            raise CSVFormatError(f"{path}:{lineno}: expected {width} fields, found {len(r)}")
        try:
            x = [float(r[c]) for c in feat_cols]
        except ValueError as exc:
            raise CSVFormatError(f"{path}:{lineno}: {exc}") from None
        label = r[lab].strip()
        if not categorical:
            try:
                label = float(label)
            except ValueError as exc:
                raise CSVFormatError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in x) or (not categorical and not math.isfinite(label)):
            rejected += 1
            continue
        feats.append(x)
        raw_labels.append(label)
    if rejected:
        warnings.warn(f"{path}: rejected {rejected} row(s) with non-finite values", stacklevel=2)
    if not feats:
        raise CSVFormatError(f"{path}: empty dataset after rejecting non-finite rows")

    if categorical:
        classes = list(dict.fromkeys(raw_labels))
        ids = {c: i for i, c in enumerate(classes)}
        labels = np.array([ids[c] for c in raw_labels], dtype=int)
    else:
        classes = []
        labels = np.array(raw_labels, dtype=float)
    return Dataset(np.array(feats, dtype=float), labels, tuple(names), str(path), tuple(classes), rejected)


def write_csv(d: Dataset, path, label_name: str = "label"):
    """Write features then the label column, with a header; floats in round-trip form."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        names = list(d.feature_names) or [f"x{i}" for i in range(d.n_features)]
        w.writerow(names + [label_name])
        for x, y in zip(d.features, d.labels):
            lab = d.classes[y] if d.categorical else repr(float(y))
            w.writerow([repr(float(v)) for v in x] + [lab])


def preprocess(d: Dataset, add_bias: bool = False, normalize: bool = True) -> Dataset:
    """Optionally append a constant-1 feature, then optionally scale rows to unit L2 norm."""
    x = d.features
    names = list(d.feature_names)
    if x.shape[1] < 1:
        raise ValueError("dataset has no features")
    if add_bias:
        x = np.hstack([x, np.ones((x.shape[0], 1))])
        names.append("bias")
    if normalize:
        norms = np.linalg.norm(x, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValueError(f"cannot normalize zero-norm row(s) {zero[:5].tolist()}")
        x = x / norms[:, None]
    return replace(d, features=x, feature_names=tuple(names))


def duplicate_rows(x) -> list:
    """Index pairs ``(i, j)``, ``i < j``, of identical rows."""
    seen, dups = {}, []
    for i, row in enumerate(np.asarray(x)):
        key = row.tobytes()
        if key in seen:
            dups.append((seen[key], i))
        else:
            seen[key] = i
    return dups


def make_folds(d: Dataset, k: int = 4, seed: int = 0) -> SplitPlan:
    """Random k-fold assignment, stratified by class when labels are categorical.

    Members of each class (taken in class-id order) are shuffled and dealt
    round-robin, continuing the deal across classes, so overall fold sizes
    differ by at most one. If some class has fewer than ``k`` members the plan
    falls back to an unstratified shuffle and warns.
    """
    n = d.n
    if k < 2:
        raise ValueError("need at least two folds")
    if n < k:
        raise ValueError(f"{n} samples cannot fill {k} folds")
    rng = np.random.Generator(np.random.Philox(seed))
    fold_of = np.empty(n, dtype=int)
    stratified = d.categorical
    if stratified:
        counts = np.bincount(d.labels, minlength=d.n_classes)
        if np.any((counts > 0) & (counts < k)):
            warnings.warn(f"a class has fewer than {k} members; using unstratified folds", stacklevel=2)
            stratified = False
    if stratified:
        pos = 0
        for c in range(d.n_classes):
            members = np.flatnonzero(d.labels == c)
            members = members[rng.permutation(members.size)]
            fold_of[members] = (pos + np.arange(members.size)) % k
            pos += members.size
    else:
        order = rng.permutation(n)
        fold_of[order] = np.arange(n) % k
    return SplitPlan(k, seed, fold_of, stratified)


def separable_classes(n: int = 200, n_features: int = 5, margin: float = 0.3, seed: int = 0) -> Dataset:
    """Two classes split by a random hyperplane through the origin, with a gap.

    Points are Gaussian, rejected when closer than ``margin`` to the plane
    (in units of the feature scale), and projected to the unit sphere;
    the gap survives projection as an angular margin.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    normal = rng.standard_normal(n_features)
    normal /= np.linalg.norm(normal)
    xs = []
    while len(xs) < n:
        x = rng.standard_normal(n_features)
        x /= np.linalg.norm(x)
        if abs(x @ normal) >= margin:
            xs.append(x)
    x = np.array(xs)
    labels = (x @ normal > 0).astype(int)
    return Dataset(x, labels, tuple(f"x{i}" for i in range(n_features)), "synthetic:separable", (0, 1))


def two_moons(n: int = 200, noise: float = 0.05, seed: int = 0) -> Dataset:
    """Interleaving half circles in the plane (not normalized)."""
    rng = np.random.Generator(np.random.Philox(seed))
    n0 = n // 2
    t0 = rng.uniform(0, np.pi, n0)
    t1 = rng.uniform(0, np.pi, n - n0)
    a = np.c_[np.cos(t0), np.sin(t0)]
    b = np.c_[1 - np.cos(t1), 0.5 - np.sin(t1)]
    x = np.vstack([a, b]) + noise * rng.standard_normal((n, 2))
    labels = np.r_[np.zeros(n0, int), np.ones(n - n0, int)]
    return Dataset(x, labels, ("x0", "x1"), "synthetic:two_moons", (0, 1))
