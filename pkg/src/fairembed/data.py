"""Synthetic dataset generation with controllable class/attribute structure,
train-test splitting, class-imbalance induction, subgroup bookkeeping,
skin-tone categorization from CIELab values, and CSV file IO.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import EmbeddingMatrix

TRAIN = "train"
TEST = "test"


class RetentionTooSmall(ValueError):
    """A minoritized class would be left with zero train samples."""


class ClassTooSmall(ValueError):
    def __init__(self, class_id: int):
        self.class_id = class_id
        super().__init__(f"class {class_id} has fewer than 2 samples")


class DegenerateYellowChannel(ValueError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"patch {index} has |b| <= 1e-9")


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class SchemaMismatch(ValueError):
    """File header does not match the expected schema."""


@dataclass
class Dataset:
    """Feature rows with a class label and a sensitive attribute per sample."""

    features: np.ndarray      # (n, F) float64
    class_labels: np.ndarray  # (n,) int64
    attributes: np.ndarray    # (n,) int64
    split: np.ndarray         # (n,) str, "train" or "test"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        self.attributes = np.asarray(self.attributes, dtype=np.int64)
        self.split = np.asarray(self.split, dtype="<U5")
        n = self.features.shape[0]
        if not (len(self.class_labels) == len(self.attributes) == len(self.split) == n):
            raise ValueError("features, labels, attributes and split must share length")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.class_labels.max()) + 1

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)


@dataclass(frozen=True)
class ImbalanceSpec:
    minoritized_class_count: int = 50
    retention_fraction: float = 0.10
    rebalance_majority: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.retention_fraction <= 1.0:
            raise ValueError("retention_fraction must be in (0, 1]")
        if self.minoritized_class_count < 1:
            raise ValueError("need at least one minoritized class")


@dataclass(frozen=True)
class LabPatch:
    """CIELab luminance and yellow-channel values of one skin patch."""

    L: float
    b: float


def generate_synthetic(
    classes: int,
    per_class: int,
    feature_dim: int,
    attribute_correlation: float,
    cluster_spread: float,
    seed: int,
) -> Dataset:
    """Gaussian class clusters on the unit sphere with a binary attribute.

    Each class is an isotropic Gaussian (std = cluster_spread) around a
    random unit-norm center. The attribute is tied to the class half
    (classes >= C/2 link to attribute 1): each sample copies its class-linked
    value with probability `attribute_correlation`, otherwise flips a fair
    coin. Each attribute value additionally shifts the features along its
    own fixed random direction (the two directions are orthogonal) by
    cluster_spread, so the attribute is visible to a model and to an
    energy-pattern adversary.
    """
    if classes < 2 or per_class < 4 or feature_dim < 2:
        raise ValueError("need classes >= 2, per_class >= 4, feature_dim >= 2")
    if not 0.0 <= attribute_correlation <= 1.0:
        raise ValueError("attribute_correlation must be in [0, 1]")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, feature_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    raw = rng.standard_normal((2, feature_dim))
    v0 = raw[0] / np.linalg.norm(raw[0])
    v1 = raw[1] - (raw[1] @ v0) * v0
    attr_directions = np.stack([v0, v1 / np.linalg.norm(v1)])

    n = classes * per_class
    features = np.empty((n, feature_dim))
    class_labels = np.repeat(np.arange(classes), per_class)
    attributes = np.empty(n, dtype=np.int64)
    for c in range(classes):
        linked = 1 if c >= classes // 2 else 0
        block = slice(c * per_class, (c + 1) * per_class)
        use_link = rng.random(per_class) < attribute_correlation
        coins = rng.integers(0, 2, size=per_class)
        attributes[block] = np.where(use_link, linked, coins)
        noise = rng.standard_normal((per_class, feature_dim))
        shift = attr_directions[attributes[block]]
        features[block] = centers[c] + cluster_spread * (noise + shift)
    return Dataset(features, class_labels, attributes, np.full(n, TRAIN))


def split_per_class(ds: Dataset, train_fraction: float, seed: int) -> Dataset:
    """Tag floor(train_fraction * count) samples per class as train.

    Every class keeps at least one train and one test sample.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    split = np.full(ds.n, TEST, dtype="<U5")
    for c in np.unique(ds.class_labels):
        idx = np.flatnonzero(ds.class_labels == c)
        if idx.size < 2:
            raise ClassTooSmall(int(c))
        n_train = int(math.floor(train_fraction * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        chosen = rng.permutation(idx)[:n_train]
        split[chosen] = TRAIN
    return replace(ds, split=split)


def induce_imbalance(ds: Dataset, spec: ImbalanceSpec):
    """Subsample the train split of randomly chosen minoritized classes.

    Each minoritized class keeps ceil(retention_fraction * count) train
    samples. With rebalance_majority, majoritized-class train samples are
    duplicated (sampled with replacement) until the total train count
    matches the original. Test rows are never touched. Returns the new
    dataset and the sorted list of minoritized class ids.
    """
    rng = np.random.default_rng(spec.seed)
    all_classes = np.unique(ds.class_labels)
    if spec.minoritized_class_count >= all_classes.size:
        raise ValueError("minoritized_class_count must be < number of classes")
    minoritized = np.sort(rng.choice(all_classes, size=spec.minoritized_class_count, replace=False))
    minor_set = set(int(c) for c in minoritized)

    train_mask = ds.split == TRAIN
    keep = np.ones(ds.n, dtype=bool)
    for c in minoritized:
        idx = np.flatnonzero((ds.class_labels == c) & train_mask)
        retained = int(math.ceil(spec.retention_fraction * idx.size))
        if retained < 1:
            raise RetentionTooSmall(f"class {c} would retain 0 train samples")
        if retained == idx.size:
            continue
        chosen = np.sort(rng.choice(idx, size=retained, replace=False))
        drop = np.setdiff1d(idx, chosen)
        keep[drop] = False

    features = ds.features[keep]
    class_labels = ds.class_labels[keep]
    attributes = ds.attributes[keep]
    split = ds.split[keep]

    if spec.rebalance_majority:
        deficit = int(train_mask.sum()) - int(np.sum(split == TRAIN))
        pool = np.flatnonzero(
            (split == TRAIN) & ~np.isin(class_labels, minoritized)
        )
        if deficit > 0 and pool.size:
            dup = rng.choice(pool, size=deficit, replace=True)
            features = np.concatenate([features, features[dup]])
            class_labels = np.concatenate([class_labels, class_labels[dup]])
            attributes = np.concatenate([attributes, attributes[dup]])
            split = np.concatenate([split, split[dup]])

    out = Dataset(features, class_labels, attributes, split)
    return out, [int(c) for c in minoritized]


def partition_by_attribute(ds: Dataset, split: str) -> dict[int, np.ndarray]:
    """Partition one split's samples by attribute value.

    The returned index lists are positions *within* the split's sample
    order (dataset order filtered to the split), matching the row order of
    any embedding computed for that split.
    """
    idx = ds.indices(split)
    if idx.size == 0:
        raise ValueError(f"split {split!r} is empty")
    attrs = ds.attributes[idx]
    return {int(a): np.flatnonzero(attrs == a) for a in np.unique(attrs)}


ITA_CATEGORIES = ("I", "II", "III", "IV", "V", "VI")
ITA_THRESHOLDS = (50.0, 40.0, 30.0, 20.0, 10.0)


def ita_fitzpatrick(patches) -> tuple[float, str]:
    """Mean individual typology angle over skin patches plus its category.

    ITA_i = arctan((L_i - 50) / b_i) * 180 / pi, averaged over patches.
    Categories: >=50 I, [40,50) II, [30,40) III, [20,30) IV, [10,20) V,
    below 10 VI.
    """
    if not patches:
        raise ValueError("need at least one patch")
    angles = []
    for i, p in enumerate(patches):
        lum, yel = (p.L, p.b) if isinstance(p, LabPatch) else (p[0], p[1])
        if abs(yel) <= 1e-9:
            raise DegenerateYellowChannel(i)
        angles.append(math.degrees(math.atan((lum - 50.0) / yel)))
    mean_ita = float(np.mean(angles))
    for threshold, category in zip(ITA_THRESHOLDS, ITA_CATEGORIES):
        if mean_ita >= threshold:
            return mean_ita, category
    return mean_ita, "VI"


def _fmt(value: float) -> str:
    # repr of a float round-trips exactly in 64-bit
    return repr(float(value))


def write_dataset(path, ds: Dataset) -> None:
    """Write a dataset as UTF-8 CSV with full-precision decimal floats."""
    n_features = ds.features.shape[1]
    header = "id,split,class,attribute," + ",".join(f"f{j}" for j in range(n_features))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(ds.n):
            row = [str(i), ds.split[i], str(int(ds.class_labels[i])), str(int(ds.attributes[i]))]
            row.extend(_fmt(v) for v in ds.features[i])
            fh.write(",".join(row) + "\n")


def read_dataset(path) -> Dataset:
    """Read a dataset written by write_dataset. Round-trip is lossless."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0]:
        raise SchemaMismatch("empty file")
    header = lines[0].split(",")
    if header[:4] != ["id", "split", "class", "attribute"]:
        raise SchemaMismatch(f"bad header {lines[0]!r}")
    feature_names = header[4:]
    if feature_names != [f"f{j}" for j in range(len(feature_names))] or not feature_names:
        raise SchemaMismatch("feature columns must be f0..f{F-1}")
    features, classes, attrs, split = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ParseError(lineno, f"expected {len(header)} fields, got {len(parts)}")
        if parts[1] not in (TRAIN, TEST):
            raise ParseError(lineno, f"bad split tag {parts[1]!r}")
        try:
            classes.append(int(parts[2]))
            attrs.append(int(parts[3]))
            features.append([float(v) for v in parts[4:]])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from exc
        split.append(parts[1])
    if not features:
        raise SchemaMismatch("no data rows")
    return Dataset(np.array(features), np.array(classes), np.array(attrs), np.array(split))


def write_embeddings(path, emb, class_labels, attributes) -> None:
    """Write an embedding dump: id,class,attribute,e0..e{D-1}."""
    rows = emb.rows if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
    dim = rows.shape[1]
    header = "id,class,attribute," + ",".join(f"e{j}" for j in range(dim))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(rows.shape[0]):
            row = [str(i), str(int(class_labels[i])), str(int(attributes[i]))]
            row.extend(_fmt(v) for v in rows[i])
            fh.write(",".join(row) + "\n")


def read_embeddings(path):
    """Read an embedding dump; rows are validated unit-norm to 1e-6.

    Returns (EmbeddingMatrix, class_labels, attributes).
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0]:
        raise SchemaMismatch("empty file")
    header = lines[0].split(",")
    if header[:3] != ["id", "class", "attribute"]:
        raise SchemaMismatch(f"bad header {lines[0]!r}")
    dim = len(header) - 3
    if dim < 2 or header[3:] != [f"e{j}" for j in range(dim)]:
        raise SchemaMismatch("embedding columns must be e0..e{D-1}")
    rows, classes, attrs = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ParseError(lineno, f"expected {len(header)} fields, got {len(parts)}")
        try:
            classes.append(int(parts[1]))
            attrs.append(int(parts[2]))
            vec = np.array([float(v) for v in parts[3:]])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from exc
        if abs(np.linalg.norm(vec) - 1.0) > 1e-6:
            raise ParseError(lineno, "embedding row is not unit-norm")
        rows.append(vec)
    if not rows:
        raise SchemaMismatch("no data rows")
    return (
        EmbeddingMatrix(np.array(rows), normalized=False),
        np.array(classes, dtype=np.int64),
        np.array(attrs, dtype=np.int64),
    )
