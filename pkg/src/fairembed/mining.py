"""Samples-per-class batch construction and triplet mining.

Mining functions operate on one batch: `labels` is the batch's label
vector (class or attribute, depending on what the triplets are for) and
the returned triplets hold positions 0..b-1 into the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_rows
from .data import TRAIN, Dataset

STRATEGIES = ("random", "semihard", "distance_weighted")


class InfeasiblePlan(ValueError):
    """No class has at least two train samples to batch from."""


class NoNegativeInBatch(ValueError):
    """A batch contains a single label value, so no negatives exist."""


@dataclass(frozen=True)
class MiningConfig:
    strategy: str = "distance_weighted"
    semihard_slack: float = 0.2
    dw_lambda: float = 0.5
    dw_distance_clip: float = 1.4
    label_source: str = "class"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.dw_distance_clip <= 2.0:
            raise ValueError("dw_distance_clip must be in (0, 2]")
        if self.label_source not in ("class", "attribute"):
            raise ValueError("label_source must be 'class' or 'attribute'")


@dataclass
class BatchPlan:
    batch_size: int
    samples_per_class: int
    batches: list = field(default_factory=list)  # list of int arrays of sample ids


def build_spc_batches(ds: Dataset, batch_size: int, samples_per_class: int, seed: int) -> BatchPlan:
    """Plan one epoch of SPC-n batches over the train split.

    Every class's train samples are shuffled and chunked into groups of n
    (short chunks padded by resampling with replacement), then chunks are
    packed into batches of b/n distinct classes. Every train sample appears
    at least once per epoch; the final batches may be partial.
    """
    if batch_size % samples_per_class != 0:
        raise ValueError("samples_per_class must divide batch_size")
    rng = np.random.default_rng(seed)
    train_idx = ds.indices(TRAIN)
    labels = ds.class_labels[train_idx]
    classes = np.unique(labels)
    if not any(np.sum(labels == c) >= 2 for c in classes):
        raise InfeasiblePlan("no class has >= 2 train samples")

    chunks: dict[int, list] = {}
    for c in classes:
        idx = train_idx[labels == c]
        perm = rng.permutation(idx)
        cls_chunks = []
        for start in range(0, perm.size, samples_per_class):
            chunk = perm[start:start + samples_per_class]
            if chunk.size < samples_per_class:
                pad = rng.choice(idx, size=samples_per_class - chunk.size, replace=True)
                chunk = np.concatenate([chunk, pad])
            cls_chunks.append(chunk)
        chunks[int(c)] = cls_chunks

    per_batch = batch_size // samples_per_class
    batches = []
    remaining = sorted(chunks)
    while remaining:
        take = min(per_batch, len(remaining))
        picked = rng.choice(len(remaining), size=take, replace=False)
        batch_parts = []
        for slot in sorted(picked):
            c = remaining[slot]
            batch_parts.append(chunks[c].pop())
        batches.append(np.concatenate(batch_parts))
        remaining = [c for c in remaining if chunks[c]]
    return BatchPlan(batch_size, samples_per_class, batches)


def _positive_sets(labels: np.ndarray):
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise NoNegativeInBatch("batch holds a single label value")
    positives = [np.flatnonzero((labels == labels[a]) & (np.arange(labels.size) != a))
                 for a in range(labels.size)]
    negatives = [np.flatnonzero(labels != labels[a]) for a in range(labels.size)]
    return positives, negatives


def mine_random(labels, seed: int) -> np.ndarray:
    """One uniformly drawn (anchor, positive, negative) triplet per anchor."""
    rng = np.random.default_rng(seed)
    positives, negatives = _positive_sets(labels)
    triplets = []
    for a in range(len(positives)):
        if positives[a].size == 0:
            continue
        p = rng.choice(positives[a])
        n = rng.choice(negatives[a])
        triplets.append((a, p, n))
    return np.array(triplets, dtype=np.int64)


def mine_semihard(labels, emb, slack: float, seed: int) -> np.ndarray:
    """Negatives drawn from the window d(a,p) < d(a,n) < d(a,p) + slack.

    Falls back to a uniform negative when the window is empty.
    """
    rows = as_rows(emb)
    rng = np.random.default_rng(seed)
    positives, negatives = _positive_sets(labels)
    triplets = []
    for a in range(len(positives)):
        if positives[a].size == 0:
            continue
        p = rng.choice(positives[a])
        dists = np.linalg.norm(rows - rows[a], axis=1)
        d_ap = dists[p]
        window = negatives[a][(dists[negatives[a]] > d_ap)
                              & (dists[negatives[a]] < d_ap + slack)]
        pool = window if window.size else negatives[a]
        n = rng.choice(pool)
        triplets.append((a, p, n))
    return np.array(triplets, dtype=np.int64)


def dw_density(d, dim: int):
    """Unnormalized pair-distance density on the unit hypersphere.

    q(d) = d^(D-2) * (1 - d^2/4)^((D-3)/2) for d in (0, 2), else 0.
    """
    if dim < 3:
        raise ValueError("distance-weighted density needs D >= 3")
    d = np.asarray(d, dtype=np.float64)
    inside = (d > 0.0) & (d < 2.0)
    safe = np.where(inside, d, 1.0)
    q = safe ** (dim - 2) * (1.0 - 0.25 * safe * safe) ** ((dim - 3) / 2.0)
    out = np.where(inside, q, 0.0)
    return float(out) if out.ndim == 0 else out


def _dw_weights(dists: np.ndarray, dim: int, lam: float, clip: float) -> np.ndarray:
    clipped = np.minimum(dists, clip)
    q = dw_density(clipped, dim)
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    with np.errstate(divide="ignore"):
        inv = np.where(q > 0.0, 1.0 / np.maximum(q, 1e-300), np.inf)
    return np.minimum(lam, inv)


def mine_distance_weighted(labels, emb, lam: float, clip: float, seed: int) -> np.ndarray:
    """Negatives sampled with probability proportional to min(lam, 1/q(d)).

    Distances are clipped at `clip` before the density evaluation.
    """
    rows = as_rows(emb)
    dim = rows.shape[1]
    rng = np.random.default_rng(seed)
    positives, negatives = _positive_sets(labels)
    triplets = []
    for a in range(len(positives)):
        if positives[a].size == 0:
            continue
        p = rng.choice(positives[a])
        dists = np.linalg.norm(rows[negatives[a]] - rows[a], axis=1)
        weights = _dw_weights(dists, dim, lam, clip)
        total = weights.sum()
        if total <= 0.0:
            n = rng.choice(negatives[a])
        else:
            n = rng.choice(negatives[a], p=weights / total)
        triplets.append((a, p, n))
    return np.array(triplets, dtype=np.int64)


def mine(config: MiningConfig, labels, emb, seed: int) -> np.ndarray:
    """Dispatch to the configured strategy."""
    if config.strategy == "random":
        return mine_random(labels, seed)
    if config.strategy == "semihard":
        return mine_semihard(labels, emb, config.semihard_slack, seed)
    return mine_distance_weighted(labels, emb, config.dw_lambda, config.dw_distance_clip, seed)
