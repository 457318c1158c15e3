"""Embedding-space performance measures: recall@k, NMI over k-means
clusters, spectral uniformity (KL from the uniform spectrum), and
alignment expectations over positive/negative pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    KTooLarge,
    SpectralProfile,
    as_rows,
    kmeans,
    knn_indices,
    pairwise_distances,
    singular_values,
)


class EmptyPairSet(ValueError):
    def __init__(self, which: str):
        self.which = which
        super().__init__(f"no {which} pairs available")


@dataclass(frozen=True)
class PairIndex:
    """Positive and negative index pairs, optionally attribute-filtered."""

    positives: np.ndarray  # (m, 2) int
    negatives: np.ndarray  # (m', 2) int
    attribute_value: int | None = None


@dataclass
class MetricReport:
    recall_at_k: dict
    nmi: float
    u_kl: float
    alignment_pos: float
    alignment_neg: float


def recall_at_k(emb, class_labels, k: int, restrict_to=None) -> float:
    """Fraction of query points with a same-class point among their k
    nearest neighbours, neighbours searched over the full set."""
    rows = as_rows(emb)
    labels = np.asarray(class_labels)
    if k >= rows.shape[0]:
        raise KTooLarge(f"k={k} with n={rows.shape[0]}")
    dist = pairwise_distances(emb, "squared-euclidean")
    neighbours = knn_indices(dist, k, exclude_self=True)
    hits = np.any(labels[neighbours] == labels[:, None], axis=1)
    if restrict_to is not None:
        hits = hits[np.asarray(restrict_to)]
    return float(hits.mean())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(cluster_labels, class_labels, restrict_to=None, doubled: bool = True) -> float:
    """Normalized mutual information between clusters and classes.

    doubled=True uses 2I/(H+H); doubled=False the plain I/(H+H) variant.
    Entropies are in nats; a 0/0 ratio evaluates to 0. With restrict_to,
    the score is computed on that subset of points (the clustering itself
    should already cover the full set).
    """
    clusters = np.asarray(cluster_labels)
    classes = np.asarray(class_labels)
    if clusters.shape != classes.shape:
        raise ValueError("label arrays must share length")
    if restrict_to is not None:
        idx = np.asarray(restrict_to)
        clusters, classes = clusters[idx], classes[idx]
    cl_ids, cl_inv = np.unique(clusters, return_inverse=True)
    y_ids, y_inv = np.unique(classes, return_inverse=True)
    table = np.zeros((y_ids.size, cl_ids.size))
    np.add.at(table, (y_inv, cl_inv), 1.0)
    n = table.sum()
    h_y = _entropy(table.sum(axis=1))
    h_c = _entropy(table.sum(axis=0))
    p_joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    mask = p_joint > 0
    mi = float((p_joint[mask] * np.log(p_joint[mask] / outer[mask])).sum())
    denom = h_y + h_c
    if denom <= 0.0:
        return 0.0
    return (2.0 * mi if doubled else mi) / denom


def nmi_from_embedding(emb, class_labels, seed: int = 0,
                       restrict_to=None, doubled: bool = True) -> float:
    """Cluster the full embedding with k-means (k = distinct class count)
    and score NMI, optionally restricted to a query subset."""
    labels = np.asarray(class_labels)
    k = np.unique(labels).size
    clusters = kmeans(emb, k, seed)
    return nmi(clusters, labels, restrict_to=restrict_to, doubled=doubled)


def u_kl(emb, restrict_to=None) -> float:
    """KL divergence from the uniform distribution to the normalized
    singular-value spectrum; lower means variance spread more evenly."""
    rows = as_rows(emb)
    if restrict_to is not None:
        rows = rows[np.asarray(restrict_to)]
    if rows.shape[0] < 1:
        raise ValueError("need at least one row")
    profile = singular_values(rows)
    return spectrum_kl(profile)


def spectrum_kl(profile: SpectralProfile) -> float:
    dim = profile.normalized_distribution.size
    uniform = 1.0 / dim
    return float(np.sum(uniform * np.log(uniform / profile.normalized_distribution)))


def build_pair_index(
    class_labels,
    attributes=None,
    attribute_value: int | None = None,
    max_pairs: int | None = None,
    seed: int = 0,
) -> PairIndex:
    """Enumerate unordered positive/negative pairs, optionally keeping only
    pairs where at least one endpoint carries `attribute_value`, and
    uniformly subsampling each list beyond `max_pairs`."""
    labels = np.asarray(class_labels)
    n = labels.size
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    if attribute_value is not None:
        attrs = np.asarray(attributes)
        touched = (attrs[iu] == attribute_value) | (attrs[ju] == attribute_value)
        iu, ju, same = iu[touched], ju[touched], same[touched]
    positives = np.stack([iu[same], ju[same]], axis=1)
    negatives = np.stack([iu[~same], ju[~same]], axis=1)
    if max_pairs is not None:
        rng = np.random.default_rng(seed)
        if len(positives) > max_pairs:
            positives = positives[rng.choice(len(positives), max_pairs, replace=False)]
        if len(negatives) > max_pairs:
            negatives = negatives[rng.choice(len(negatives), max_pairs, replace=False)]
    return PairIndex(positives, negatives, attribute_value)


def alignment_expectations(emb, pair_index: PairIndex) -> tuple[float, float]:
    """Mean squared Euclidean distance over positive and negative pairs."""
    rows = as_rows(emb)
    if len(pair_index.positives) == 0:
        raise EmptyPairSet("positive")
    if len(pair_index.negatives) == 0:
        raise EmptyPairSet("negative")

    def mean_sq(pairs):
        diff = rows[pairs[:, 0]] - rows[pairs[:, 1]]
        return float(np.mean(np.sum(diff * diff, axis=1)))

    return mean_sq(pair_index.positives), mean_sq(pair_index.negatives)


def metric_report(emb, class_labels, ks=(1,), seed: int = 0,
                  max_pairs: int | None = 200_000) -> MetricReport:
    """All overall metrics for one embedding."""
    labels = np.asarray(class_labels)
    recalls = {k: recall_at_k(emb, labels, k) for k in ks}
    pair_index = build_pair_index(labels, max_pairs=max_pairs, seed=seed)
    pos, neg = alignment_expectations(emb, pair_index)
    return MetricReport(
        recall_at_k=recalls,
        nmi=nmi_from_embedding(emb, labels, seed=seed),
        u_kl=u_kl(emb),
        alignment_pos=pos,
        alignment_neg=neg,
    )
