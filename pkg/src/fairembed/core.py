"""Dense vector/matrix primitives: hypersphere normalization, pairwise
distances, k-nearest neighbours, singular-value spectra and k-means.

Everything here is a pure function of its inputs, computed in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DISTANCE_MODES = ("euclidean", "squared-euclidean", "cosine-similarity")

SPECTRUM_FLOOR = 1e-12


class ZeroRow(ValueError):
    """A row of the input matrix has (numerically) zero norm."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"row {index} has norm below 1e-12")


class KTooLarge(ValueError):
    """Requested more neighbours than there are candidate points."""


class NumericalFailure(RuntimeError):
    """The underlying eigenvalue iteration did not converge."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x D matrix of embedding vectors, optionally unit-norm per row."""

    rows: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        if rows.ndim != 2:
            raise ValueError("embedding matrix must be 2-D")
        n, dim = rows.shape
        if n < 1 or dim < 2:
            raise ValueError(f"need n >= 1 and D >= 2, got {rows.shape}")
        if self.normalized:
            norms = np.linalg.norm(rows, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-9):
                raise ValueError("normalized flag set but rows are not unit-norm")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric pairwise distance (or similarity) matrix."""

    entries: np.ndarray
    mode: str

    def __post_init__(self):
        if self.mode not in DISTANCE_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class SpectralProfile:
    """Descending singular values plus their sum-normalized distribution."""

    singular_values: np.ndarray
    normalized_distribution: np.ndarray


def as_rows(emb) -> np.ndarray:
    """Accept an EmbeddingMatrix or a raw array; return the (n, D) array."""
    if isinstance(emb, EmbeddingMatrix):
        return emb.rows
    return np.asarray(emb, dtype=np.float64)


def normalize_to_hypersphere(matrix) -> EmbeddingMatrix:
    """Scale every row to unit Euclidean norm.

    Raises ZeroRow for any row whose norm is below 1e-12.
    """
    rows = np.asarray(matrix, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    norms = np.linalg.norm(rows, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise ZeroRow(int(bad[0]))
    return EmbeddingMatrix(rows / norms[:, None], normalized=True)


def _symmetrize(g: np.ndarray) -> np.ndarray:
    # mirror the upper triangle so the result is exactly symmetric
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


def pairwise_distances(emb, mode: str = "euclidean") -> DistanceMatrix:
    """All-pairs distances between rows under the chosen metric."""
    if mode not in DISTANCE_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    rows = as_rows(emb)
    gram = _symmetrize(rows @ rows.T)
    if mode == "cosine-similarity":
        norms = np.linalg.norm(rows, axis=1)
        sim = gram / np.outer(norms, norms)
        np.clip(sim, -1.0, 1.0, out=sim)
        return DistanceMatrix(sim, mode)
    sq = np.diag(gram)[:, None] + np.diag(gram)[None, :] - 2.0 * gram
    np.maximum(sq, 0.0, out=sq)
    np.fill_diagonal(sq, 0.0)
    if isinstance(emb, EmbeddingMatrix) and emb.normalized:
        np.minimum(sq, 4.0, out=sq)  # unit rows: max distance is the antipode
    if mode == "squared-euclidean":
        return DistanceMatrix(sq, mode)
    return DistanceMatrix(np.sqrt(sq), mode)


def knn_indices(dist: DistanceMatrix, k: int, exclude_self: bool = True) -> np.ndarray:
    """Per-row indices of the k smallest distances, ties to the lower index.

    Returns an (n, k) int array. Self is masked out when exclude_self.
    """
    if dist.mode == "cosine-similarity":
        raise ValueError("knn_indices needs a distance mode, not a similarity")
    d = dist.entries
    n = d.shape[0]
    if k >= n:
        raise KTooLarge(f"k={k} with only {n} points")
    if k < 1:
        raise ValueError("k must be >= 1")
    if exclude_self:
        d = d.copy()
        np.fill_diagonal(d, np.inf)
    # stable sort keeps the lower index first among ties
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k]


def singular_values(matrix) -> SpectralProfile:
    """Singular values of the (uncentered) matrix, descending.

    Computed via the eigenvalues of the D x D Gram matrix. When n < D the
    trailing D - n values are exact zeros. The normalized distribution is
    floored at 1e-12 before renormalization so downstream KL terms stay
    finite for rank-deficient inputs.
    """
    rows = as_rows(matrix)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("expected a non-empty 2-D matrix")
    n, dim = rows.shape
    gram = _symmetrize(rows.T @ rows)
    try:
        eigs = np.linalg.eigvalsh(gram)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc
    eigs = np.maximum(eigs[::-1], 0.0)
    values = np.sqrt(eigs)
    values[min(n, dim):] = 0.0
    floored = np.maximum(values, SPECTRUM_FLOOR)
    return SpectralProfile(values, floored / floored.sum())


def kmeans(
    emb,
    k: int,
    seed: int,
    max_iter: int = 300,
    return_history: bool = False,
):
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic given the seed; stops when assignments stop changing or
    after max_iter rounds. Empty clusters are re-seeded to the point
    farthest from its current centroid.
    """
    x = as_rows(emb)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, np.sum((x - centers[j]) ** 2, axis=1))

    labels = np.full(n, -1, dtype=np.int64)
    history = []
    for _ in range(max_iter):
        sq = (
            np.sum(x * x, axis=1)[:, None]
            - 2.0 * (x @ centers.T)
            + np.sum(centers * centers, axis=1)[None, :]
        )
        new_labels = np.argmin(sq, axis=1)
        point_cost = sq[np.arange(n), new_labels]
        for j in range(k):
            if not np.any(new_labels == j):
                far = int(np.argmax(point_cost))
                centers[j] = x[far]
                new_labels[far] = j
                point_cost[far] = 0.0
        history.append(float(np.maximum(point_cost, 0.0).sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if np.any(members):  # a reseed can leave another cluster empty
                centers[j] = x[members].mean(axis=0)
    if return_history:
        return labels, history
    return labels
