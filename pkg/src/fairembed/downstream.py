"""Classifier probes trained on frozen embeddings, and per-subgroup macro
classification scores for the bias-propagation analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_rows


class SingleClass(ValueError):
    """Probe training data contains fewer than two classes."""


class DimensionMismatch(ValueError):
    pass


@dataclass
class LogisticModel:
    weights: np.ndarray  # (C, D)
    bias: np.ndarray     # (C,)
    l2: float


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _ce_loss_and_grad(x, onehot, weights, bias, l2):
    n = x.shape[0]
    probs = _softmax(x @ weights.T + bias)
    ce = -np.sum(onehot * np.log(np.maximum(probs, 1e-300))) / n
    loss = ce + 0.5 * l2 * float(np.sum(weights * weights))
    delta = (probs - onehot) / n
    grad_w = delta.T @ x + l2 * weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


def fit_logistic(
    emb,
    class_labels,
    l2: float = 1e-3,
    epochs: int = 500,
    lr: float = 1.0,
    seed: int = 0,
) -> LogisticModel:
    """Multinomial cross-entropy probe via full-batch gradient descent.

    The step size is halved whenever a step would increase the loss, so the
    training loss is non-increasing. l2 penalizes the weights only; the
    bias is free to learn class priors.
    """
    x = as_rows(emb)
    labels = np.asarray(class_labels)
    n_classes = int(labels.max()) + 1
    if np.unique(labels).size < 2:
        raise SingleClass("need >= 2 classes to fit a probe")
    rng = np.random.default_rng(seed)
    weights = 0.01 * rng.standard_normal((n_classes, x.shape[1]))
    bias = np.zeros(n_classes)
    onehot = np.zeros((x.shape[0], n_classes))
    onehot[np.arange(x.shape[0]), labels] = 1.0

    loss, grad_w, grad_b = _ce_loss_and_grad(x, onehot, weights, bias, l2)
    for _ in range(epochs):
        while lr > 1e-12:
            new_w = weights - lr * grad_w
            new_b = bias - lr * grad_b
            new_loss, new_gw, new_gb = _ce_loss_and_grad(x, onehot, new_w, new_b, l2)
            if new_loss <= loss:
                break
            lr *= 0.5
        else:
            break
        weights, bias = new_w, new_b
        loss, grad_w, grad_b = new_loss, new_gw, new_gb
    return LogisticModel(weights, bias, l2)


def predict(model: LogisticModel, emb):
    """Argmax class per row plus the softmax probabilities; ties resolve to
    the lower class id."""
    x = as_rows(emb)
    if x.shape[1] != model.weights.shape[1]:
        raise DimensionMismatch(
            f"model expects D={model.weights.shape[1]}, got {x.shape[1]}")
    probs = _softmax(x @ model.weights.T + model.bias)
    return np.argmax(probs, axis=1), probs


@dataclass
class NearestCentroid:
    centroids: np.ndarray  # (C, D), unit rows
    classes: np.ndarray    # (C,) class ids


def nearest_centroid(train_emb, class_labels) -> NearestCentroid:
    """Per-class mean embedding, renormalized to the sphere."""
    x = as_rows(train_emb)
    labels = np.asarray(class_labels)
    classes = np.unique(labels)
    centroids = np.stack([x[labels == c].mean(axis=0) for c in classes])
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    return NearestCentroid(centroids, classes)


def classify_nearest_centroid(model: NearestCentroid, emb) -> np.ndarray:
    """Label of the closest centroid (Euclidean); ties to lower class id."""
    x = as_rows(emb)
    sq = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ model.centroids.T
        + np.sum(model.centroids * model.centroids, axis=1)[None, :]
    )
    return model.classes[np.argmin(sq, axis=1)]


def macro_scores_by_subgroup(
    true_labels,
    predicted_labels,
    attributes,
    n_classes: int | None = None,
) -> dict:
    """Per-attribute-value macro precision, macro recall and accuracy.

    Macro means divide by the global class count; classes absent from a
    subgroup (and any 0/0 ratio) contribute 0.
    """
    y = np.asarray(true_labels)
    y_hat = np.asarray(predicted_labels)
    attrs = np.asarray(attributes)
    if y.shape != y_hat.shape or y.shape != attrs.shape:
        raise ValueError("label arrays must share length")
    if n_classes is None:
        n_classes = int(max(y.max(), y_hat.max())) + 1
    scores = {}
    for a in np.unique(attrs):
        mask = attrs == a
        ya, pa = y[mask], y_hat[mask]
        precision = recall = 0.0
        for c in range(n_classes):
            tp = float(np.sum((ya == c) & (pa == c)))
            fp = float(np.sum((ya != c) & (pa == c)))
            fn = float(np.sum((ya == c) & (pa != c)))
            if tp + fp > 0:
                precision += tp / (tp + fp)
            if tp + fn > 0:
                recall += tp / (tp + fn)
        scores[int(a)] = {
            "precision": precision / n_classes,
            "recall": recall / n_classes,
            "accuracy": float(np.mean(ya == pa)),
        }
    return scores
