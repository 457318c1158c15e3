"""The seven metric-learning objectives as differentiable functions of
batch embeddings, each returning the scalar value and exact gradients.

Conventions:
  - contrastive/triplet/margin average over the supplied tuples; the
    softmax-family losses average over batch rows.
  - hinge kinks take subgradient 0; distances of 0 contribute no gradient.
  - all losses except n-pair expect unit-norm rows; n-pair operates on the
    raw (pre-normalization) head output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOSS_KINDS = (
    "contrastive",
    "triplet",
    "margin",
    "npair",
    "multisimilarity",
    "proxy_nca",
    "arcface",
)

_TINY = 1e-12


class NoPositive(ValueError):
    """An n-pair anchor has no same-label batchmate."""


class MissingProxy(KeyError):
    def __init__(self, class_id: int):
        self.class_id = class_id
        super().__init__(f"no proxy for class {class_id}")


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters; defaults follow the standard settings."""

    kind: str = "margin"
    margin: float = 0.2            # contrastive/triplet/margin slack
    beta_init: float = 1.2         # margin loss learnable boundary
    beta_lr: float = 0.0005
    npair_nu: float = 0.005
    multisim_alpha: float = 2.0
    multisim_beta: float = 40.0
    multisim_lambda: float = 0.5
    multisim_eps: float = 0.1
    arcface_margin: float = 0.5
    arcface_scale: float = 16.0
    center_lr: float = 0.0005      # ArcFace centers and Proxy-NCA proxies

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")


@dataclass
class LossOutput:
    value: float
    grad_embeddings: np.ndarray
    grad_params: dict = field(default_factory=dict)


def _pair_diff(emb: np.ndarray, i: np.ndarray, j: np.ndarray):
    diff = emb[i] - emb[j]
    dist = np.linalg.norm(diff, axis=1)
    return diff, dist


def _accumulate_pair_grads(grad, i, j, coef, diff, dist):
    """Add coef * d(dist)/d(emb) for each pair; zero where dist ~ 0."""
    safe = np.where(dist > _TINY, dist, 1.0)
    unit = diff / safe[:, None]
    unit[dist <= _TINY] = 0.0
    contrib = coef[:, None] * unit
    np.add.at(grad, i, contrib)
    np.add.at(grad, j, -contrib)


def contrastive_loss(emb, labels, pairs, margin: float = 0.2) -> LossOutput:
    """Mean over pairs of d for positives and [margin - d]_+ for negatives."""
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    i, j = pairs[:, 0], pairs[:, 1]
    diff, dist = _pair_diff(emb, i, j)
    same = labels[i] == labels[j]
    hinge_active = (~same) & (margin - dist > 0.0)
    terms = np.where(same, dist, np.maximum(margin - dist, 0.0))
    m = len(pairs)
    value = float(terms.sum() / m)
    coef = np.where(same, 1.0, np.where(hinge_active, -1.0, 0.0)) / m
    grad = np.zeros_like(emb)
    _accumulate_pair_grads(grad, i, j, coef, diff, dist)
    return LossOutput(value, grad)


def triplet_loss(emb, triplets, margin: float = 0.2) -> LossOutput:
    """Mean over triplets of [d(a,p) - d(a,n) + margin]_+."""
    emb = np.asarray(emb, dtype=np.float64)
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    a, p, n = t[:, 0], t[:, 1], t[:, 2]
    diff_ap, d_ap = _pair_diff(emb, a, p)
    diff_an, d_an = _pair_diff(emb, a, n)
    active = d_ap - d_an + margin > 0.0
    m = len(t)
    value = float(np.maximum(d_ap - d_an + margin, 0.0).sum() / m)
    coef = active.astype(np.float64) / m
    grad = np.zeros_like(emb)
    _accumulate_pair_grads(grad, a, p, coef, diff_ap, d_ap)
    _accumulate_pair_grads(grad, a, n, -coef, diff_an, d_an)
    return LossOutput(value, grad)


def margin_loss(emb, labels, pairs, margin: float = 0.2, beta: float = 1.2) -> LossOutput:
    """Mean over pairs of [margin +/- (d - beta)]_+ with a learnable beta.

    Positives use [margin + (d - beta)]_+, negatives [margin - (d - beta)]_+.
    The beta gradient is returned under grad_params["beta"].
    """
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    i, j = pairs[:, 0], pairs[:, 1]
    diff, dist = _pair_diff(emb, i, j)
    same = labels[i] == labels[j]
    pos_term = margin + dist - beta
    neg_term = margin - dist + beta
    terms = np.where(same, np.maximum(pos_term, 0.0), np.maximum(neg_term, 0.0))
    active = np.where(same, pos_term > 0.0, neg_term > 0.0)
    m = len(pairs)
    value = float(terms.sum() / m)
    coef = np.where(same, 1.0, -1.0) * active / m
    grad = np.zeros_like(emb)
    _accumulate_pair_grads(grad, i, j, coef, diff, dist)
    grad_beta = float(np.sum(np.where(same, -1.0, 1.0) * active) / m)
    return LossOutput(value, grad, {"beta": grad_beta})


def npair_loss(raw_emb, labels, nu: float = 0.005) -> LossOutput:
    """log(1 + sum_n exp(a.n - a.p)) over anchor pairs, plus norm penalty.

    Operates on unnormalized embeddings; every row must have exactly one
    (or more) same-label batchmate, and the sum is over all ordered
    same-label pairs, normalized by the batch size.
    """
    emb = np.asarray(raw_emb, dtype=np.float64)
    labels = np.asarray(labels)
    b = emb.shape[0]
    sims = emb @ emb.T
    grad = (2.0 * nu / b) * emb
    value = float(nu / b * np.sum(emb * emb))
    for a in range(b):
        pos = np.flatnonzero((labels == labels[a]) & (np.arange(b) != a))
        if pos.size == 0:
            raise NoPositive(f"anchor {a} has no positive")
        neg = np.flatnonzero(labels != labels[a])
        for p in pos:
            if neg.size == 0:
                continue
            x = sims[a, neg] - sims[a, p]
            shift = max(0.0, float(x.max()))
            denom = np.exp(-shift) + np.exp(x - shift).sum()
            value += (shift + np.log(denom)) / b
            w = np.exp(x - shift) / denom          # softmax weight per negative
            grad[a] += (w[:, None] * (emb[neg] - emb[p])).sum(axis=0) / b
            np.add.at(grad, neg, (w[:, None] * emb[a]) / b)
            grad[p] -= w.sum() * emb[a] / b
    return LossOutput(value, grad)


def multisimilarity_loss(
    emb,
    labels,
    alpha: float = 2.0,
    beta: float = 40.0,
    lam: float = 0.5,
    eps: float = 0.1,
) -> LossOutput:
    """Per-anchor soft positive/negative pooling over mined cosine pairs.

    A positive pair is kept when its similarity is below the anchor's
    hardest-negative similarity plus eps; a negative pair when above the
    hardest-positive similarity minus eps. Anchors whose kept sets are
    empty contribute nothing.
    """
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    b = emb.shape[0]
    sims = emb @ emb.T
    value = 0.0
    grad_s = np.zeros_like(sims)   # dL/d sims, accumulated per anchor
    for i in range(b):
        others = np.arange(b) != i
        pos = np.flatnonzero((labels == labels[i]) & others)
        neg = np.flatnonzero(labels != labels[i])
        kept_pos = np.array([], dtype=np.int64)
        kept_neg = np.array([], dtype=np.int64)
        if pos.size and neg.size:
            max_neg = sims[i, neg].max()
            min_pos = sims[i, pos].min()
            kept_pos = pos[sims[i, pos] < max_neg + eps]
            kept_neg = neg[sims[i, neg] > min_pos - eps]
        if kept_pos.size:
            e = np.exp(-alpha * (sims[i, kept_pos] - lam))
            denom = 1.0 + e.sum()
            value += np.log(denom) / alpha / b
            grad_s[i, kept_pos] += -e / denom / b
        if kept_neg.size:
            e = np.exp(beta * (sims[i, kept_neg] - lam))
            denom = 1.0 + e.sum()
            value += np.log(denom) / beta / b
            grad_s[i, kept_neg] += e / denom / b
    grad = grad_s @ emb + grad_s.T @ emb
    return LossOutput(float(value), grad)


def proxy_nca_loss(emb, labels, proxies) -> LossOutput:
    """-log of the own-proxy softmax, positive excluded from the denominator.

    Uses Euclidean distances to the per-class proxies; may be negative.
    Proxy gradients are returned under grad_params["proxies"].
    """
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    proxies = np.asarray(proxies, dtype=np.float64)
    b = emb.shape[0]
    n_classes = proxies.shape[0]
    if labels.max() >= n_classes:
        raise MissingProxy(int(labels.max()))
    if n_classes < 2:
        raise MissingProxy(1)
    grad = np.zeros_like(emb)
    grad_proxies = np.zeros_like(proxies)
    value = 0.0
    for i in range(b):
        y = int(labels[i])
        diffs = emb[i] - proxies
        dists = np.linalg.norm(diffs, axis=1)
        neg_classes = np.array([c for c in range(n_classes) if c != y])
        x = -dists[neg_classes]
        shift = float(x.max())
        lse = shift + np.log(np.exp(x - shift).sum())
        value += (dists[y] + lse) / b
        if dists[y] > _TINY:
            unit_y = diffs[y] / dists[y]
            grad[i] += unit_y / b
            grad_proxies[y] -= unit_y / b
        w = np.exp(x - shift) / np.exp(x - shift).sum()
        for wc, c in zip(w, neg_classes):
            if dists[c] > _TINY:
                unit = diffs[c] / dists[c]
                grad[i] -= wc * unit / b
                grad_proxies[c] += wc * unit / b
    return LossOutput(float(value), grad, {"proxies": grad_proxies})


_COS_CLAMP = 1e-7


def arcface_loss(emb, labels, centers, margin: float = 0.5, scale: float = 16.0) -> LossOutput:
    """Additive angular margin between embeddings and class centers.

    Negative logits come from batch co-members with a different label, one
    term per co-member. Center gradients are under grad_params["centers"].
    """
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    centers = np.asarray(centers, dtype=np.float64)
    b = emb.shape[0]
    if labels.max() >= centers.shape[0]:
        raise MissingProxy(int(labels.max()))
    cos_margin, sin_margin = np.cos(margin), np.sin(margin)
    grad = np.zeros_like(emb)
    grad_centers = np.zeros_like(centers)
    value = 0.0
    for i in range(b):
        y = int(labels[i])
        raw = float(emb[i] @ centers[y])
        clamped = raw < -1.0 + _COS_CLAMP or raw > 1.0 - _COS_CLAMP
        cos_y = float(np.clip(raw, -1.0 + _COS_CLAMP, 1.0 - _COS_CLAMP))
        sin_y = np.sqrt(1.0 - cos_y * cos_y)
        pos_logit = scale * (cos_y * cos_margin - sin_y * sin_margin)
        neg = np.flatnonzero(labels != labels[i])
        neg_logits = scale * (centers[labels[neg]] @ emb[i])
        logits = np.concatenate([[pos_logit], neg_logits])
        shift = logits.max()
        exps = np.exp(logits - shift)
        probs = exps / exps.sum()
        value += (-pos_logit + shift + np.log(exps.sum())) / b
        # d loss_i / d logit: softmax probs, minus 1 at the true slot
        d_pos = (probs[0] - 1.0) / b
        if not clamped:
            dcos = scale * (cos_margin + cos_y * sin_margin / max(sin_y, _TINY))
            grad[i] += d_pos * dcos * centers[y]
            grad_centers[y] += d_pos * dcos * emb[i]
        for slot, j in enumerate(neg, start=1):
            d_neg = probs[slot] / b
            cls = int(labels[j])
            grad[i] += d_neg * scale * centers[cls]
            grad_centers[cls] += d_neg * scale * emb[i]
    return LossOutput(float(value), grad, {"centers": grad_centers})


def pairs_from_triplets(triplets) -> np.ndarray:
    """Each mined (a, p, n) yields the pairs (a, p) and (a, n)."""
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    return np.concatenate([t[:, [0, 1]], t[:, [0, 2]]], axis=0)


def evaluate_loss(
    cfg: LossConfig,
    emb,
    raw_emb,
    labels,
    triplets,
    params: dict,
) -> LossOutput:
    """Dispatch on cfg.kind.

    `params` supplies the learnable loss parameters ("beta", "proxies" or
    "centers") when the loss has any. For n-pair the gradient applies to
    the raw (pre-normalization) embeddings; for every other loss it applies
    to the normalized embeddings.
    """
    if cfg.kind == "contrastive":
        return contrastive_loss(emb, labels, pairs_from_triplets(triplets), cfg.margin)
    if cfg.kind == "triplet":
        return triplet_loss(emb, triplets, cfg.margin)
    if cfg.kind == "margin":
        return margin_loss(emb, labels, pairs_from_triplets(triplets), cfg.margin, params["beta"])
    if cfg.kind == "npair":
        return npair_loss(raw_emb, labels, cfg.npair_nu)
    if cfg.kind == "multisimilarity":
        return multisimilarity_loss(
            emb, labels, cfg.multisim_alpha, cfg.multisim_beta,
            cfg.multisim_lambda, cfg.multisim_eps,
        )
    if cfg.kind == "proxy_nca":
        return proxy_nca_loss(emb, labels, params["proxies"])
    return arcface_loss(emb, labels, params["centers"], cfg.arcface_margin, cfg.arcface_scale)
