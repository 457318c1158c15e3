"""Trainable embedding network (MLP trunk + normalized linear heads) with
manual backpropagation, Adam with learning-rate groups, gradient reversal,
the adversarial de-correlation term, and the full training loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import EmbeddingMatrix
from .data import TRAIN, Dataset
from .losses import LossConfig, evaluate_loss
from .mining import MiningConfig, build_spc_batches, mine

# seed-stream offsets; every rng in a run derives from (seed, stream, ...)
STREAM_INIT = 10
STREAM_PLAN = 11
STREAM_MINE_TARGET = 12
STREAM_MINE_SENSITIVE = 13
STREAM_PROBE = 14
STREAM_LOSS_PARAMS = 15

SEED_STREAMS = {
    "init": STREAM_INIT,
    "batch_plan": STREAM_PLAN,
    "mine_target": STREAM_MINE_TARGET,
    "mine_sensitive": STREAM_MINE_SENSITIVE,
    "probe_adversary": STREAM_PROBE,
    "loss_params": STREAM_LOSS_PARAMS,
}


class DimensionMismatch(ValueError):
    pass


class StaleCache(RuntimeError):
    """backward() was handed a cache from before a parameter update."""


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for {name}")


def derived_seed(*keys) -> int:
    """Stable child seed from a tuple of integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def gradient_reversal(x):
    """Identity in the forward direction."""
    return x


def gradient_reversal_backward(grad):
    """Negate the upstream gradient; the backward half of the reversal."""
    return -grad


def _he_uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class ModelSpec:
    in_dim: int
    hidden: tuple = (64, 32)
    embed_dim: int = 16
    sa_dim: int = 0        # sensitive-attribute head width; 0 = no second head
    seed: int = 0


# fixed per-parameter init stream ids so adding a head never shifts the
# initialization of parameters that both model variants share
_PARAM_IDS = {
    "trunk.w0": 0, "trunk.b0": 1, "trunk.w1": 2, "trunk.b1": 3,
    "head_targ.w": 4, "head_targ.b": 5,
    "head_sa.w": 6, "head_sa.b": 7,
    "adv.w0": 8, "adv.b0": 9, "adv.w1": 16, "adv.b1": 17,
    "loss_targ.beta": 20, "loss_targ.proxies": 21, "loss_targ.centers": 22,
    "loss_sa.beta": 23, "loss_sa.proxies": 24, "loss_sa.centers": 25,
}


def _init_rng(seed: int, name: str):
    return np.random.default_rng([seed, STREAM_INIT, _PARAM_IDS[name]])


def _normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / norms, norms


def _normalization_backward(grad_phi, phi, norms):
    # project out the radial component: (g - (g . phi) phi) / ||z||
    radial = np.sum(grad_phi * phi, axis=1, keepdims=True)
    return (grad_phi - radial * phi) / norms


class EmbeddingModel:
    """Two-layer tanh trunk with one or two unit-normalized linear heads."""

    def __init__(self, spec: ModelSpec):
        if len(spec.hidden) != 2:
            raise ValueError("trunk expects exactly two hidden widths")
        self.spec = spec
        h0, h1 = spec.hidden
        self.params: dict[str, np.ndarray] = {}
        self._version = 0
        for name, fan_in, shape in (
            ("trunk.w0", spec.in_dim, (spec.in_dim, h0)),
            ("trunk.w1", h0, (h0, h1)),
            ("head_targ.w", h1, (h1, spec.embed_dim)),
        ):
            self.params[name] = _he_uniform(_init_rng(spec.seed, name), fan_in, shape)
        self.params["trunk.b0"] = np.zeros(h0)
        self.params["trunk.b1"] = np.zeros(h1)
        self.params["head_targ.b"] = np.zeros(spec.embed_dim)
        if spec.sa_dim:
            self.params["head_sa.w"] = _he_uniform(
                _init_rng(spec.seed, "head_sa.w"), h1, (h1, spec.sa_dim))
            self.params["head_sa.b"] = np.zeros(spec.sa_dim)

    @property
    def has_sa_head(self) -> bool:
        return "head_sa.w" in self.params

    def mark_updated(self):
        self._version += 1

    def forward(self, x) -> dict:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise DimensionMismatch(
                f"expected (*, {self.spec.in_dim}) inputs, got {x.shape}")
        p = self.params
        h0 = np.tanh(x @ p["trunk.w0"] + p["trunk.b0"])
        h1 = np.tanh(h0 @ p["trunk.w1"] + p["trunk.b1"])
        z_targ = h1 @ p["head_targ.w"] + p["head_targ.b"]
        phi_targ, norm_targ = _normalize_rows(z_targ)
        cache = {
            "x": x, "h0": h0, "h1": h1,
            "z_targ": z_targ, "phi_targ": phi_targ, "norm_targ": norm_targ,
            "version": self._version,
        }
        if self.has_sa_head:
            z_sa = h1 @ p["head_sa.w"] + p["head_sa.b"]
            phi_sa, norm_sa = _normalize_rows(z_sa)
            cache.update(z_sa=z_sa, phi_sa=phi_sa, norm_sa=norm_sa)
        return cache

    def backward(self, cache, grad_phi_targ=None, grad_raw_targ=None, grad_phi_sa=None):
        """Chain rule back to every parameter and to the inputs.

        grad_phi_* apply at the normalized head outputs, grad_raw_targ at
        the pre-normalization target head output (used by the n-pair loss).
        Returns (param gradient dict, input gradient).
        """
        if cache.get("version") != self._version:
            raise StaleCache("forward cache predates a parameter update")
        p = self.params
        b = cache["x"].shape[0]
        g_z_targ = np.zeros_like(cache["z_targ"])
        if grad_phi_targ is not None:
            g_z_targ += _normalization_backward(
                grad_phi_targ, cache["phi_targ"], cache["norm_targ"])
        if grad_raw_targ is not None:
            g_z_targ += grad_raw_targ
        grads = {
            "head_targ.w": cache["h1"].T @ g_z_targ,
            "head_targ.b": g_z_targ.sum(axis=0),
        }
        g_h1 = g_z_targ @ p["head_targ.w"].T
        if self.has_sa_head:
            if grad_phi_sa is None:
                g_z_sa = np.zeros_like(cache["z_sa"])
            else:
                g_z_sa = _normalization_backward(
                    grad_phi_sa, cache["phi_sa"], cache["norm_sa"])
            grads["head_sa.w"] = cache["h1"].T @ g_z_sa
            grads["head_sa.b"] = g_z_sa.sum(axis=0)
            g_h1 += g_z_sa @ p["head_sa.w"].T
        g_a1 = g_h1 * (1.0 - cache["h1"] ** 2)
        grads["trunk.w1"] = cache["h0"].T @ g_a1
        grads["trunk.b1"] = g_a1.sum(axis=0)
        g_h0 = g_a1 @ p["trunk.w1"].T
        g_a0 = g_h0 * (1.0 - cache["h0"] ** 2)
        grads["trunk.w0"] = cache["x"].T @ g_a0
        grads["trunk.b0"] = g_a0.sum(axis=0)
        grad_x = g_a0 @ p["trunk.w0"].T
        assert b == grad_x.shape[0]
        return grads, grad_x

    def embed(self, x) -> EmbeddingMatrix:
        return EmbeddingMatrix(self.forward(x)["phi_targ"], normalized=True)


class AdversaryMLP:
    """One-hidden-layer tanh MLP mapping the attribute head's output to a
    vector the size of the target head's output."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, seed: int):
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        self.params = {
            "adv.w0": _he_uniform(_init_rng(seed, "adv.w0"), in_dim, (in_dim, hidden)),
            "adv.b0": np.zeros(hidden),
            "adv.w1": _he_uniform(_init_rng(seed, "adv.w1"), hidden, (hidden, out_dim)),
            "adv.b1": np.zeros(out_dim),
        }

    def forward(self, x) -> dict:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.in_dim:
            raise DimensionMismatch(f"adversary expects width {self.in_dim}")
        h = np.tanh(x @ self.params["adv.w0"] + self.params["adv.b0"])
        out = h @ self.params["adv.w1"] + self.params["adv.b1"]
        return {"x": x, "h": h, "out": out}

    def backward(self, cache, grad_out):
        grads = {
            "adv.w1": cache["h"].T @ grad_out,
            "adv.b1": grad_out.sum(axis=0),
        }
        g_h = grad_out @ self.params["adv.w1"].T
        g_a = g_h * (1.0 - cache["h"] ** 2)
        grads["adv.w0"] = cache["x"].T @ g_a
        grads["adv.b0"] = g_a.sum(axis=0)
        grad_x = g_a @ self.params["adv.w0"].T
        return grads, grad_x


class Adam:
    """Adam with per-parameter learning-rate overrides and L2 weight decay.

    Weight decay is added to the gradient (coupled form) for every
    parameter not listed in `no_decay`.
    """

    def __init__(self, lr: float, lr_overrides=None, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0004, no_decay=(), decay_overrides=None):
        self.lr = lr
        self.lr_overrides = dict(lr_overrides or {})
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.decay_overrides = dict(decay_overrides or {})
        self.moments: dict[str, tuple] = {}
        self.steps: dict[str, int] = {}

    def step(self, params: dict, grads: dict):
        for name in sorted(grads):
            g = np.asarray(grads[name], dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
            theta = params[name]
            decay = self.decay_overrides.get(name, self.weight_decay)
            if decay and name not in self.no_decay:
                g = g + decay * theta
            if name not in self.moments:
                self.moments[name] = (np.zeros_like(theta), np.zeros_like(theta))
                self.steps[name] = 0
            m, v = self.moments[name]
            t = self.steps[name] + 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.moments[name] = (m, v)
            self.steps[name] = t
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            lr = self.lr_overrides.get(name, self.lr)
            params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class DecorrelationOutput:
    """Value of the correlation estimate plus descent-ready gradients.

    grad_targ / grad_sa are the raw dc/d(head output): adding rho * grad to
    the head gradients makes the trunk and heads descend on c. The
    adversary gradients are pre-negated, so a standard descent step on them
    ascends c, realizing the reversal-based minimax in one pass.
    """

    c: float
    grad_targ: np.ndarray
    grad_sa: np.ndarray
    grad_adversary: dict


def decorrelation_c(phi_targ, phi_sa, adversary: AdversaryMLP) -> DecorrelationOutput:
    """Batch-mean squared norm of phi_targ element-wise-multiplied with the
    adversary's (row-normalized) image of phi_sa.

    The adversary's raw output is scaled to unit norm per row before the
    product. Without this the objective is unbounded in the adversary's
    scale, which makes the de-correlation weight meaningless and hands the
    heads a degenerate energy-concentration escape; the normalized form is
    a bounded game over energy *placement*, whose head-side optimum
    (per-coordinate energy uniform or unpredictable) leaves class
    structure intact. The value lies in [1/D, 1] at the adversary's best
    response and has floor 1/D for an unpredictable embedding.
    """
    phi_targ = np.asarray(phi_targ, dtype=np.float64)
    b = phi_targ.shape[0]
    adv_cache = adversary.forward(phi_sa)
    u_hat, u_norms = _normalize_rows(adv_cache["out"])
    e = phi_targ * u_hat
    c = float(np.sum(e * e) / b)
    dc_de = 2.0 * e / b
    dc_dtarg = dc_de * u_hat
    dc_du = _normalization_backward(dc_de * phi_targ, u_hat, u_norms)
    adv_grads, dc_dsa = adversary.backward(adv_cache, dc_du)
    reversed_grads = {k: gradient_reversal_backward(v) for k, v in adv_grads.items()}
    return DecorrelationOutput(c, dc_dtarg, dc_dsa, reversed_grads)


@dataclass(frozen=True)
class ParadeConfig:
    """Weights of the attribute objective and the de-correlation term.

    alpha_sa = rho = 0 reduces training to the plain single-objective path
    step for step.
    """

    alpha_sa: float = 0.3
    rho: float = 100.0
    adversary_hidden: int = 32
    adversary_lr: float = 1e-3
    adversary_weight_decay: float = 0.03
    sa_mining: MiningConfig = field(
        default_factory=lambda: MiningConfig(label_source="attribute"))

    def __post_init__(self):
        if not 0.0 <= self.alpha_sa < 1.0:
            raise ValueError("alpha_sa must be in [0, 1)")
        if self.rho < 0.0:
            raise ValueError("rho must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    samples_per_class: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.0004
    seed: int = 0


@dataclass
class TrainResult:
    model: EmbeddingModel
    loss_params: dict
    adversary: AdversaryMLP | None
    history: dict


def _init_loss_params(prefix: str, cfg: LossConfig, n_labels: int, dim: int, seed: int) -> dict:
    params = {}
    if cfg.kind == "margin":
        params[f"{prefix}.beta"] = np.array(cfg.beta_init)
    elif cfg.kind == "proxy_nca":
        name = f"{prefix}.proxies"
        rows = _init_rng(seed, name).standard_normal((n_labels, dim))
        params[name] = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    elif cfg.kind == "arcface":
        name = f"{prefix}.centers"
        rows = _init_rng(seed, name).standard_normal((n_labels, dim))
        params[name] = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    return params


def _loss_param_view(loss_params: dict, prefix: str) -> dict:
    view = {}
    for key, val in loss_params.items():
        if key.startswith(prefix + "."):
            short = key[len(prefix) + 1:]
            view[short] = float(val) if short == "beta" else val
    return view


def _renormalize_loss_rows(loss_params: dict):
    for key in loss_params:
        if key.endswith(".proxies") or key.endswith(".centers"):
            rows = loss_params[key]
            rows /= np.linalg.norm(rows, axis=1, keepdims=True)


def _lr_overrides(loss_params: dict, cfg: LossConfig, adversary_lr=None) -> dict:
    overrides = {}
    for key in loss_params:
        if key.endswith(".beta"):
            overrides[key] = cfg.beta_lr
        else:
            overrides[key] = cfg.center_lr
    if adversary_lr is not None:
        for key in ("adv.w0", "adv.b0", "adv.w1", "adv.b1"):
            overrides[key] = adversary_lr
    return overrides


def train(
    ds: Dataset,
    model_spec: ModelSpec,
    loss_cfg: LossConfig,
    mining_cfg: MiningConfig,
    train_cfg: TrainConfig,
    parade_cfg: ParadeConfig | None = None,
) -> TrainResult:
    """SPC-n epochs of mine -> loss -> Adam step; deterministic per seed.

    With a parade config the model carries a second head trained on
    attribute triplets, and an adversary ascends the de-correlation term
    while trunk and heads descend on it (weighted by rho).
    """
    seed = train_cfg.seed
    if parade_cfg is not None and model_spec.sa_dim == 0:
        model_spec = replace(model_spec, sa_dim=model_spec.embed_dim)
    model = EmbeddingModel(model_spec)
    n_classes = int(ds.class_labels.max()) + 1
    loss_params = _init_loss_params(
        "loss_targ", loss_cfg, n_classes, model_spec.embed_dim, model_spec.seed)

    adversary = None
    if parade_cfg is not None:
        n_attrs = int(ds.attributes.max()) + 1
        loss_params.update(_init_loss_params(
            "loss_sa", loss_cfg, n_attrs, model_spec.sa_dim, model_spec.seed))
        adversary = AdversaryMLP(
            model_spec.sa_dim, parade_cfg.adversary_hidden,
            model_spec.embed_dim, model_spec.seed)

    params: dict[str, np.ndarray] = dict(model.params)
    params.update(loss_params)
    if adversary is not None:
        params.update(adversary.params)
    decay_overrides = {}
    if parade_cfg is not None:
        # the de-correlation objective is unbounded in the adversary's
        # scale; its own decay pins the tug-of-war at a finite equilibrium
        decay_overrides = {
            name: parade_cfg.adversary_weight_decay
            for name in ("adv.w0", "adv.b0", "adv.w1", "adv.b1")
        }
    optimizer = Adam(
        train_cfg.lr,
        lr_overrides=_lr_overrides(
            loss_params, loss_cfg,
            parade_cfg.adversary_lr if parade_cfg else None),
        weight_decay=train_cfg.weight_decay,
        no_decay=set(loss_params),
        decay_overrides=decay_overrides,
    )

    history = {"loss_targ": [], "loss_sa": [], "c": []}
    needs_mining = loss_cfg.kind in ("contrastive", "triplet", "margin")
    for epoch in range(train_cfg.epochs):
        plan = build_spc_batches(
            ds, train_cfg.batch_size, train_cfg.samples_per_class,
            derived_seed(seed, STREAM_PLAN, epoch))
        sum_targ = sum_sa = sum_c = 0.0
        n_steps = 0
        for bi, batch in enumerate(plan.batches):
            class_labels = ds.class_labels[batch]
            if np.unique(class_labels).size < 2:
                continue  # no negatives; nothing to rank against
            cache = model.forward(ds.features[batch])
            triplets = None
            if needs_mining:
                triplets = mine(
                    mining_cfg, class_labels, cache["phi_targ"],
                    derived_seed(seed, STREAM_MINE_TARGET, epoch, bi))
            out = evaluate_loss(
                loss_cfg, cache["phi_targ"], cache["z_targ"], class_labels,
                triplets, _loss_param_view(loss_params, "loss_targ"))
            grads: dict[str, np.ndarray] = {}
            for short, g in out.grad_params.items():
                grads[f"loss_targ.{short}"] = g
            if loss_cfg.kind == "npair":
                grad_phi_targ, grad_raw_targ = None, out.grad_embeddings
            else:
                grad_phi_targ, grad_raw_targ = out.grad_embeddings, None

            grad_phi_sa = None
            c_value = 0.0
            sa_value = 0.0
            if parade_cfg is not None:
                attr_labels = ds.attributes[batch]
                if parade_cfg.alpha_sa > 0.0 and np.unique(attr_labels).size > 1:
                    sa_triplets = None
                    if needs_mining:
                        sa_triplets = mine(
                            parade_cfg.sa_mining, attr_labels, cache["phi_sa"],
                            derived_seed(seed, STREAM_MINE_SENSITIVE, epoch, bi))
                    sa_out = evaluate_loss(
                        loss_cfg, cache["phi_sa"], cache["z_sa"], attr_labels,
                        sa_triplets, _loss_param_view(loss_params, "loss_sa"))
                    sa_value = sa_out.value
                    grad_phi_sa = parade_cfg.alpha_sa * sa_out.grad_embeddings
                    for short, g in sa_out.grad_params.items():
                        grads[f"loss_sa.{short}"] = parade_cfg.alpha_sa * np.asarray(g)
                decor = decorrelation_c(cache["phi_targ"], cache["phi_sa"], adversary)
                c_value = decor.c
                if parade_cfg.rho > 0.0:
                    if grad_phi_targ is None:
                        grad_phi_targ = parade_cfg.rho * decor.grad_targ
                    else:
                        grad_phi_targ = grad_phi_targ + parade_cfg.rho * decor.grad_targ
                    sa_c = parade_cfg.rho * decor.grad_sa
                    grad_phi_sa = sa_c if grad_phi_sa is None else grad_phi_sa + sa_c
                    for name, g in decor.grad_adversary.items():
                        grads[name] = parade_cfg.rho * g

            model_grads, _ = model.backward(
                cache, grad_phi_targ=grad_phi_targ,
                grad_raw_targ=grad_raw_targ, grad_phi_sa=grad_phi_sa)
            grads.update(model_grads)
            optimizer.step(params, grads)
            model.mark_updated()
            _renormalize_loss_rows(loss_params)
            sum_targ += out.value
            sum_sa += sa_value
            sum_c += c_value
            n_steps += 1
        denom = max(n_steps, 1)
        history["loss_targ"].append(sum_targ / denom)
        history["loss_sa"].append(sum_sa / denom)
        history["c"].append(sum_c / denom)
    return TrainResult(model, loss_params, adversary, history)


def embed_split(result_or_model, ds: Dataset, split: str = "test") -> EmbeddingMatrix:
    """Target-head embeddings of one split, in split order."""
    model = result_or_model.model if isinstance(result_or_model, TrainResult) else result_or_model
    idx = ds.indices(split)
    return model.embed(ds.features[idx])


def _normalized_c_and_grad(phi_targ, phi_sa, adversary: AdversaryMLP):
    """c with the adversary's output normalized per row, plus its gradient
    w.r.t. the adversary parameters. The normalization makes the value
    scale-invariant in the adversary, so it is bounded and comparable
    across runs: it measures whether the adversary can point at where the
    target embedding's per-coordinate energy lives."""
    cache = adversary.forward(phi_sa)
    u_hat, norms = _normalize_rows(cache["out"])
    e = phi_targ * u_hat
    b = phi_targ.shape[0]
    c = float(np.sum(e * e) / b)
    dc_du_hat = 2.0 * e * phi_targ / b
    dc_du = _normalization_backward(dc_du_hat, u_hat, norms)
    grads, _ = adversary.backward(cache, dc_du)
    return c, grads


def probe_decorrelation(
    phi_targ,
    phi_sa,
    hidden: int = 32,
    steps: int = 500,
    lr: float = 1e-2,
    seed: int = 0,
) -> tuple[float, AdversaryMLP]:
    """Train a fresh adversary to maximize the scale-normalized c on
    frozen embeddings.

    The raw objective is unbounded in the adversary's scale, so its value
    after a fixed budget mostly reflects optimizer drift; the per-row
    normalized form is bounded and yields run-comparable estimates of how
    much attribute structure remains recoverable from the target
    embedding. The floor for an unpredictable embedding is 1/D.
    """
    phi_targ = np.asarray(phi_targ, dtype=np.float64)
    phi_sa = np.asarray(phi_sa, dtype=np.float64)
    probe = AdversaryMLP(phi_sa.shape[1], hidden, phi_targ.shape[1],
                         derived_seed(seed, STREAM_PROBE))
    optimizer = Adam(lr, weight_decay=0.0)
    best = 0.0
    for _ in range(steps):
        c, grads = _normalized_c_and_grad(phi_targ, phi_sa, probe)
        best = max(best, c)
        optimizer.step(probe.params, {k: -g for k, g in grads.items()})
    final, _ = _normalized_c_and_grad(phi_targ, phi_sa, probe)
    return max(best, final), probe


CHECKPOINT_MAGIC = "fairembed-checkpoint v1"


def save_checkpoint(path, result: TrainResult) -> None:
    """Versioned text checkpoint; parameter tensors as full-precision CSV."""
    model = result.model
    spec = model.spec
    blocks = dict(model.params)
    blocks.update(result.loss_params)
    if result.adversary is not None:
        blocks.update(result.adversary.params)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        fh.write(
            f"spec in_dim={spec.in_dim} hidden={spec.hidden[0]},{spec.hidden[1]} "
            f"embed_dim={spec.embed_dim} sa_dim={spec.sa_dim} seed={spec.seed}\n")
        if result.adversary is not None:
            adv = result.adversary
            fh.write(f"adversary in_dim={adv.in_dim} hidden={adv.hidden} out_dim={adv.out_dim}\n")
        for name in sorted(blocks):
            arr = np.atleast_2d(np.asarray(blocks[name], dtype=np.float64))
            fh.write(f"param {name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_checkpoint(path) -> TrainResult:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    fields = dict(part.split("=") for part in lines[1].split()[1:])
    spec = ModelSpec(
        in_dim=int(fields["in_dim"]),
        hidden=tuple(int(v) for v in fields["hidden"].split(",")),
        embed_dim=int(fields["embed_dim"]),
        sa_dim=int(fields["sa_dim"]),
        seed=int(fields["seed"]),
    )
    pos = 2
    adversary = None
    if pos < len(lines) and lines[pos].startswith("adversary "):
        afields = dict(part.split("=") for part in lines[pos].split()[1:])
        adversary = AdversaryMLP(
            int(afields["in_dim"]), int(afields["hidden"]), int(afields["out_dim"]), spec.seed)
        pos += 1
    blocks = {}
    while pos < len(lines) and lines[pos]:
        if not lines[pos].startswith("param "):
            raise ValueError(f"malformed checkpoint at line {pos + 1}")
        _, name, rows_s, cols_s = lines[pos].split()
        rows, cols = int(rows_s), int(cols_s)
        data = [
            [float(v) for v in lines[pos + 1 + r].split(",")]
            for r in range(rows)
        ]
        arr = np.array(data, dtype=np.float64)
        if arr.shape != (rows, cols):
            raise ValueError(f"bad block shape for {name}")
        blocks[name] = arr
        pos += 1 + rows
    model = EmbeddingModel(spec)
    loss_params = {}
    for name, arr in blocks.items():
        if name in model.params:
            squeezed = arr if model.params[name].ndim == 2 else arr.reshape(-1)
            model.params[name] = squeezed
        elif name.startswith("adv."):
            adversary.params[name] = arr if adversary.params[name].ndim == 2 else arr.reshape(-1)
        else:
            target = arr
            if name.endswith(".beta"):
                target = np.array(float(arr[0, 0]))
            loss_params[name] = target
    return TrainResult(model, loss_params, adversary, {})
