"""Experiment orchestration: flat key=value configs, the balanced-versus-
imbalanced gap study, imbalance sweeps, alpha/rho grids for the
de-correlation trainer, and report emission (CSV, JSON, SVG curves).

Every run is a pure function of the config file bytes and the seed list;
all module seeds derive from the run seed via the fixed stream offsets
below (echoed into config.echo).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .core import EmbeddingMatrix, kmeans
from .data import (
    TEST,
    TRAIN,
    Dataset,
    ImbalanceSpec,
    generate_synthetic,
    induce_imbalance,
    partition_by_attribute,
    read_dataset,
    split_per_class,
    write_dataset,
    write_embeddings,
)
from .downstream import (
    classify_nearest_centroid,
    fit_logistic,
    macro_scores_by_subgroup,
    nearest_centroid,
    predict,
)
from .fairness import LOWER_IS_BETTER, GapReport, aggregate_over_seeds, compute_gap
from .losses import LossConfig
from .metrics import (
    alignment_expectations,
    build_pair_index,
    nmi,
    nmi_from_embedding,
    recall_at_k,
    u_kl,
)
from .mining import MiningConfig
from .model import (
    ModelSpec,
    ParadeConfig,
    TrainConfig,
    TrainResult,
    derived_seed,
    embed_split,
    probe_decorrelation,
    save_checkpoint,
    train,
)

# run-seed stream offsets (see model.SEED_STREAMS for the training streams)
STREAM_SELECTION = 21
STREAM_TRAIN = 22
STREAM_MODEL_INIT = 23
STREAM_KMEANS = 24
STREAM_PROBE_FIT = 25
STREAM_PAIRS = 26
STREAM_PROBE_ADV = 27
STREAM_VALIDATION = 28

RUN_STREAMS = {
    "selection": STREAM_SELECTION,
    "train_loop": STREAM_TRAIN,
    "model_init": STREAM_MODEL_INIT,
    "kmeans": STREAM_KMEANS,
    "probe_fit": STREAM_PROBE_FIT,
    "pair_subsample": STREAM_PAIRS,
    "probe_adversary": STREAM_PROBE_ADV,
    "validation_cut": STREAM_VALIDATION,
}

UPSTREAM_METRICS = ("recall@1", "nmi", "u_kl")
DOWNSTREAM_METRICS = ("precision", "recall", "accuracy")
REPORT_ROWS = (
    ("Recall@1", "upstream", "recall@1"),
    ("NMI", "upstream", "nmi"),
    ("U_KL", "upstream", "u_kl"),
    ("Precision", "downstream", "precision"),
    ("Recall", "downstream", "recall"),
    ("Accuracy", "downstream", "accuracy"),
)


class ConfigError(ValueError):
    def __init__(self, path, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class PipelineError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    # dataset
    data_path: str | None = None
    classes: int = 20
    per_class: int = 30
    feature_dim: int = 16
    attribute_correlation: float = 0.0
    cluster_spread: float = 0.25
    data_seed: int = 7
    train_fraction: float = 0.5
    # imbalance (optional)
    imbalance_enabled: bool = False
    minoritized: int = 5
    retention: float = 0.1
    rebalance: bool = True
    # loss and mining
    loss: LossConfig = field(default_factory=LossConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    # model and training
    hidden: tuple = (64, 32)
    embed_dim: int = 16
    epochs: int = 100
    batch_size: int = 32
    samples_per_class: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.0004
    # de-correlation trainer (optional)
    parade: ParadeConfig | None = None
    # evaluation
    k: int = 1
    convention: str = "majority_vs_minority"
    subgroups: str = "attribute"   # or "minoritized_classes"
    probes: tuple = ("logistic", "nearest_centroid")
    probe_l2: float = 1e-3
    max_pairs: int = 200_000
    embeddings_path: str | None = None
    # run control
    seeds: tuple = (0,)
    out: str = "runs/out"


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _parse_seeds(text: str) -> tuple:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in text.split(",") if v)


def parse_config(path, overrides=None) -> ExperimentConfig:
    """Parse a flat key=value config file with section-prefixed keys."""
    entries: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(path, f"line {lineno}: expected key=value")
                key, value = line.split("=", 1)
                entries[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(path, str(exc)) from exc
    if overrides:
        entries.update(overrides)
    return config_from_entries(path, entries)


def config_from_entries(path, entries: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    loss_kw: dict = {}
    mining_kw: dict = {}
    parade_kw: dict = {}
    try:
        for key, value in entries.items():
            if key == "data.path":
                cfg.data_path = value
            elif key == "data.classes":
                cfg.classes = int(value)
            elif key == "data.per_class":
                cfg.per_class = int(value)
            elif key == "data.feature_dim":
                cfg.feature_dim = int(value)
            elif key == "data.attribute_correlation":
                cfg.attribute_correlation = float(value)
            elif key == "data.cluster_spread":
                cfg.cluster_spread = float(value)
            elif key == "data.seed":
                cfg.data_seed = int(value)
            elif key == "split.train_fraction":
                cfg.train_fraction = float(value)
            elif key == "imbalance.minoritized":
                cfg.minoritized = int(value)
                cfg.imbalance_enabled = True
            elif key == "imbalance.retention":
                cfg.retention = float(value)
                cfg.imbalance_enabled = True
            elif key == "imbalance.rebalance":
                cfg.rebalance = _BOOL[value.lower()]
            elif key == "loss.kind":
                loss_kw["kind"] = value
            elif key in ("loss.margin", "loss.beta_init", "loss.beta_lr",
                         "loss.npair_nu", "loss.multisim_alpha", "loss.multisim_beta",
                         "loss.multisim_lambda", "loss.multisim_eps",
                         "loss.arcface_margin", "loss.arcface_scale", "loss.center_lr"):
                loss_kw[key.split(".", 1)[1]] = float(value)
            elif key == "mining.strategy":
                mining_kw["strategy"] = value
            elif key == "mining.semihard_slack":
                mining_kw["semihard_slack"] = float(value)
            elif key == "mining.dw_lambda":
                mining_kw["dw_lambda"] = float(value)
            elif key == "mining.dw_clip":
                mining_kw["dw_distance_clip"] = float(value)
            elif key == "model.hidden":
                cfg.hidden = tuple(int(v) for v in value.split(","))
            elif key == "model.embed_dim":
                cfg.embed_dim = int(value)
            elif key == "train.epochs":
                cfg.epochs = int(value)
            elif key == "train.batch_size":
                cfg.batch_size = int(value)
            elif key == "train.samples_per_class":
                cfg.samples_per_class = int(value)
            elif key == "train.lr":
                cfg.lr = float(value)
            elif key == "train.weight_decay":
                cfg.weight_decay = float(value)
            elif key == "parade.alpha_sa":
                parade_kw["alpha_sa"] = float(value)
            elif key == "parade.rho":
                parade_kw["rho"] = float(value)
            elif key == "parade.adversary_hidden":
                parade_kw["adversary_hidden"] = int(value)
            elif key == "parade.adversary_lr":
                parade_kw["adversary_lr"] = float(value)
            elif key == "eval.k":
                cfg.k = int(value)
            elif key == "eval.convention":
                cfg.convention = value
            elif key == "eval.subgroups":
                cfg.subgroups = value
            elif key == "eval.probes":
                cfg.probes = tuple(v for v in value.split(",") if v)
            elif key == "eval.probe_l2":
                cfg.probe_l2 = float(value)
            elif key == "eval.max_pairs":
                cfg.max_pairs = int(value)
            elif key == "eval.embeddings":
                cfg.embeddings_path = value
            elif key == "seeds":
                cfg.seeds = _parse_seeds(value)
            elif key == "out":
                cfg.out = value
            else:
                raise ConfigError(path, f"unknown key {key!r}")
        cfg.loss = LossConfig(**loss_kw)
        cfg.mining = MiningConfig(**mining_kw)
        if parade_kw:
            cfg.parade = ParadeConfig(
                **parade_kw,
                sa_mining=MiningConfig(**{**mining_kw, "label_source": "attribute"}),
            )
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(path, str(exc)) from exc
    if not cfg.seeds:
        raise ConfigError(path, "empty seed list")
    if cfg.subgroups not in ("attribute", "minoritized_classes"):
        raise ConfigError(path, f"unknown eval.subgroups {cfg.subgroups!r}")
    if cfg.subgroups == "minoritized_classes" and not cfg.imbalance_enabled:
        raise ConfigError(path, "minoritized_classes subgroups need an imbalance section")
    return cfg


def load_base_dataset(cfg: ExperimentConfig) -> Dataset:
    """The balanced dataset with its per-class split; fixed by data.seed."""
    if cfg.data_path:
        ds = read_dataset(cfg.data_path)
        if not np.any(ds.split == TEST):
            ds = split_per_class(ds, cfg.train_fraction, derived_seed(cfg.data_seed, 1))
        return ds
    ds = generate_synthetic(
        cfg.classes, cfg.per_class, cfg.feature_dim,
        cfg.attribute_correlation, cfg.cluster_spread, cfg.data_seed)
    return split_per_class(ds, cfg.train_fraction, derived_seed(cfg.data_seed, 1))


def _subgroup_attribute(cfg: ExperimentConfig, ds: Dataset, minoritized) -> np.ndarray:
    """Per-sample subgroup value: the dataset attribute, or membership of
    the sample's class in the minoritized set (1 = minoritized)."""
    if cfg.subgroups == "attribute":
        return ds.attributes
    if minoritized is None:
        raise PipelineError("minoritized_classes subgroups need an imbalance selection")
    return np.isin(ds.class_labels, np.asarray(minoritized)).astype(np.int64)


def _partition(values: np.ndarray) -> dict:
    return {int(a): np.flatnonzero(values == a) for a in np.unique(values)}


def _gap(metric: str, per_subgroup: dict, convention: str, sizes: dict) -> GapReport:
    return compute_gap(
        per_subgroup, convention, subgroup_sizes=sizes,
        higher_is_better=metric not in LOWER_IS_BETTER, metric=metric)


def run_single(cfg: ExperimentConfig, seed: int, imbalanced: bool,
               ds_balanced: Dataset | None = None) -> dict:
    """One full pipeline run: train upstream, evaluate embedding fairness,
    fit probes on balanced-train embeddings, score downstream fairness."""
    if ds_balanced is None:
        ds_balanced = load_base_dataset(cfg)
    minoritized = None
    ds_train_source = ds_balanced
    if cfg.imbalance_enabled:
        spec = ImbalanceSpec(
            cfg.minoritized, cfg.retention, cfg.rebalance,
            seed=derived_seed(seed, STREAM_SELECTION))
        ds_imbalanced, minoritized = induce_imbalance(ds_balanced, spec)
        if imbalanced:
            ds_train_source = ds_imbalanced

    model_spec = ModelSpec(
        in_dim=ds_balanced.features.shape[1],
        hidden=cfg.hidden,
        embed_dim=cfg.embed_dim,
        seed=derived_seed(seed, STREAM_MODEL_INIT),
    )
    train_cfg = TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size,
        samples_per_class=cfg.samples_per_class, lr=cfg.lr,
        weight_decay=cfg.weight_decay, seed=derived_seed(seed, STREAM_TRAIN))
    result = train(ds_train_source, model_spec, cfg.loss, cfg.mining, train_cfg, cfg.parade)

    report = evaluate_run(cfg, result, ds_balanced, minoritized, seed)
    report["seed"] = seed
    report["condition"] = "imbalanced" if imbalanced else "balanced"
    report["minoritized_classes"] = minoritized
    return report


def evaluate_run(cfg: ExperimentConfig, result: TrainResult, ds_balanced: Dataset,
                 minoritized, seed: int) -> dict:
    test_idx = ds_balanced.indices(TEST)
    train_idx = ds_balanced.indices(TRAIN)
    emb_test = embed_split(result, ds_balanced, TEST)
    subgroup_all = _subgroup_attribute(cfg, ds_balanced, minoritized)
    subgroup_test = subgroup_all[test_idx]
    partition = _partition(subgroup_test)
    sizes = {a: int(idx.size) for a, idx in partition.items()}
    y_test = ds_balanced.class_labels[test_idx]
    n_classes = ds_balanced.n_classes

    upstream = {}
    overall_recall = recall_at_k(emb_test, y_test, cfg.k)
    recall_profile = {
        a: recall_at_k(emb_test, y_test, cfg.k, restrict_to=idx)
        for a, idx in sorted(partition.items())
    }
    upstream["recall@1"] = _metric_entry(overall_recall, recall_profile, cfg.convention, sizes, "recall@1")

    kmeans_seed = derived_seed(seed, STREAM_KMEANS)
    clusters = kmeans(emb_test, int(np.unique(y_test).size), kmeans_seed)
    overall_nmi = nmi(clusters, y_test)
    nmi_profile = {
        a: nmi(clusters, y_test, restrict_to=idx)
        for a, idx in sorted(partition.items())
    }
    upstream["nmi"] = _metric_entry(overall_nmi, nmi_profile, cfg.convention, sizes, "nmi")

    overall_ukl = u_kl(emb_test)
    ukl_profile = {a: u_kl(emb_test, restrict_to=idx) for a, idx in sorted(partition.items())}
    upstream["u_kl"] = _metric_entry(overall_ukl, ukl_profile, cfg.convention, sizes, "u_kl")

    pair_seed = derived_seed(seed, STREAM_PAIRS)
    overall_pairs = build_pair_index(y_test, max_pairs=cfg.max_pairs, seed=pair_seed)
    pos, neg = alignment_expectations(emb_test, overall_pairs)
    align_profile = {}
    for a in sorted(partition):
        index = build_pair_index(
            y_test, subgroup_test, attribute_value=a,
            max_pairs=cfg.max_pairs, seed=pair_seed)
        align_profile[a] = list(alignment_expectations(emb_test, index))
    upstream["alignment"] = {
        "overall_pos": pos, "overall_neg": neg,
        "per_subgroup": {str(a): v for a, v in align_profile.items()},
    }

    emb_train_balanced = embed_split(result, ds_balanced, TRAIN)
    y_train = ds_balanced.class_labels[train_idx]
    downstream = {}
    for probe in cfg.probes:
        if probe == "logistic":
            lr_model = fit_logistic(
                emb_train_balanced, y_train, l2=cfg.probe_l2,
                seed=derived_seed(seed, STREAM_PROBE_FIT))
            y_pred, _ = predict(lr_model, emb_test)
        elif probe == "nearest_centroid":
            nc = nearest_centroid(emb_train_balanced, y_train)
            y_pred = classify_nearest_centroid(nc, emb_test)
        else:
            raise PipelineError(f"unknown probe {probe!r}")
        by_group = macro_scores_by_subgroup(y_test, y_pred, subgroup_test, n_classes)
        overall = macro_scores_by_subgroup(
            y_test, y_pred, np.zeros_like(y_test), n_classes)[0]
        downstream[probe] = {
            name: _metric_entry(
                overall[name],
                {a: by_group[a][name] for a in sorted(by_group)},
                cfg.convention, sizes, name)
            for name in DOWNSTREAM_METRICS
        }

    report = {"upstream": upstream, "downstream": downstream}
    if result.adversary is not None:
        sa_rows = result.model.forward(ds_balanced.features[test_idx])["phi_sa"]
        probe_c, _ = probe_decorrelation(
            emb_test.rows, sa_rows, hidden=cfg.parade.adversary_hidden if cfg.parade else 32,
            seed=derived_seed(seed, STREAM_PROBE_ADV))
        report["probe_c"] = probe_c
    return report


def _metric_entry(overall, per_subgroup: dict, convention: str, sizes: dict, metric: str) -> dict:
    gap = _gap(metric, per_subgroup, convention, sizes)
    return {
        "overall": float(overall),
        "per_subgroup": {str(a): float(v) for a, v in sorted(per_subgroup.items())},
        "gap": gap.gap,
    }


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _collect(reports: list[dict], stage: str, metric: str, probe: str = "logistic"):
    if stage == "upstream":
        return [r["upstream"][metric] for r in reports]
    return [r["downstream"][probe][metric] for r in reports]


def aggregate_reports(reports: list[dict], probe: str = "logistic") -> dict:
    """Across-seed mean/std of overalls and gaps for the six report metrics."""
    out = {"n_seeds": len(reports), "probe": probe, "metrics": {}}
    for label, stage, metric in REPORT_ROWS:
        entries = _collect(reports, stage, metric, probe)
        overalls = np.array([e["overall"] for e in entries])
        gaps = np.array([e["gap"] for e in entries])
        out["metrics"][label] = {
            "stage": stage,
            "overall_mean": float(overalls.mean()),
            "overall_std": float(overalls.std(ddof=1)) if len(reports) > 1 else 0.0,
            "gap_mean": float(gaps.mean()),
            "gap_std": float(gaps.std(ddof=1)) if len(reports) > 1 else 0.0,
            "gaps": [float(g) for g in gaps],
        }
    if all("probe_c" in r for r in reports):
        cs = np.array([r["probe_c"] for r in reports])
        out["probe_c_mean"] = float(cs.mean())
        out["probe_c_values"] = [float(v) for v in cs]
    return out


def _ensure_layout(out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "per-seed"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "curves"), exist_ok=True)


def echo_config(cfg: ExperimentConfig, path) -> None:
    lines = ["# normalized experiment configuration"]
    for key, value in sorted(vars(cfg).items()):
        lines.append(f"{key}={value!r}")
    lines.append("# seed streams (run seed -> module seeds)")
    for name, offset in sorted(RUN_STREAMS.items()):
        lines.append(f"# stream.{name}={offset}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Per seed: (optional imbalance) -> train -> evaluate -> probes;
    aggregate over seeds and write the standard output layout."""
    out_dir = out_dir or cfg.out
    _ensure_layout(out_dir)
    echo_config(cfg, os.path.join(out_dir, "config.echo"))
    ds = load_base_dataset(cfg)
    reports = []
    for seed in cfg.seeds:
        report = run_single(cfg, seed, imbalanced=cfg.imbalance_enabled, ds_balanced=ds)
        reports.append(report)
        write_json(os.path.join(out_dir, "per-seed", f"seed{seed}_{report['condition']}.json"), report)
    condition = "imbalanced" if cfg.imbalance_enabled else "balanced"
    aggregate = {
        "conditions": {condition: aggregate_reports(reports)},
        "convention": cfg.convention,
        "n_seeds": len(cfg.seeds),
    }
    write_json(os.path.join(out_dir, "aggregate.json"), aggregate)
    emit_report(aggregate, out_dir, formats=("csv",))
    return aggregate


def run_study(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Balanced control versus imbalanced arm, sharing the dataset, the
    per-seed minoritized-class selection and the model initialization."""
    if not cfg.imbalance_enabled:
        raise ConfigError(cfg.out, "study needs an imbalance section")
    out_dir = out_dir or cfg.out
    _ensure_layout(out_dir)
    echo_config(cfg, os.path.join(out_dir, "config.echo"))
    ds = load_base_dataset(cfg)
    arms = {"balanced": [], "imbalanced": []}
    for seed in cfg.seeds:
        for condition, imbalanced in (("balanced", False), ("imbalanced", True)):
            report = run_single(cfg, seed, imbalanced=imbalanced, ds_balanced=ds)
            arms[condition].append(report)
            write_json(
                os.path.join(out_dir, "per-seed", f"seed{seed}_{condition}.json"),
                report)
    aggregate = {
        "conditions": {name: aggregate_reports(reports) for name, reports in arms.items()},
        "convention": cfg.convention,
        "n_seeds": len(cfg.seeds),
    }
    write_json(os.path.join(out_dir, "aggregate.json"), aggregate)
    emit_report(aggregate, out_dir, formats=("csv",))
    return aggregate


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty_like(v)
        r[order] = np.arange(1.0, v.size + 1.0)
        for val in np.unique(v):
            mask = v == val
            if mask.sum() > 1:
                r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(np.sum(rx * rx) * np.sum(ry * ry)))
    if denom == 0.0:
        return 0.0
    return float(np.sum(rx * ry) / denom)


def run_sweep(cfg: ExperimentConfig, retentions=(0.5, 0.4, 0.3, 0.2, 0.1),
              out_dir=None, monotonicity_threshold: float = 0.8) -> dict:
    """One imbalanced run per retention level per seed; emits a long-form
    CSV and per-metric gap-versus-retention curves."""
    for r in retentions:
        if not 0.0 < r <= 1.0:
            raise ConfigError(cfg.out, f"retention {r} outside (0, 1]")
    out_dir = out_dir or cfg.out
    _ensure_layout(out_dir)
    echo_config(cfg, os.path.join(out_dir, "config.echo"))
    base = replace(cfg, imbalance_enabled=True)
    ds = load_base_dataset(cfg)
    rows = []
    by_retention: dict[float, list] = {}
    for retention in retentions:
        level_cfg = replace(base, retention=retention)
        reports = []
        for seed in cfg.seeds:
            report = run_single(level_cfg, seed, imbalanced=True, ds_balanced=ds)
            reports.append(report)
            for label, stage, metric in REPORT_ROWS:
                entry = (report["upstream"][metric] if stage == "upstream"
                         else report["downstream"]["logistic"][metric])
                for subgroup, value in entry["per_subgroup"].items():
                    rows.append((retention, seed, label, stage, subgroup,
                                 value, entry["gap"]))
        by_retention[retention] = reports
    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("retention,seed,metric,stage,subgroup,value,gap\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")

    curves: dict[str, dict] = {}
    for label, stage, metric in REPORT_ROWS:
        means = []
        for retention in retentions:
            entries = _collect(by_retention[retention], stage, metric)
            means.append(float(np.mean([e["gap"] for e in entries])))
        curves[label] = {
            "retentions": list(retentions),
            "gap_means": means,
            # severity grows as retention falls
            "spearman_severity_gap": spearman([-r for r in retentions], means),
        }
    summary = {
        "curves": curves,
        "monotonicity_flags": {
            label: bool(c["spearman_severity_gap"] < monotonicity_threshold)
            for label, c in curves.items()
        },
        "n_seeds": len(cfg.seeds),
    }
    write_json(os.path.join(out_dir, "sweep.json"), summary)
    for label, c in curves.items():
        svg_path = os.path.join(out_dir, "curves", f"gap_{label.replace('@', '_at_')}.svg")
        line_plot_svg(
            svg_path, c["retentions"], {label: c["gap_means"]},
            title=f"{label} gap vs retention", xlabel="retention", ylabel="gap")
    return summary


def _validation_cut(ds: Dataset, fraction: float, seed: int):
    """Move `fraction` of each class's train samples into a held-out set.

    Returns (reduced dataset, validation index array into the original)."""
    rng = np.random.default_rng(seed)
    train_idx = ds.indices(TRAIN)
    val = []
    for c in np.unique(ds.class_labels[train_idx]):
        idx = train_idx[ds.class_labels[train_idx] == c]
        n_val = max(1, int(math.floor(fraction * idx.size))) if idx.size > 1 else 0
        val.extend(rng.permutation(idx)[:n_val].tolist())
    val = np.array(sorted(val), dtype=np.int64)
    split = ds.split.copy()
    split[val] = TEST  # held out from training
    reduced = replace(ds, split=split)
    return reduced, val


def run_grid(cfg: ExperimentConfig, alphas=(0.1, 0.3, 0.5, 0.7, 0.9),
             rhos=(1.0, 10.0, 100.0, 500.0, 1000.0, 1500.0, 3000.0),
             out_dir=None) -> dict:
    """Full grid of de-correlation runs; selects the cell maximizing the
    validation worst-group recall@1 (ties: smaller rho, then smaller alpha)."""
    if not alphas or not rhos:
        raise ConfigError(cfg.out, "grid needs non-empty alpha and rho lists")
    out_dir = out_dir or cfg.out
    _ensure_layout(out_dir)
    echo_config(cfg, os.path.join(out_dir, "config.echo"))
    ds = load_base_dataset(cfg)
    base_parade = cfg.parade or ParadeConfig(
        sa_mining=replace(cfg.mining, label_source="attribute"))

    cells = []
    rows = []
    for alpha in alphas:
        for rho in rhos:
            parade = replace(base_parade, alpha_sa=alpha, rho=rho)
            cell_cfg = replace(cfg, parade=parade)
            worst_vals, per_seed = [], []
            for seed in cfg.seeds:
                reduced, val_idx = _validation_cut(
                    ds, 0.2, derived_seed(seed, STREAM_VALIDATION))
                report = run_single(cell_cfg, seed, imbalanced=cfg.imbalance_enabled,
                                    ds_balanced=reduced)
                per_seed.append(report)
                worst = min(report["upstream"]["recall@1"]["per_subgroup"].values())
                worst_vals.append(worst)
                for label, stage, metric in REPORT_ROWS[:3]:
                    entry = report["upstream"][metric]
                    rows.append((alpha, rho, seed, label, entry["overall"],
                                 entry["gap"],
                                 min(entry["per_subgroup"].values())
                                 if metric not in LOWER_IS_BETTER
                                 else max(entry["per_subgroup"].values())))
            cells.append({
                "alpha_sa": alpha,
                "rho": rho,
                "worst_group_recall": float(np.mean(worst_vals)),
                "aggregate": aggregate_reports(per_seed),
            })
    csv_path = os.path.join(out_dir, "grid.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("alpha_sa,rho,seed,metric,overall,gap,worst_group\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")

    best = max(
        cells,
        key=lambda cell: (cell["worst_group_recall"], -cell["rho"], -cell["alpha_sa"]))
    summary = {
        "cells": cells,
        "selected": {"alpha_sa": best["alpha_sa"], "rho": best["rho"],
                     "worst_group_recall": best["worst_group_recall"]},
        "alphas": list(alphas),
        "rhos": list(rhos),
        "n_seeds": len(cfg.seeds),
    }
    write_json(os.path.join(out_dir, "grid.json"), summary)
    return summary


def emit_report(aggregate: dict, out_dir, formats=("csv", "json", "svg")) -> list:
    """Table-shaped CSV (6 metrics x condition), JSON mirror, SVG curves."""
    written = []
    conditions = sorted(aggregate["conditions"])
    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("metric,stage,condition,gap_mean,gap_std\n")
            for label, stage, _ in REPORT_ROWS:
                for condition in conditions:
                    entry = aggregate["conditions"][condition]["metrics"][label]
                    fh.write(f"{label},{stage},{condition},"
                             f"{entry['gap_mean']!r},{entry['gap_std']!r}\n")
        written.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        write_json(path, aggregate)
        written.append(path)
    if "svg" in formats:
        xs = list(range(len(conditions)))
        series = {}
        for label, _, _ in REPORT_ROWS:
            series[label] = [
                aggregate["conditions"][c]["metrics"][label]["gap_mean"]
                for c in conditions
            ]
        path = os.path.join(out_dir, "curves", "gaps_by_condition.svg")
        line_plot_svg(path, xs, series, title="gap by condition",
                      xlabel=" vs ".join(conditions), ylabel="gap")
        written.append(path)
    return written


def line_plot_svg(path, xs, series: dict, title="", xlabel="", ylabel="",
                  width: int = 640, height: int = 420) -> None:
    """Minimal hand-rolled line plot; one polyline per series."""
    margin = 60.0
    xs = [float(x) for x in xs]
    all_y = [float(v) for values in series.values() for v in values]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle">{title}</text>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{height / 2}" text-anchor="middle" '
        f'transform="rotate(-90 15 {height / 2})">{ylabel}</text>',
    ]
    for i, (name, values) in enumerate(sorted(series.items())):
        color = palette[i % len(palette)]
        points = " ".join(f"{sx(x):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, values))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - margin + 4}" y="{margin + 14 * i + 10}" '
                     f'fill="{color}" font-size="11">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def cli_gen_data(cfg: ExperimentConfig, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    ds = load_base_dataset(cfg)
    path = os.path.join(out_dir, "dataset.csv")
    write_dataset(path, ds)
    return path


def cli_train(cfg: ExperimentConfig, out_dir) -> dict:
    """Train one model per seed; dump checkpoints and test-split embeddings."""
    os.makedirs(out_dir, exist_ok=True)
    ds = load_base_dataset(cfg)
    written = {}
    for seed in cfg.seeds:
        ds_source = ds
        if cfg.imbalance_enabled:
            spec = ImbalanceSpec(cfg.minoritized, cfg.retention, cfg.rebalance,
                                 seed=derived_seed(seed, STREAM_SELECTION))
            ds_source, _ = induce_imbalance(ds, spec)
        model_spec = ModelSpec(
            in_dim=ds.features.shape[1], hidden=cfg.hidden, embed_dim=cfg.embed_dim,
            seed=derived_seed(seed, STREAM_MODEL_INIT))
        train_cfg = TrainConfig(
            epochs=cfg.epochs, batch_size=cfg.batch_size,
            samples_per_class=cfg.samples_per_class, lr=cfg.lr,
            weight_decay=cfg.weight_decay, seed=derived_seed(seed, STREAM_TRAIN))
        result = train(ds_source, model_spec, cfg.loss, cfg.mining, train_cfg, cfg.parade)
        ckpt = os.path.join(out_dir, f"model_seed{seed}.ckpt")
        save_checkpoint(ckpt, result)
        emb = embed_split(result, ds, TEST)
        test_idx = ds.indices(TEST)
        dump = os.path.join(out_dir, f"embeddings_seed{seed}.csv")
        write_embeddings(dump, emb, ds.class_labels[test_idx], ds.attributes[test_idx])
        written[seed] = {"checkpoint": ckpt, "embeddings": dump}
    return written


def cli_eval(cfg: ExperimentConfig, out_dir) -> dict:
    """Metrics and gaps for a precomputed embedding dump."""
    from .data import read_embeddings

    if not cfg.embeddings_path:
        raise ConfigError(out_dir, "eval needs eval.embeddings=<dump path>")
    os.makedirs(out_dir, exist_ok=True)
    emb, classes, attrs = read_embeddings(cfg.embeddings_path)
    partition = _partition(attrs)
    sizes = {a: int(idx.size) for a, idx in partition.items()}
    kmeans_seed = derived_seed(cfg.seeds[0], STREAM_KMEANS)
    result = {
        "recall@1": _metric_entry(
            recall_at_k(emb, classes, cfg.k),
            {a: recall_at_k(emb, classes, cfg.k, restrict_to=idx)
             for a, idx in partition.items()},
            cfg.convention, sizes, "recall@1"),
        "nmi": _metric_entry(
            nmi_from_embedding(emb, classes, seed=kmeans_seed),
            {a: nmi_from_embedding(emb, classes, seed=kmeans_seed, restrict_to=idx)
             for a, idx in partition.items()},
            cfg.convention, sizes, "nmi"),
        "u_kl": _metric_entry(
            u_kl(emb),
            {a: u_kl(emb, restrict_to=idx) for a, idx in partition.items()},
            cfg.convention, sizes, "u_kl"),
    }
    write_json(os.path.join(out_dir, "eval.json"), result)
    return result
