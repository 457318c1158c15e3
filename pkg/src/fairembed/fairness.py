"""Per-subgroup metric profiles and gap computation under the three gap
conventions, plus aggregation of gap reports across seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import (
    alignment_expectations,
    build_pair_index,
    recall_at_k,
    u_kl,
)

GAP_CONVENTIONS = ("majority_vs_minority", "worst_group", "top_half_vs_bottom_half")

# metrics where a LOWER value is the better performance
LOWER_IS_BETTER = {"u_kl"}


class EmptySubgroup(ValueError):
    def __init__(self, value):
        super().__init__(f"subgroup {value!r} is empty")


class TooFewSubgroups(ValueError):
    pass


class InsufficientRuns(ValueError):
    pass


@dataclass
class GapReport:
    metric: str
    convention: str
    per_subgroup: dict
    gap: float | None = None
    gap_mean: float | None = None
    gap_std: float | None = None
    n_seeds: int = 1

    def to_json_dict(self) -> dict:
        return {
            "metric": self.metric,
            "convention": self.convention,
            "per_subgroup": {str(k): v for k, v in sorted(self.per_subgroup.items())},
            "gap_mean": self.gap_mean if self.gap_mean is not None else self.gap,
            "gap_std": self.gap_std if self.gap_std is not None else 0.0,
            "n_seeds": self.n_seeds,
        }


def k_close_profile(emb, class_labels, partition: dict, k: int) -> dict:
    """Per-subgroup probability of finding a same-class point among the k
    nearest neighbours (searched over all points); this is subgroup-
    restricted recall@k."""
    profile = {}
    for value, idx in sorted(partition.items()):
        idx = np.asarray(idx)
        if idx.size == 0:
            raise EmptySubgroup(value)
        profile[value] = recall_at_k(emb, class_labels, k, restrict_to=idx)
    return profile


def alignment_profile(emb, class_labels, attributes, max_pairs=None, seed: int = 0) -> dict:
    """Per-attribute-value (positive, negative) alignment expectations over
    pairs where at least one endpoint carries the value."""
    attrs = np.asarray(attributes)
    profile = {}
    for value in np.unique(attrs):
        index = build_pair_index(
            class_labels, attrs, attribute_value=int(value),
            max_pairs=max_pairs, seed=seed)
        profile[int(value)] = alignment_expectations(emb, index)
    return profile


def uniformity_profile(emb, partition: dict) -> dict:
    """Per-subgroup spectral uniformity over the subgroup's own rows."""
    profile = {}
    for value, idx in sorted(partition.items()):
        idx = np.asarray(idx)
        if idx.size == 0:
            raise EmptySubgroup(value)
        profile[value] = u_kl(emb, restrict_to=idx)
    return profile


def compute_gap(
    per_subgroup: dict,
    convention: str,
    subgroup_sizes: dict | None = None,
    higher_is_better: bool = True,
    metric: str = "",
) -> GapReport:
    """One scalar gap from per-subgroup values under a named convention.

    majority_vs_minority: value of the largest subgroup minus the smallest
    (requires subgroup_sizes). worst_group: mean over the better-performing
    subgroups minus the worst performer. top_half_vs_bottom_half: mean of
    the better half minus the mean of the worse half (middle group dropped
    when the count is odd). "Better" follows the metric's polarity.
    """
    if convention not in GAP_CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    if len(per_subgroup) < 2:
        raise TooFewSubgroups(f"need >= 2 subgroups, got {len(per_subgroup)}")
    keys = sorted(per_subgroup)
    values = np.array([float(per_subgroup[k]) for k in keys])

    if convention == "majority_vs_minority":
        if subgroup_sizes is None:
            raise ValueError("majority_vs_minority needs subgroup_sizes")
        sizes = np.array([subgroup_sizes[k] for k in keys])
        majority = int(np.argmax(sizes))
        order = np.argsort(sizes, kind="stable")
        minority = int(order[0]) if int(order[0]) != majority else int(order[1])
        gap = values[majority] - values[minority]
    elif convention == "worst_group":
        scored = values if higher_is_better else -values
        worst = int(np.argmin(scored))
        others = np.delete(values, worst)
        gap = float(others.mean() - values[worst])
    else:
        scored = values if higher_is_better else -values
        order = np.argsort(scored, kind="stable")
        half = len(values) // 2
        bottom = values[order[:half]]
        top = values[order[-half:]]
        gap = float(top.mean() - bottom.mean())
    return GapReport(metric, convention, dict(zip(keys, values.tolist())), gap=float(gap))


def aggregate_over_seeds(reports: list[GapReport]) -> GapReport:
    """Mean and unbiased sample std of the gap across per-seed reports."""
    if len(reports) < 2:
        raise InsufficientRuns("need >= 2 runs to aggregate")
    metric = reports[0].metric
    convention = reports[0].convention
    if any(r.metric != metric or r.convention != convention for r in reports):
        raise ValueError("reports must share metric and convention")
    gaps = np.array([r.gap for r in reports], dtype=np.float64)
    keys = sorted(reports[0].per_subgroup)
    mean_profile = {
        k: float(np.mean([r.per_subgroup[k] for r in reports])) for k in keys
    }
    return GapReport(
        metric,
        convention,
        mean_profile,
        gap_mean=float(gaps.mean()),
        gap_std=float(gaps.std(ddof=1)),
        n_seeds=len(reports),
    )
