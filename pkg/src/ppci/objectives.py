"""Importance weights that decorrelate outcomes from experimental settings.

The target joint over (label, stratum) keeps the stratum marginal
proportional to the conditional label variance and makes the label
uniform over its empirical support within each stratum. Training on the
ratio weights removes any label signal carried by the settings whenever
the per-stratum supports are full.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dgp import Dataset
from .errors import DataError


@dataclass
class WeightTable:
    z_marginal: dict
    cond_support: dict
    cond_variance: dict
    joint_target: dict
    joint_empirical: dict
    weights: dict
    n: int
    label_support: frozenset = field(default_factory=frozenset)


def _canonical_key(key):
    if isinstance(key, (tuple, list, np.ndarray)):
        return tuple(v.item() if isinstance(v, np.generic) else v for v in key)
    return key.item() if isinstance(key, np.generic) else key


def build_weight_table(labels, strata) -> WeightTable:
    """Estimate the reweighting table from observed (label, stratum) pairs."""
    labels = [int(v) for v in labels]
    keys = [_canonical_key(k) for k in strata]
    n = len(labels)
    if n < 1 or len(keys) != n:
        raise DataError("labels and strata must be non-empty and equal length")

    by_stratum: dict = {}
    joint_counts: dict = {}
    for y, z in zip(labels, keys):
        by_stratum.setdefault(z, []).append(y)
        joint_counts[(y, z)] = joint_counts.get((y, z), 0) + 1

    cond_support = {z: frozenset(ys) for z, ys in by_stratum.items()}
    cond_variance = {z: float(np.var(ys)) for z, ys in by_stratum.items()}
    total_var = sum(cond_variance.values())
    if total_var <= 0.0:
        raise DataError(
            "outcome fully determined by experimental settings: every stratum"
            " has zero label variance, no deconfounded distribution exists"
        )
    z_marginal = {z: v / total_var for z, v in cond_variance.items()}
    joint_empirical = {k: c / n for k, c in joint_counts.items()}
    joint_target = {}
    for z, support in cond_support.items():
        for y in support:
            joint_target[(y, z)] = z_marginal[z] / len(support)

    weights = {k: joint_target.get(k, 0.0) / joint_empirical[k]
               for k in joint_empirical}
    # target mass lives on the empirical support, so the observation mean is
    # already 1; rescale anyway to pin the ERM scale against rounding
    mean_w = sum(weights[k] * joint_counts[k] for k in weights) / n
    weights = {k: v / mean_w for k, v in weights.items()}
    return WeightTable(z_marginal=z_marginal, cond_support=cond_support,
                       cond_variance=cond_variance, joint_target=joint_target,
                       joint_empirical=joint_empirical, weights=weights, n=n,
                       label_support=frozenset(labels))


def observation_weights(table: WeightTable, labels, strata) -> np.ndarray:
    """Per-unit weights for the (label, stratum) pairs the table was built on."""
    out = np.empty(len(labels))
    for i, (y, z) in enumerate(zip(labels, strata)):
        key = (int(y), _canonical_key(z))
        if key not in table.weights:
            raise DataError(f"pair {key} was not observed when building the table")
        out[i] = table.weights[key]
    return out


def derm_weights(ds: Dataset, z_columns=None) -> np.ndarray:
    """Convenience path: weight table over a labeled dataset's strata."""
    if not ds.labeled:
        raise DataError("weights require a labeled dataset")
    cols = tuple(z_columns) if z_columns is not None else ds.schema
    strata = [tuple(int(ds.column(c)[i]) for c in cols) for i in range(len(ds))]
    table = build_weight_table(ds.y, strata)
    return observation_weights(table, ds.y, strata)


@dataclass
class SupportReport:
    full: bool
    label_support: frozenset
    violations: dict  # stratum -> missing labels


def check_full_support(table: WeightTable) -> SupportReport:
    """Full iff every positive-variance stratum supports every observed label."""
    violations = {}
    for z, var in table.cond_variance.items():
        if var <= 0.0:
            continue
        missing = table.label_support - table.cond_support[z]
        if missing:
            violations[z] = frozenset(missing)
    return SupportReport(full=not violations,
                         label_support=table.label_support,
                         violations=violations)


def reweighted_joint(table: WeightTable) -> dict:
    """Empirical joint times weights, renormalized to a distribution."""
    raw = {k: table.joint_empirical[k] * table.weights[k]
           for k in table.joint_empirical}
    total = sum(raw.values())
    return {k: v / total for k, v in raw.items()}


def export_weight_table_csv(table: WeightTable, path, z_names=("t", "w", "u")):
    keys = sorted(table.joint_empirical)
    first_z = keys[0][1]
    if not isinstance(first_z, tuple):
        z_names = (z_names[0],)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(list(z_names[:len(first_z) if isinstance(first_z, tuple) else 1])
                        + ["y", "count", "cond_variance", "target_prob",
                           "empirical_prob", "weight"])
        for y, z in keys:
            z_vals = list(z) if isinstance(z, tuple) else [z]
            writer.writerow(z_vals + [
                y,
                round(table.joint_empirical[(y, z)] * table.n),
                repr(table.cond_variance[z]),
                repr(table.joint_target.get((y, z), 0.0)),
                repr(table.joint_empirical[(y, z)]),
                repr(table.weights[(y, z)]),
            ])
