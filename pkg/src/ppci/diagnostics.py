"""Validity audits for a candidate outcome predictor.

Calibration: per-stratum mean residual z-tests on labeled data.
Lifting: a held-out linear probe trying to read the experimental
settings back out of the representation within each label class; if it
beats the majority baseline, the representation leaks settings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.linear_model import LogisticRegression

from .errors import DataError


@dataclass
class StratumRow:
    stratum: tuple
    n: int
    mean_residual: float
    std_error: float
    z_score: float


@dataclass
class CalibrationReport:
    rows: list
    max_abs_z: float
    global_stat: float
    passed: bool
    z_threshold: float
    excluded: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "rows": [asdict(r) for r in self.rows],
            "max_abs_z": self.max_abs_z,
            "global_stat": self.global_stat,
            "passed": self.passed,
            "z_threshold": self.z_threshold,
            "excluded": [asdict(r) for r in self.excluded],
        })

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["stratum", "n", "mean_residual", "std_error",
                             "z_score"])
            for r in self.rows + self.excluded:
                writer.writerow([r.stratum, r.n, repr(r.mean_residual),
                                 repr(r.std_error), repr(r.z_score)])


def _keys(strata):
    out = []
    for z in strata:
        if isinstance(z, (tuple, list, np.ndarray)):
            out.append(tuple(int(v) for v in z))
        else:
            out.append((int(z),))
    return out


def calibration_audit(y_true, y_pred, strata,
                      z_threshold: float = 3.0) -> CalibrationReport:
    """Tests mean(Y - g(X)) = 0 within every stratum of the settings."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or len(y_true) == 0:
        raise DataError("need equal-length non-empty label vectors")
    keys = _keys(strata)
    if len(keys) != len(y_true):
        raise DataError("strata length does not match labels")
    residuals = y_true - y_pred
    groups: dict = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    rows, excluded = [], []
    for k in sorted(groups):
        idx = np.array(groups[k])
        r = residuals[idx]
        mean = float(r.mean())
        if len(r) < 2:
            # one observation: no standard error, report but do not judge
            excluded.append(StratumRow(k, len(r), mean, float("nan"),
                                       float("nan")))
            continue
        std = float(r.std(ddof=1))
        se = std / np.sqrt(len(r))
        if se == 0.0:
            z = 0.0 if mean == 0.0 else float("inf")
        else:
            z = mean / se
        rows.append(StratumRow(k, len(r), mean, float(se), float(z)))
    zs = np.array([row.z_score for row in rows]) if rows else np.array([0.0])
    max_abs_z = float(np.max(np.abs(zs)))
    return CalibrationReport(rows=rows, max_abs_z=max_abs_z,
                             global_stat=float(np.sum(zs ** 2)),
                             passed=bool(max_abs_z <= z_threshold),
                             z_threshold=z_threshold, excluded=excluded)


@dataclass
class ProbeConfig:
    test_fraction: float = 0.3
    seed: int = 0
    max_iter: int = 500
    regularization_c: float = 100.0
    excess_tolerance: float = 0.05
    min_class_size: int = 10


@dataclass
class LabelRow:
    y: int
    n: int
    n_strata: int
    probe_accuracy: float
    baseline_accuracy: float
    excess: float


@dataclass
class LiftingReport:
    rows: list
    mean_excess: float
    passed: bool
    tolerance: float

    def to_json(self) -> str:
        return json.dumps({
            "rows": [asdict(r) for r in self.rows],
            "mean_excess": self.mean_excess,
            "passed": self.passed,
            "tolerance": self.tolerance,
        })

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["y", "n", "n_strata", "probe_accuracy",
                             "baseline_accuracy", "excess"])
            for r in self.rows:
                writer.writerow([r.y, r.n, r.n_strata, repr(r.probe_accuracy),
                                 repr(r.baseline_accuracy), repr(r.excess)])


def lifting_probe(representations, strata, labels,
                  config: ProbeConfig | None = None) -> LiftingReport:
    """Within each label class, can a linear probe recover the stratum?"""
    cfg = config or ProbeConfig()
    reps = np.asarray(representations, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    keys = _keys(strata)
    if len(reps) != len(labels) or len(keys) != len(labels):
        raise DataError("representations, strata and labels must align")
    key_ids = {k: i for i, k in enumerate(sorted(set(keys)))}
    z_ids = np.array([key_ids[k] for k in keys])
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for y in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == y)
        z_y = z_ids[idx]
        uniq = np.unique(z_y)
        if len(uniq) < 2 or len(idx) < cfg.min_class_size:
            counts = np.bincount(z_y)
            base = float(counts.max() / len(z_y))
            rows.append(LabelRow(int(y), len(idx), len(uniq), base, base, 0.0))
            continue
        perm = rng.permutation(len(idx))
        n_test = max(1, int(round(cfg.test_fraction * len(idx))))
        test, train = perm[:n_test], perm[n_test:]
        x_tr, x_te = reps[idx[train]], reps[idx[test]]
        z_tr, z_te = z_y[train], z_y[test]
        if len(np.unique(z_tr)) < 2:
            base = float(np.mean(z_te == np.bincount(z_tr).argmax()))
            rows.append(LabelRow(int(y), len(idx), len(uniq), base, base, 0.0))
            continue
        mean = x_tr.mean(axis=0)
        std = x_tr.std(axis=0)
        std[std == 0] = 1.0
        probe = LogisticRegression(C=cfg.regularization_c,
                                   max_iter=cfg.max_iter)
        probe.fit((x_tr - mean) / std, z_tr)
        acc = float(np.mean(probe.predict((x_te - mean) / std) == z_te))
        majority = int(np.bincount(z_tr).argmax())
        base = float(np.mean(z_te == majority))
        rows.append(LabelRow(int(y), len(idx), len(uniq), acc, base,
                             acc - base))
    mean_excess = float(np.mean([r.excess for r in rows])) if rows else 0.0
    return LiftingReport(rows=rows, mean_excess=mean_excess,
                         passed=bool(mean_excess <= cfg.excess_tolerance),
                         tolerance=cfg.excess_tolerance)
