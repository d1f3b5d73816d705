"""Monte Carlo engine: generate, train, impute, estimate, audit, repeat.

Each replication is a pure function of (base_seed + replication index);
per-stage sub-seeds are derived by hashing labeled strings, so serial
and parallel execution produce identical result tables.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import dgp, estimators, nn
from .diagnostics import ProbeConfig, calibration_audit, lifting_probe
from .errors import ConfigError, DataError, PpciError
from .objectives import derm_weights

DEFAULT_LAYER_SIZES = (2352, 64, 10)
GROUND_TRUTH = "ground_truth"


def stage_seed(seed_r: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed_r}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2 ** 63)


@dataclass
class MethodConfig:
    name: str
    train: nn.TrainConfig | None = None      # None: use true target labels
    layer_sizes: tuple = DEFAULT_LAYER_SIZES

    @classmethod
    def from_dict(cls, d: dict) -> "MethodConfig":
        d = dict(d)
        name = d.pop("name")
        layer_sizes = tuple(d.pop("layer_sizes", DEFAULT_LAYER_SIZES))
        if d.pop("ground_truth", False) or name == GROUND_TRUTH:
            return cls(name=GROUND_TRUTH, train=None)
        train_fields = {f.name for f in fields(nn.TrainConfig)}
        unknown = set(d) - train_fields
        if unknown:
            raise ConfigError(f"unknown method options {sorted(unknown)}")
        return cls(name=name, train=nn.TrainConfig(**d),
                   layer_sizes=layer_sizes)


@dataclass
class BenchmarkConfig:
    train_spec: dgp.DgpSpec
    target_specs: list
    n_train: int
    n_target: int
    replications: int
    methods: list
    estimator: str = "aipw"
    adjust_set: tuple = ("w",)
    base_seed: int = 0
    output_path: str | None = None
    alpha: float = 0.05
    diagnostics_sample: int = 2000
    derm_z_columns: tuple = ("t", "w", "u")

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        if self.estimator not in ("aipw", "diff_means"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if not self.target_specs:
            raise ConfigError("need at least one target spec")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        d = dict(d)

        def spec_of(v):
            if isinstance(v, str):
                return dgp.DgpSpec.named(v)
            return dgp.DgpSpec(**v)

        try:
            d["train_spec"] = spec_of(d["train_spec"])
            d["target_specs"] = [spec_of(v) for v in d["target_specs"]]
            d["methods"] = [MethodConfig.from_dict(m) for m in d["methods"]]
        except KeyError as exc:
            raise ConfigError(f"missing benchmark config field: {exc}") from exc
        if "adjust_set" in d:
            d["adjust_set"] = tuple(d["adjust_set"])
        if "derm_z_columns" in d:
            d["derm_z_columns"] = tuple(d["derm_z_columns"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown benchmark config fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "BenchmarkConfig":
        try:
            with open(path) as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read benchmark config {path}: {exc}")
        return cls.from_dict(raw)


RESULT_FIELDS = ("replication", "dgp", "method", "tau_hat", "tau_true",
                 "bias", "se", "ci_low", "ci_high", "covered",
                 "train_accuracy", "calibration_max_z", "lifting_excess")


@dataclass
class ResultRow:
    replication: int
    dgp: str
    method: str
    tau_hat: float
    tau_true: float
    bias: float
    se: float
    ci_low: float
    ci_high: float
    covered: bool
    train_accuracy: float
    calibration_max_z: float
    lifting_excess: float


def _estimate(cfg: BenchmarkConfig, outcome, target: dgp.Dataset,
              spec: dgp.DgpSpec):
    if cfg.estimator == "diff_means":
        return estimators.difference_in_means(outcome, target.t, cfg.alpha)
    strata = list(zip(*(target.column(c) for c in cfg.adjust_set)))
    nuis = estimators.fit_nuisances(outcome, target.t, strata,
                                    randomized=spec.randomized)
    return estimators.aipw(outcome, target.t, strata, nuis, cfg.alpha)


def _row(rep, spec_name, method, est, tau_true, train_accuracy=float("nan"),
         calibration_max_z=float("nan"), lifting_excess=float("nan")):
    bias = est.tau_hat - tau_true
    return ResultRow(replication=rep, dgp=spec_name, method=method,
                     tau_hat=est.tau_hat, tau_true=tau_true, bias=bias,
                     se=est.se, ci_low=est.ci_low, ci_high=est.ci_high,
                     covered=bool(est.ci_low <= tau_true <= est.ci_high),
                     train_accuracy=train_accuracy,
                     calibration_max_z=calibration_max_z,
                     lifting_excess=lifting_excess)


def _failed_row(rep, spec_name, method):
    nan = float("nan")
    return ResultRow(rep, spec_name, method, nan, nan, nan, nan, nan, nan,
                     False, nan, nan, nan)


def run_replication(cfg: BenchmarkConfig, rep: int) -> list:
    seed_r = cfg.base_seed + rep
    predictor_methods = [m for m in cfg.methods if m.train is not None]
    need_images = bool(predictor_methods)

    train_ds = dgp.sample(cfg.train_spec, cfg.n_train,
                          stage_seed(seed_r, "train-data"),
                          with_images=need_images)
    targets = []
    for i, spec in enumerate(cfg.target_specs):
        full = dgp.sample(spec, cfg.n_target,
                          stage_seed(seed_r, f"target-data-{i}-{spec.name}"),
                          with_images=need_images)
        unlabeled, truth = dgp.strip_labels(full)
        targets.append((spec, unlabeled, truth))

    rows = []
    # ground truth first: estimate on the sealed true labels
    for spec, unlabeled, truth in targets:
        try:
            est = _estimate(cfg, truth, unlabeled, spec)
            rows.append(_row(rep, spec.name, GROUND_TRUTH, est,
                             dgp.true_ate(spec)))
        except PpciError:
            rows.append(_failed_row(rep, spec.name, GROUND_TRUTH))

    for m in predictor_methods:
        try:
            if m.train.objective == "derm":
                weights = derm_weights(train_ds, cfg.derm_z_columns)
            else:
                weights = np.ones(len(train_ds))
            model = nn.init_predictor(
                m.layer_sizes, stage_seed(seed_r, f"init-{m.name}"))
            train_cfg = replace(m.train,
                                seed=stage_seed(seed_r, f"shuffle-{m.name}"))
            model = nn.train_on_dataset(model, train_ds, weights, train_cfg)

            fitted = nn.predict(model, train_ds)
            train_acc = float(np.mean(fitted == train_ds.y))
            strata = list(zip(train_ds.t, train_ds.w, train_ds.u))
            calib = calibration_audit(train_ds.y, fitted, strata)
            k = min(cfg.diagnostics_sample, len(train_ds))
            reps_mat = nn.representation(model, train_ds.x[:k])
            probe = lifting_probe(
                reps_mat, strata[:k], train_ds.y[:k],
                ProbeConfig(seed=stage_seed(seed_r, f"probe-{m.name}")))
        except PpciError:
            for spec, _, _ in targets:
                rows.append(_failed_row(rep, spec.name, m.name))
            continue
        for spec, unlabeled, _ in targets:
            try:
                imputed = nn.predict(model, unlabeled)
                est = _estimate(cfg, imputed, unlabeled, spec)
                rows.append(_row(rep, spec.name, m.name, est,
                                 dgp.true_ate(spec), train_acc,
                                 calib.max_abs_z, probe.mean_excess))
            except PpciError:
                rows.append(_failed_row(rep, spec.name, m.name))
    return rows


def run_benchmark(cfg: BenchmarkConfig, workers: int = 1) -> list:
    """All replications in order; optionally writes the CSV result table."""
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    reps = range(cfg.replications)
    if workers == 1 or cfg.replications == 1:
        batches = [run_replication(cfg, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(run_replication, [cfg] * cfg.replications,
                                    reps))
    rows = [row for batch in batches for row in batch]
    if cfg.output_path:
        write_csv(rows, cfg.output_path)
    return rows


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RESULT_FIELDS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, name))
                             for name in RESULT_FIELDS])


def read_csv(path) -> list:
    rows = []
    with open(path) as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append(ResultRow(
                replication=int(rec["replication"]), dgp=rec["dgp"],
                method=rec["method"], tau_hat=float(rec["tau_hat"]),
                tau_true=float(rec["tau_true"]), bias=float(rec["bias"]),
                se=float(rec["se"]), ci_low=float(rec["ci_low"]),
                ci_high=float(rec["ci_high"]),
                covered=rec["covered"] == "true",
                train_accuracy=float(rec["train_accuracy"]),
                calibration_max_z=float(rec["calibration_max_z"]),
                lifting_excess=float(rec["lifting_excess"])))
    return rows


def summarize(rows) -> dict:
    """Per-(dgp, method) mean/std of bias and CI coverage rate."""
    if not rows:
        raise DataError("no result rows to summarize")
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.dgp, row.method), []).append(row)
    out = {}
    for key, members in groups.items():
        ok = [r for r in members if not math.isnan(r.bias)]
        biases = np.array([r.bias for r in ok])
        out[key] = {
            "n_reps": len(members),
            "n_failed": len(members) - len(ok),
            "mean_bias": float(biases.mean()) if len(ok) else float("nan"),
            "std_bias": float(biases.std(ddof=1)) if len(ok) > 1 else 0.0,
            "coverage_rate": float(np.mean([r.covered for r in ok]))
            if len(ok) else float("nan"),
        }
    return out
