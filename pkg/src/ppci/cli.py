"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import dgp, estimators, nn
from .diagnostics import ProbeConfig, calibration_audit, lifting_probe
from .errors import ConfigError, DataError, NumericalError
from .harness import BenchmarkConfig, run_benchmark, summarize


def _cmd_generate(args):
    spec = dgp.DgpSpec.named(args.dgp)
    ds = dgp.sample(spec, args.n, args.seed)
    if args.unlabeled:
        ds, truth = dgp.strip_labels(ds)
        np.save(args.out + ".labels.npy", truth)
    dgp.save_dataset(ds, args.out)
    print(f"wrote {args.n} units from spec {args.dgp} to {args.out}")


def _cmd_train(args):
    ds = dgp.load_dataset(args.data)
    cfg = nn.TrainConfig(objective=args.objective,
                         penalty_lambda=args.penalty_lambda,
                         environment_variable=args.env,
                         learning_rate=args.lr, epochs=args.epochs,
                         batch_size=args.batch_size, seed=args.seed)
    sizes = [dgp.IMAGE_SHAPE[0] * dgp.IMAGE_SHAPE[1] * dgp.IMAGE_SHAPE[2]]
    sizes += [int(s) for s in args.hidden.split(",") if s]
    sizes.append(nn.N_CLASSES)
    if args.objective == "derm":
        from .objectives import derm_weights
        weights = derm_weights(ds)
    else:
        weights = np.ones(len(ds))
    model = nn.init_predictor(sizes, args.seed)
    model = nn.train_on_dataset(model, ds, weights, cfg)
    nn.save_predictor(model, args.out)
    acc = float(np.mean(nn.predict(model, ds) == ds.y))
    print(f"trained {args.objective} model, training accuracy {acc:.4f},"
          f" saved to {args.out}")


def _cmd_predict(args):
    model = nn.load_predictor(args.model)
    ds = dgp.load_dataset(args.data)
    preds = nn.predict(model, ds)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "y_pred"])
        for i, y in enumerate(preds):
            writer.writerow([i, int(y)])
    print(f"wrote {len(preds)} predictions to {args.out}")


def _load_predictions(path, n):
    with open(path) as f:
        reader = csv.DictReader(f)
        preds = [float(rec["y_pred"]) for rec in reader]
    if len(preds) != n:
        raise DataError(
            f"prediction count {len(preds)} does not match dataset size {n}")
    return np.array(preds)


def _cmd_estimate(args):
    ds = dgp.load_dataset(args.data)
    if args.labels:
        if not ds.labeled:
            raise DataError("--labels requested but the dataset is unlabeled")
        outcome = ds.y
    else:
        if not args.predictions:
            raise ConfigError("need --predictions or --labels")
        outcome = _load_predictions(args.predictions, len(ds))
    if args.estimator == "diff":
        est = estimators.difference_in_means(outcome, ds.t, args.alpha)
        print(est.to_json(method="diff_means"))
        return
    adjust = tuple(c for c in args.adjust.split(",") if c)
    strata = list(zip(*(ds.column(c) for c in adjust)))
    nuis = estimators.fit_nuisances(outcome, ds.t, strata,
                                    randomized=args.randomized)
    est = estimators.aipw(outcome, ds.t, strata, nuis, args.alpha)
    print(est.to_json(method="aipw"))


def _cmd_audit(args):
    ds = dgp.load_dataset(args.data)
    model = nn.load_predictor(args.model)
    if not ds.labeled:
        raise DataError(
            "audits need outcome labels: a target sample without annotations"
            " cannot be checked for calibration or lifting"
        )
    strata = list(zip(ds.t, ds.w, ds.u))
    if args.kind == "calibration":
        preds = nn.predict(model, ds)
        report = calibration_audit(ds.y, preds, strata,
                                   z_threshold=args.z_threshold)
        print(report.to_json())
    else:
        reps = nn.representation(model, ds)
        report = lifting_probe(reps, strata, ds.y, ProbeConfig(seed=args.seed))
        print(report.to_json())


def _cmd_benchmark(args):
    cfg = BenchmarkConfig.from_json(args.config)
    if args.out:
        cfg.output_path = args.out
    rows = run_benchmark(cfg, workers=args.workers)
    summary = summarize(rows)
    for (dgp_name, method), stats in sorted(summary.items()):
        print(f"{dgp_name:>8} {method:>14}  bias {stats['mean_bias']:+.4f}"
              f" +- {stats['std_bias']:.4f}  coverage"
              f" {stats['coverage_rate']:.2f}  ({stats['n_reps']} reps,"
              f" {stats['n_failed']} failed)")
    if cfg.output_path:
        print(f"result table written to {cfg.output_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppci")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic experiment")
    p.add_argument("--dgp", required=True, choices=list("ABCDE"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--unlabeled", action="store_true",
                   help="strip labels; sealed truth goes to <out>.labels.npy")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train an outcome predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--objective", default="erm", choices=nn.OBJECTIVES)
    p.add_argument("--lambda", dest="penalty_lambda", type=float, default=0.0)
    p.add_argument("--env", default="w",
                   help="environment column for vrex/irm")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.0001)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden", default="64",
                   help="comma-separated hidden layer sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="impute labels with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("estimate", help="estimate the ATE")
    p.add_argument("--data", required=True)
    p.add_argument("--predictions")
    p.add_argument("--labels", action="store_true")
    p.add_argument("--estimator", default="aipw", choices=["aipw", "diff"])
    p.add_argument("--adjust", default="w")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--randomized", action="store_true",
                   help="treat the sample as an RCT (constant propensity)")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("audit", help="run predictor validity diagnostics")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--calibration", dest="kind", action="store_const",
                       const="calibration")
    group.add_argument("--lifting", dest="kind", action="store_const",
                       const="lifting")
    p.add_argument("--z-threshold", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("benchmark", help="run a Monte Carlo benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
