"""Command-line interface.

Stage subcommands move data between files in documented formats
(canonical CSV, checkpoint JSON, estimates CSV, prediction-record CSV),
so any pipeline prefix can be inspected or swapped out.  ``run`` and
``sweep`` execute the full experiment described by a TOML config.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import (
    apply_normalization,
    fit_normalization,
    ingest_canonical_csv,
    ingest_cmapss,
    write_canonical_csv,
)
from .experiment import (
    apply_axis,
    load_config,
    provenance,
    run_experiment,
    sweep,
)
from .labeling import LabelingPolicy, label_dataset
from .metrics import compute_metrics, read_records_csv, write_records_csv, PredictionRecord
from .models import (
    TrainConfig,
    build_model,
    interval_wise_median,
    load_model,
    predict_posterior,
    read_estimates_csv,
    save_model,
    train,
    write_estimates_csv,
)
from .rectify import (
    LMConfig,
    fit_theta,
    linear_rul_prediction,
    prediction_trace,
    rectify,
    write_diagnostics_csv,
)
from .scarcity import ScarcityConfig, scarcify
from .seeding import RNG_ALGORITHM

logger = logging.getLogger("psrul")


def _policy_from_args(args) -> LabelingPolicy:
    if args.config:
        return load_config(args.config).policy
    base = LabelingPolicy.default(args.family)
    overrides = {}
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.beta is not None:
        overrides["beta"] = args.beta
    if args.theta_divisor is not None:
        overrides["theta_divisor"] = args.theta_divisor
    return replace(base, **overrides)


def _add_policy_flags(parser):
    parser.add_argument("--config", help="TOML config supplying the [labeling] table")
    parser.add_argument("--family", default="weibull", choices=("linear", "piecewise", "weibull"))
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--beta", type=float, default=None)
    parser.add_argument("--theta-divisor", type=float, default=None)


def cmd_ingest(args) -> int:
    if args.cmapss:
        columns = [int(c) for c in args.columns.split(",")] if args.columns else None
        ds = ingest_cmapss(args.cmapss, split=args.split, rul_path=args.rul, columns=columns)
        origin = f"cmapss {args.cmapss} split={args.split}"
    else:
        ds = ingest_canonical_csv(args.canonical)
        origin = f"canonical {args.canonical}"
    write_canonical_csv(ds, args.out, header_comments=[f"ingested from {origin}"])
    print(
        f"wrote {args.out}: N={ds.num_subjects} M={ds.total_samples} "
        f"T={ds.max_interval} V={ds.num_variables}"
    )
    return 0


def cmd_synth(args) -> int:
    from .synth import SyntheticSpec, generate_synthetic

    policy = _policy_from_args(args)
    spec = SyntheticSpec(
        subjects=args.subjects,
        lifetime_range=(args.lifetime[0], args.lifetime[1]),
        num_variables=args.variables,
        mixing_seed=args.mixing_seed,
        noise_sigma=args.sigma,
        samples_per_interval=(args.samples_per_interval[0], args.samples_per_interval[1]),
        truncate_range=tuple(args.truncate) if args.truncate else None,
    )
    ds = generate_synthetic(spec, policy, seed=args.seed)
    write_canonical_csv(
        ds, args.out, header_comments=[f"synthetic seed={args.seed} rng={RNG_ALGORITHM}"]
    )
    print(f"wrote {args.out}: N={ds.num_subjects} M={ds.total_samples}")
    return 0


def cmd_scarcify(args) -> int:
    ds = ingest_canonical_csv(getattr(args, "in"))
    cfg = ScarcityConfig(
        scarcity_fraction=args.scarcity, seed=args.seed, keep_last=args.keep_last
    )
    out = scarcify(ds, cfg)
    write_canonical_csv(
        out,
        args.out,
        header_comments=[
            f"scarcity={args.scarcity} seed={args.seed} keep_last={args.keep_last} "
            f"rng={RNG_ALGORITHM}"
        ],
    )
    print(f"wrote {args.out}: kept {out.total_samples} of {ds.total_samples} samples")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ds = ingest_canonical_csv(getattr(args, "in"))
    stats = fit_normalization(ds)
    ds = apply_normalization(ds, stats)
    ds = label_dataset(ds, cfg.policy)
    model = build_model(
        cfg.model,
        ds.num_variables,
        seed=args.seed if args.seed is not None else cfg.base_seed,
        hidden=cfg.hidden,
        dropout=cfg.dropout,
        gamma=cfg.gamma,
        gated_width=cfg.gated_width,
        gated_layers=cfg.gated_layers,
        head_hidden=cfg.head_hidden,
    )
    train_cfg = TrainConfig(
        sample_size=cfg.sample_size,
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        gamma=cfg.gamma,
        dropout=cfg.dropout,
        seed=args.seed if args.seed is not None else cfg.base_seed,
    )
    _, trace = train(model, ds, train_cfg)
    save_model(model, args.out, normalization=stats)
    first = trace[0] if trace else float("nan")
    last = trace[-1] if trace else float("nan")
    print(f"wrote {args.out}: loss {first:.6g} -> {last:.6g} over {len(trace)} epochs")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    ds = ingest_canonical_csv(getattr(args, "in"))
    if model.normalization is not None:
        ds = apply_normalization(ds, model.normalization)
    estimates = predict_posterior(model, ds, test_sample_cap=args.cap, seed=args.seed)
    if args.median:
        estimates = [interval_wise_median(p) for p in estimates]
    write_estimates_csv(estimates, args.out, header_comments=[f"model {args.model}"])
    print(f"wrote {args.out}: {sum(p.count for p in estimates)} estimates")
    return 0


def cmd_rectify(args) -> int:
    policy = _policy_from_args(args)
    estimates = read_estimates_csv(args.estimates)
    lm = LMConfig()
    fits = [fit_theta(p, policy, lm) for p in estimates]
    if args.diagnostics:
        write_diagnostics_csv(fits, args.diagnostics)
    if args.trace:
        with Path(args.trace).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "interval", "rectified"])
            for p in estimates:
                for t, value in prediction_trace(
                    p, policy, lm, refit_every_interval=args.refit_every_interval
                ):
                    writer.writerow([p.subject_id, t, repr(value)])
    records = []
    skipped = 0
    for p, fit in zip(estimates, fits):
        horizon = p.latest_interval
        if p.true_rul is None:
            skipped += 1
            continue
        if args.space == "linear":
            predicted = linear_rul_prediction(fit, policy, float(horizon))
            truth = float(p.true_rul)
        else:
            predicted = rectify(fit, float(horizon))
            truth = float(
                policy.function_for(horizon + p.true_rul).value(float(horizon))
            )
        records.append(PredictionRecord(p.subject_id, horizon, None, predicted, truth))
    write_records_csv(
        records, args.out, header_comments=[f"space={args.space} rectified predictions"]
    )
    msg = f"wrote {args.out}: {len(records)} rectified predictions"
    if skipped:
        msg += f" ({skipped} subjects without ground truth skipped)"
    print(msg)
    return 0


def cmd_evaluate(args) -> int:
    records = read_records_csv(args.records)
    report = compute_metrics(records)
    lines = report.lines()
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _load_run_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def cmd_run(args) -> int:
    cfg = _load_run_config(args)
    summary = run_experiment(cfg, args.out)
    for line in provenance(cfg):
        logger.info("config: %s", line)
    for metric in sorted(summary):
        mean, std, n = summary[metric]
        print(f"{metric}: {mean:.6g} +/- {std:.6g} (n={n})")
    print(f"results in {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    values = [float(v) for v in args.values.split(",")]
    apply_axis(cfg, args.axis, values[0])  # validates the axis early
    table = sweep(cfg, args.axis, values, args.out)
    for value in values:
        for metric in sorted(table[value]):
            mean, std, n = table[value][metric]
            print(f"{args.axis}={value:g} {metric}: {mean:.6g} +/- {std:.6g} (n={n})")
    print(f"results in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psrul",
        description="Parameterized static regression for RUL prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert external formats to canonical CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cmapss", help="whitespace 26-column benchmark file")
    src.add_argument("--canonical", help="canonical CSV to validate/rewrite")
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--rul", help="RUL sidecar for the test split")
    p.add_argument("--columns", help="comma-separated feature column indices")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic split")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--lifetime", type=int, nargs=2, metavar=("LO", "HI"), required=True)
    p.add_argument("--variables", type=int, default=5)
    p.add_argument("--mixing-seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--samples-per-interval", type=int, nargs=2, default=(1, 1),
                   metavar=("LO", "HI"))
    p.add_argument("--truncate", type=float, nargs=2, default=None, metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_policy_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scarcify", help="randomly subsample each subject")
    p.add_argument("--in", required=True)
    p.add_argument("--scarcity", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keep-last", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scarcify)

    p = sub.add_parser("train", help="train a model on a canonical CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="posterior estimates from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--cap", type=int, default=None, help="test-stage sample cap")
    p.add_argument("--median", action="store_true", help="interval-wise median")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rectify", help="fit the labeling curve and predict")
    p.add_argument("--estimates", required=True)
    p.add_argument("--space", default="label", choices=("label", "linear"))
    p.add_argument("--refit-every-interval", action="store_true")
    p.add_argument("--diagnostics", default=None)
    p.add_argument("--trace", default=None, help="per-interval prediction trace CSV")
    p.add_argument("--out", required=True)
    _add_policy_flags(p)
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("evaluate", help="metrics from a prediction-record CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the config across an axis")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=("scarcity", "B", "gamma"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
