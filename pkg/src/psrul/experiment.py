"""Experiment orchestration: config files, the full pipeline, sweeps.

A single experiment runs ingest -> normalize -> label -> scarcify ->
train -> posterior estimation -> (optional interval-median aggregation)
-> per-subject curve fitting -> rectified predictions -> metrics, once
per replicate with seed = base_seed + replicate index.  Replicates write
independent directories, so parallel execution cannot change any output
byte; the summary is the single merge point.

Truth (test labels / true RUL) enters only in the scoring stage:
``run_pipeline`` computes every product up to rectification without
touching it, which the leakage tests pin down.

Config files are TOML (flat tables, no code execution); every output
file starts with the fully-resolved config as ``# key = value`` comment
lines.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .data import (
    Dataset,
    apply_normalization,
    fit_normalization,
    ingest_canonical_csv,
    ingest_cmapss,
)
from .labeling import LabelingPolicy, label_dataset
from .metrics import (
    PredictionRecord,
    compute_metrics,
    rmse_subject,
    s_score,
    write_records_csv,
)
from .models import (
    PosteriorEstimates,
    TrainConfig,
    build_model,
    interval_wise_median,
    predict_posterior,
    train,
)
from .rectify import (
    RectificationResult,
    fit_theta,
    linear_rul_prediction,
    prediction_trace,
    rectify,
    write_diagnostics_csv,
)
from .scarcity import ScarcityConfig, scarcify
from .seeding import RNG_ALGORITHM, derive_key
from .synth import SyntheticSpec, generate_synthetic

logger = logging.getLogger(__name__)

# Stage salts for per-replicate derived seeds.
_SALT_SYNTH_TRAIN = 0x10
_SALT_SYNTH_TEST = 0x11
_SALT_SCARCITY_TRAIN = 0x12
_SALT_SCARCITY_TEST = 0x13
_SALT_MODEL = 0x14
_SALT_TRAIN = 0x15
_SALT_PREDICT = 0x16

EVAL_SPACES = ("label", "linear", "both")
SWEEP_AXES = ("scarcity", "B", "gamma")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully-resolved experiment description (one config = one experiment)."""

    source: str = "synthetic"  # synthetic | cmapss | canonical
    train_path: str | None = None
    test_path: str | None = None
    rul_path: str | None = None
    columns: tuple[int, ...] | None = None
    synth_train: SyntheticSpec | None = None
    synth_test: SyntheticSpec | None = None
    generation_policy: LabelingPolicy | None = None  # None: same as policy

    policy: LabelingPolicy = field(default_factory=LabelingPolicy)

    model: str = "aer"
    hidden: tuple[int, ...] = (32, 16, 8)
    gated_width: int = 100
    gated_layers: int = 4
    head_hidden: tuple[int, ...] = (16, 8)

    sample_size: int = 100
    learning_rate: float = 1e-2
    epochs: int = 300
    gamma: float = 0.1
    dropout: float = 0.1
    test_sample_cap: int | None = None

    scarcity_train: float = 0.0
    scarcity_test: float = 0.0
    keep_last: bool = False
    scarcity_tied: bool = True  # sweep axis "scarcity" sets both fractions

    interval_median: bool = True
    eval_space: str = "label"
    refit_every_interval: bool = False

    replicates: int = 1
    base_seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "cmapss", "canonical"):
            raise ValueError(f"unknown data source {self.source!r}")
        if self.eval_space not in EVAL_SPACES:
            raise ValueError(f"eval_space must be one of {EVAL_SPACES}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.source == "synthetic":
            if self.synth_train is None or self.synth_test is None:
                raise ValueError("synthetic source needs train and test specs")
        elif self.train_path is None or self.test_path is None:
            raise ValueError(f"{self.source} source needs train_path and test_path")


def load_config(path: str | Path) -> ExperimentConfig:
    with Path(path).open("rb") as fh:
        return config_from_dict(tomllib.load(fh))


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a resolved config from parsed TOML tables."""
    data = dict(doc.get("data", {}))
    labeling = dict(doc.get("labeling", {}))
    model = dict(doc.get("model", {}))
    train_tbl = dict(doc.get("train", {}))
    scarcity = dict(doc.get("scarcity", {}))
    evaluation = dict(doc.get("evaluation", {}))
    run_tbl = dict(doc.get("run", {}))

    policy = LabelingPolicy.from_dict(labeling) if labeling else LabelingPolicy()

    source = data.get("source", "synthetic")
    synth_train = synth_test = None
    generation_policy = None
    if source == "synthetic":
        sy = dict(data.get("synthetic", {}))
        lifetime = tuple(sy.get("lifetime", (60, 150)))
        spi = tuple(sy.get("samples_per_interval", (1, 1)))
        common = dict(
            lifetime_range=(int(lifetime[0]), int(lifetime[1])),
            num_variables=int(sy.get("variables", 5)),
            mixing_seed=int(sy.get("mixing_seed", 0)),
            noise_sigma=float(sy.get("noise_sigma", 0.0)),
            samples_per_interval=(int(spi[0]), int(spi[1])),
        )
        synth_train = SyntheticSpec(subjects=int(sy.get("train_subjects", 10)), **common)
        truncate = sy.get("test_truncate", (0.5, 0.9))
        synth_test = SyntheticSpec(
            subjects=int(sy.get("test_subjects", 5)),
            truncate_range=(float(truncate[0]), float(truncate[1]))
            if truncate
            else None,
            **common,
        )
        health = {
            key[len("health_") :]: value
            for key, value in sy.items()
            if key.startswith("health_")
        }
        if health:
            generation_policy = LabelingPolicy.from_dict(health)

    fraction = scarcity.get("fraction")
    scarcity_train = float(scarcity.get("train_fraction", fraction or 0.0))
    scarcity_test = float(scarcity.get("test_fraction", fraction or 0.0))
    tied = "train_fraction" not in scarcity and "test_fraction" not in scarcity

    cap = train_tbl.get("test_sample_cap", 0)
    return ExperimentConfig(
        source=source,
        train_path=data.get("train_path"),
        test_path=data.get("test_path"),
        rul_path=data.get("rul_path"),
        columns=tuple(data["columns"]) if "columns" in data else None,
        synth_train=synth_train,
        synth_test=synth_test,
        generation_policy=generation_policy,
        policy=policy,
        model=model.get("model", "aer"),
        hidden=tuple(model.get("hidden", (32, 16, 8))),
        gated_width=int(model.get("gated_width", 100)),
        gated_layers=int(model.get("gated_layers", 4)),
        head_hidden=tuple(model.get("head_hidden", (16, 8))),
        sample_size=int(train_tbl.get("B", 100)),
        learning_rate=float(train_tbl.get("lr", 1e-2)),
        epochs=int(train_tbl.get("epochs", 300)),
        gamma=float(train_tbl.get("gamma", 0.1)),
        dropout=float(train_tbl.get("dropout", 0.1)),
        test_sample_cap=int(cap) if cap else None,
        scarcity_train=scarcity_train,
        scarcity_test=scarcity_test,
        keep_last=bool(scarcity.get("keep_last", False)),
        scarcity_tied=tied,
        interval_median=bool(evaluation.get("interval_median", True)),
        eval_space=evaluation.get("eval_space", "label"),
        refit_every_interval=bool(evaluation.get("refit_every_interval", False)),
        replicates=int(run_tbl.get("replicates", 1)),
        base_seed=int(run_tbl.get("base_seed", 0)),
        workers=int(run_tbl.get("workers", 1)),
    )


def provenance(cfg: ExperimentConfig, **extra) -> list[str]:
    """Fully-resolved config as sorted ``key = value`` lines."""
    items: dict[str, object] = {
        "rng": RNG_ALGORITHM,
        "source": cfg.source,
        "model": cfg.model,
        "hidden": list(cfg.hidden),
        "gated_width": cfg.gated_width,
        "gated_layers": cfg.gated_layers,
        "head_hidden": list(cfg.head_hidden),
        "B": cfg.sample_size,
        "lr": cfg.learning_rate,
        "epochs": cfg.epochs,
        "gamma": cfg.gamma,
        "dropout": cfg.dropout,
        "test_sample_cap": cfg.test_sample_cap,
        "scarcity_train": cfg.scarcity_train,
        "scarcity_test": cfg.scarcity_test,
        "keep_last": cfg.keep_last,
        "interval_median": cfg.interval_median,
        "eval_space": cfg.eval_space,
        "refit_every_interval": cfg.refit_every_interval,
        "replicates": cfg.replicates,
        "base_seed": cfg.base_seed,
    }
    for key, value in cfg.policy.to_dict().items():
        items[f"labeling_{key}"] = value
    if cfg.generation_policy is not None:
        for key, value in cfg.generation_policy.to_dict().items():
            items[f"health_{key}"] = value
    for name, spec in (("synth_train", cfg.synth_train), ("synth_test", cfg.synth_test)):
        if spec is not None:
            items[f"{name}_subjects"] = spec.subjects
            items[f"{name}_lifetime"] = list(spec.lifetime_range)
            items[f"{name}_variables"] = spec.num_variables
            items[f"{name}_mixing_seed"] = spec.mixing_seed
            items[f"{name}_noise_sigma"] = spec.noise_sigma
            items[f"{name}_samples_per_interval"] = list(spec.samples_per_interval)
            if spec.truncate_range:
                items[f"{name}_truncate"] = list(spec.truncate_range)
    for name, value in (("train_path", cfg.train_path), ("test_path", cfg.test_path),
                        ("rul_path", cfg.rul_path)):
        if value is not None:
            items[name] = value
    items.update(extra)
    return [f"{k} = {items[k]}" for k in sorted(items)]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineProducts:
    """Everything computed before truth is consulted."""

    train_trace: list[float]
    posterior: list[PosteriorEstimates]  # raw sample-wise estimates
    pr_inputs: list[PosteriorEstimates]  # what the curve fit consumed
    fits: list[RectificationResult]


def _load_splits(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    if cfg.source == "synthetic":
        gen_policy = cfg.generation_policy or cfg.policy
        train_ds = generate_synthetic(cfg.synth_train, gen_policy, _mix(seed, _SALT_SYNTH_TRAIN))
        test_ds = generate_synthetic(cfg.synth_test, gen_policy, _mix(seed, _SALT_SYNTH_TEST))
        return train_ds, test_ds
    if cfg.source == "cmapss":
        train_ds = ingest_cmapss(cfg.train_path, split="train", columns=cfg.columns)
        test_ds = ingest_cmapss(
            cfg.test_path, split="test", rul_path=cfg.rul_path, columns=cfg.columns
        )
        return train_ds, test_ds
    return ingest_canonical_csv(cfg.train_path), ingest_canonical_csv(cfg.test_path)


def _mix(seed: int, salt: int) -> int:
    # Stage seeds stay plain derived ints; streams re-derive from them.
    return derive_key(seed, salt)


def run_pipeline(cfg: ExperimentConfig, seed: int) -> PipelineProducts:
    """All stages up to rectified fits; never reads test labels or RUL."""
    train_ds, test_ds = _load_splits(cfg, seed)
    stats = fit_normalization(train_ds)
    train_ds = apply_normalization(train_ds, stats)
    test_ds = apply_normalization(test_ds, stats)
    train_ds = label_dataset(train_ds, cfg.policy)
    if cfg.scarcity_train > 0.0:
        train_ds = scarcify(
            train_ds,
            ScarcityConfig(cfg.scarcity_train, _mix(seed, _SALT_SCARCITY_TRAIN), cfg.keep_last),
        )
    if cfg.scarcity_test > 0.0:
        test_ds = scarcify(
            test_ds,
            ScarcityConfig(cfg.scarcity_test, _mix(seed, _SALT_SCARCITY_TEST), cfg.keep_last),
        )
    model = build_model(
        cfg.model,
        train_ds.num_variables,
        seed=_mix(seed, _SALT_MODEL),
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
        seed=_mix(seed, _SALT_TRAIN),
    )
    _, trace = train(model, train_ds, train_cfg)
    posterior = predict_posterior(
        model, test_ds, test_sample_cap=cfg.test_sample_cap, seed=_mix(seed, _SALT_PREDICT)
    )
    pr_inputs = (
        [interval_wise_median(p) for p in posterior] if cfg.interval_median else posterior
    )
    fits = [fit_theta(p, cfg.policy) for p in pr_inputs]
    return PipelineProducts(
        train_trace=trace, posterior=posterior, pr_inputs=pr_inputs, fits=fits
    )


@dataclass(frozen=True)
class ReplicateScore:
    metrics: dict
    subject_records: dict  # name -> list[PredictionRecord]
    interval_records: dict  # name -> list[PredictionRecord]
    trace_rows: list  # (subject, interval, posterior, rectified, truth)


def score_products(cfg: ExperimentConfig, products: PipelineProducts) -> ReplicateScore:
    """Compare products against ground truth; the only truth-reading stage."""
    policy = cfg.policy
    subj_post, subj_rect, subj_rect_lin = [], [], []
    int_post, int_rect, samp_post = [], [], []
    trace_rows = []
    for p, pr_in, fit in zip(products.posterior, products.pr_inputs, products.fits):
        if p.true_rul is None:
            raise ValueError(
                f"subject {p.subject_id}: no ground-truth RUL for evaluation"
            )
        horizon = p.latest_interval
        lifetime = horizon + p.true_rul
        truth_fn = policy.function_for(lifetime)
        truth_at_horizon = float(truth_fn.value(float(horizon)))
        raw_last = float(p.estimates[-1])
        rect_at_horizon = rectify(fit, float(horizon))
        subj_post.append(
            PredictionRecord(p.subject_id, horizon, None, raw_last, truth_at_horizon)
        )
        subj_rect.append(
            PredictionRecord(p.subject_id, horizon, None, rect_at_horizon, truth_at_horizon)
        )
        subj_rect_lin.append(
            PredictionRecord(
                p.subject_id,
                horizon,
                None,
                linear_rul_prediction(fit, policy, float(horizon)),
                float(p.true_rul),
            )
        )
        truth_cache = {}

        def truth_at(t):
            if t not in truth_cache:
                truth_cache[t] = float(truth_fn.value(float(t)))
            return truth_cache[t]

        # Sample-level posterior records (raw estimates).
        if p.sample_ids is not None:
            for j in range(p.count):
                samp_post.append(
                    PredictionRecord(
                        p.subject_id,
                        int(p.intervals[j]),
                        int(p.sample_ids[j]),
                        float(p.estimates[j]),
                        truth_at(int(p.intervals[j])),
                    )
                )
        # Interval-level posterior records (median aggregation).
        agg = pr_in if pr_in.sample_ids is None else interval_wise_median(p)
        rect_trace = {
            t: value
            for t, value in _trace_predictions(p, fit, policy, cfg)
        }
        for j in range(agg.count):
            t = int(agg.intervals[j])
            int_post.append(
                PredictionRecord(p.subject_id, t, None, float(agg.estimates[j]), truth_at(t))
            )
            int_rect.append(
                PredictionRecord(p.subject_id, t, None, rect_trace[t], truth_at(t))
            )
            trace_rows.append(
                (p.subject_id, t, float(agg.estimates[j]), rect_trace[t], truth_at(t))
            )
        if horizon not in set(int(v) for v in agg.intervals):
            int_rect.append(
                PredictionRecord(p.subject_id, horizon, None, rect_trace[horizon], truth_at(horizon))
            )
            trace_rows.append(
                (p.subject_id, horizon, None, rect_trace[horizon], truth_at(horizon))
            )

    metrics = {"n_test_subjects": len(products.posterior)}
    spaces = ("label", "linear") if cfg.eval_space == "both" else (cfg.eval_space,)
    if "label" in spaces:
        metrics["label_rmse_i_posterior"] = rmse_subject(subj_post)
        metrics["label_rmse_i_rectified"] = rmse_subject(subj_rect)
        metrics["label_s_score_posterior"] = s_score(subj_post)
        metrics["label_s_score_rectified"] = s_score(subj_rect)
        rpt = compute_metrics(samp_post + int_post)
        if rpt.rmse_ts is not None:
            metrics["label_rmse_ts_posterior"] = rpt.rmse_ts
        if rpt.rmse_t is not None:
            metrics["label_rmse_t_posterior"] = rpt.rmse_t
            metrics["label_rmse_it_posterior"] = rpt.rmse_it
        rpt = compute_metrics(int_rect)
        if rpt.rmse_t is not None:
            metrics["label_rmse_t_rectified"] = rpt.rmse_t
            metrics["label_rmse_it_rectified"] = rpt.rmse_it
    if "linear" in spaces:
        metrics["linear_rmse_i_rectified"] = rmse_subject(subj_rect_lin)
        metrics["linear_s_score_rectified"] = s_score(subj_rect_lin)
    subject_records = {
        "subject_posterior": subj_post,
        "subject_rectified": subj_rect,
        "subject_rectified_linear": subj_rect_lin,
    }
    interval_records = {
        "interval_posterior": samp_post + int_post,
        "interval_rectified": int_rect,
    }
    return ReplicateScore(
        metrics=metrics,
        subject_records=subject_records,
        interval_records=interval_records,
        trace_rows=trace_rows,
    )


def _trace_predictions(p, fit, policy, cfg):
    if cfg.refit_every_interval:
        return prediction_trace(p, policy, refit_every_interval=True)
    distinct = sorted(set(int(v) for v in p.intervals) | {p.latest_interval})
    return [(t, rectify(fit, float(t))) for t in distinct]


# ---------------------------------------------------------------------------
# Replicates, summary, sweep
# ---------------------------------------------------------------------------


def run_replicate(cfg: ExperimentConfig, k: int, out_dir: str | Path) -> dict:
    """One replicate: pipeline, scoring, and artifact files."""
    seed = cfg.base_seed + k
    products = run_pipeline(cfg, seed)
    score = score_products(cfg, products)
    rep_dir = Path(out_dir) / f"rep_{k:03d}"
    rep_dir.mkdir(parents=True, exist_ok=True)
    header = provenance(cfg, replicate=k, seed=seed)

    with (rep_dir / "metrics.csv").open("w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name in sorted(score.metrics):
            writer.writerow([name, repr(float(score.metrics[name]))])

    write_diagnostics_csv(products.fits, rep_dir / "rectification.csv", header)
    for name, records in {**score.subject_records, **score.interval_records}.items():
        write_records_csv(records, rep_dir / f"records_{name}.csv", header)
    with (rep_dir / "trace.csv").open("w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "interval", "posterior", "rectified", "truth"])
        for sid, t, post, rect, truth in score.trace_rows:
            writer.writerow(
                [
                    sid,
                    t,
                    "" if post is None else repr(post),
                    repr(rect),
                    repr(truth),
                ]
            )
    return score.metrics


def _replicate_worker(args):
    cfg, k, out_dir = args
    try:
        return k, run_replicate(cfg, k, out_dir), None
    except Exception as exc:  # noqa: BLE001 - recorded per replicate
        return k, None, f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """All replicates plus a mean/std summary; returns {metric: (mean, std, n)}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, k, out_dir) for k in range(cfg.replicates)]
    if cfg.workers > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_replicate_worker, jobs))
    else:
        results = [_replicate_worker(job) for job in jobs]
    results.sort(key=lambda item: item[0])

    per_metric: dict[str, list[float]] = {}
    failures = []
    for k, metrics, error in results:
        if error is not None:
            logger.error("replicate %d failed: %s", k, error)
            failures.append((k, error))
            continue
        for name, value in metrics.items():
            per_metric.setdefault(name, []).append(float(value))

    header = provenance(cfg)
    summary: dict[str, tuple[float, float, int]] = {}
    with (out_dir / "summary.csv").open("w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std", "n"])
        for name in sorted(per_metric):
            values = np.array(per_metric[name])
            mean = float(values.mean())
            std = float(values.std(ddof=1)) if values.size > 1 else 0.0
            summary[name] = (mean, std, values.size)
            writer.writerow([name, repr(mean), repr(std), values.size])
    if failures:
        with (out_dir / "failures.csv").open("w", encoding="utf-8", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["replicate", "error"])
            writer.writerows(failures)
    return summary


def apply_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "scarcity":
        if cfg.scarcity_tied:
            return replace(cfg, scarcity_train=value, scarcity_test=value)
        return replace(cfg, scarcity_train=value)
    if axis == "B":
        return replace(cfg, sample_size=int(value))
    if axis == "gamma":
        return replace(cfg, gamma=float(value))
    raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")


def sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: Sequence[float],
    out_dir: str | Path,
) -> dict:
    """run_experiment per axis value; long-format sweep.csv plus cell dirs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table: dict[float, dict] = {}
    for value in values:
        cell_cfg = apply_axis(cfg, axis, value)
        cell_dir = out_dir / f"{axis}_{value:g}"
        table[value] = run_experiment(cell_cfg, cell_dir)
    with (out_dir / "sweep.csv").open("w", encoding="utf-8", newline="") as fh:
        for line in provenance(cfg, sweep_axis=axis):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "metric", "mean", "std", "n"])
        for value in values:
            for metric in sorted(table[value]):
                mean, std, n = table[value][metric]
                writer.writerow([axis, repr(float(value)), metric, repr(mean), repr(std), n])
    return table
