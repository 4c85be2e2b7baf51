"""Prediction-quality metrics: RMSE at three granularities plus s-score.

All metrics consume flat prediction records so any pipeline stage (raw
posterior, median-aggregated, rectified) scores through one code path.
Records with a sample index are sample-level; records without one are
interval-level.  Subject-level metrics (RMSE over subjects, s-score)
expect exactly one record per subject, conventionally at its latest
interval.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Asymmetric exponential score time constants: overestimating remaining
# life (delta >= 0) is penalized more steeply than underestimating.
S_SCORE_UNDER_TAU = 13.0
S_SCORE_OVER_TAU = 10.0


@dataclass(frozen=True)
class PredictionRecord:
    subject_id: str
    interval: int
    sample_idx: int | None
    predicted: float
    truth: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.predicted) and math.isfinite(self.truth)):
            raise ValueError("predicted and truth must be finite")


@dataclass(frozen=True)
class MetricsReport:
    rmse_i: float | None = None
    rmse_t: float | None = None
    rmse_it: float | None = None
    rmse_ts: float | None = None
    s_score: float | None = None
    counts: dict | None = None

    def lines(self) -> list[str]:
        out = []
        for name in ("rmse_i", "rmse_t", "rmse_it", "rmse_ts", "s_score"):
            value = getattr(self, name)
            if value is not None:
                out.append(f"{name} = {value!r}")
        for name, count in sorted((self.counts or {}).items()):
            out.append(f"count_{name} = {count}")
        return out


def _rmse(residuals: np.ndarray) -> float:
    return float(np.sqrt(np.mean(residuals**2)))


def rmse_subject(records: Sequence[PredictionRecord]) -> float:
    """RMSE over subjects, one terminal record each."""
    ids = [r.subject_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("rmse_subject needs exactly one record per subject")
    if not records:
        raise ValueError("no records")
    resid = np.array([r.predicted - r.truth for r in records])
    return _rmse(resid)


def rmse_interval_levels(
    records: Sequence[PredictionRecord],
) -> tuple[float | None, float | None, float | None]:
    """(rmse_ts, rmse_t, rmse_it); a level is None when its records are absent.

    rmse_ts pools all sample-level records; rmse_t pools interval-level
    records; rmse_it averages each subject's own interval-level RMSE so
    subjects with many intervals do not dominate.
    """
    sample_resid = np.array(
        [r.predicted - r.truth for r in records if r.sample_idx is not None]
    )
    interval_recs = [r for r in records if r.sample_idx is None]
    rmse_ts = _rmse(sample_resid) if sample_resid.size else None
    rmse_t = None
    rmse_it = None
    if interval_recs:
        resid = np.array([r.predicted - r.truth for r in interval_recs])
        rmse_t = _rmse(resid)
        per_subject: dict[str, list[float]] = {}
        for r in interval_recs:
            per_subject.setdefault(r.subject_id, []).append(r.predicted - r.truth)
        rmse_it = float(
            np.mean([_rmse(np.array(v)) for v in per_subject.values()])
        )
    return rmse_ts, rmse_t, rmse_it


def s_score(records: Sequence[PredictionRecord]) -> float:
    """Sum of exp(-delta/13) - 1 (under) or exp(delta/10) - 1 (over)."""
    ids = [r.subject_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("s_score needs exactly one record per subject")
    total = 0.0
    for r in records:
        delta = r.predicted - r.truth
        if delta < 0:
            total += math.exp(-delta / S_SCORE_UNDER_TAU) - 1.0
        else:
            total += math.exp(delta / S_SCORE_OVER_TAU) - 1.0
    return total


def compute_metrics(records: Sequence[PredictionRecord]) -> MetricsReport:
    """Every metric the record granularities support; others stay None."""
    rmse_ts, rmse_t, rmse_it = rmse_interval_levels(records)
    interval_recs = [r for r in records if r.sample_idx is None]
    subject_ids = [r.subject_id for r in interval_recs]
    one_per_subject = bool(interval_recs) and len(set(subject_ids)) == len(subject_ids)
    counts = {
        "records": len(records),
        "subjects": len({r.subject_id for r in records}),
    }
    if one_per_subject:
        return MetricsReport(
            rmse_i=rmse_subject(interval_recs),
            rmse_t=rmse_t,
            rmse_it=rmse_it,
            rmse_ts=rmse_ts,
            s_score=s_score(interval_recs),
            counts=counts,
        )
    return MetricsReport(
        rmse_t=rmse_t, rmse_it=rmse_it, rmse_ts=rmse_ts, counts=counts
    )


# ---------------------------------------------------------------------------
# Record CSV (subject_id,interval,sample_idx,predicted,truth)
# ---------------------------------------------------------------------------


def write_records_csv(
    records: Sequence[PredictionRecord],
    path: str | Path,
    header_comments: Iterable[str] = (),
) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for comment in header_comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "interval", "sample_idx", "predicted", "truth"])
        for r in records:
            writer.writerow(
                [
                    r.subject_id,
                    r.interval,
                    "" if r.sample_idx is None else r.sample_idx,
                    repr(r.predicted),
                    repr(r.truth),
                ]
            )


def read_records_csv(path: str | Path) -> list[PredictionRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = row
                continue
            records.append(
                PredictionRecord(
                    subject_id=row[0],
                    interval=int(row[1]),
                    sample_idx=int(row[2]) if row[2] else None,
                    predicted=float(row[3]),
                    truth=float(row[4]),
                )
            )
    return records
