"""Time-series data structures, ingestion, and normalization.

A dataset is a collection of per-subject series laid out on a shared
integer grid of minimal sampling intervals.  Interval ``t`` of subject
``i`` may carry zero, one, or many samples; the per-interval counts
determine the scarcity category (regular/scarce x single-/multi-sample).

Two ingestion paths exist:

- :func:`ingest_cmapss` reads the 26-column whitespace turbofan benchmark
  format (one sample per flight cycle, optional RUL sidecar for the test
  split).
- :func:`ingest_canonical_csv` reads the canonical CSV format used by
  every downstream stage:
  ``subject_id,interval,sample_idx,v1,...,vV[,label]`` plus optional
  ``#meta,<subject_id>,latest_interval=<int>[,true_rul=<float>]`` comment
  rows overriding per-subject metadata.

Datasets are immutable after construction and safe to share across
threads; functional updates go through ``dataclasses.replace``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class ParseError(ValueError):
    """A file does not conform to its declared format."""


class DataError(ValueError):
    """Structurally parseable input violates a dataset invariant."""


class SeriesCategory(enum.Enum):
    """Scarcity taxonomy over per-interval sample counts ``S_t``.

    RSTS: every interval of every subject carries exactly one sample.
    RMTS: every interval carries at least one sample, some carry several.
    SSTS: intervals carry at most one sample and some carry none.
    SMTS: some intervals carry several samples and some carry none.
    """

    RSTS = "RSTS"
    RMTS = "RMTS"
    SSTS = "SSTS"
    SMTS = "SMTS"


@dataclass(frozen=True)
class Sample:
    """One observation: feature vector at (subject, interval, sample_idx)."""

    subject_id: str
    interval: int
    sample_idx: int
    features: np.ndarray
    label: float | None = None

    def __post_init__(self) -> None:
        if self.interval < 1:
            raise DataError(f"interval must be >= 1, got {self.interval}")
        if self.sample_idx < 1:
            raise DataError(f"sample_idx must be >= 1, got {self.sample_idx}")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise DataError("features must be a 1-D vector")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class SubjectSeries:
    """All samples of one subject, sorted by (interval, sample_idx).

    ``latest_interval`` is explicit metadata: a scarce subject may carry
    no sample at its latest interval, yet that interval remains the
    prediction target.  ``true_rul`` is evaluation ground truth (remaining
    intervals past ``latest_interval``); ``None`` when unknown.
    """

    subject_id: str
    latest_interval: int
    intervals: np.ndarray  # (M_i,) int64
    sample_ids: np.ndarray  # (M_i,) int64
    features: np.ndarray  # (M_i, V) float64
    labels: np.ndarray | None = None
    true_rul: float | None = None

    def __post_init__(self) -> None:
        intervals = np.asarray(self.intervals, dtype=np.int64)
        sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DataError("features must be (num_samples, num_variables)")
        m = features.shape[0]
        if intervals.shape != (m,) or sample_ids.shape != (m,):
            raise DataError("intervals/sample_ids must align with features")
        if m and intervals.min() < 1:
            raise DataError("intervals must be >= 1")
        if m and sample_ids.min() < 1:
            raise DataError("sample indices must be >= 1")
        if self.latest_interval < 1:
            raise DataError("latest_interval must be >= 1")
        if m and int(intervals.max()) > self.latest_interval:
            raise DataError(
                f"subject {self.subject_id}: sample at interval "
                f"{int(intervals.max())} exceeds latest_interval "
                f"{self.latest_interval}"
            )
        order = np.lexsort((sample_ids, intervals))
        intervals = intervals[order]
        sample_ids = sample_ids[order]
        features = features[order]
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.float64)
            if labels.shape != (m,):
                raise DataError("labels must align with samples")
            labels = labels[order]
            labels.flags.writeable = False
        for arr in (intervals, sample_ids, features):
            arr.flags.writeable = False
        object.__setattr__(self, "intervals", intervals)
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def num_variables(self) -> int:
        return self.features.shape[1]

    def interval_counts(self) -> np.ndarray:
        """Per-interval sample counts ``S_t`` for t = 1..latest_interval."""
        counts = np.bincount(self.intervals, minlength=self.latest_interval + 1)
        return counts[1 : self.latest_interval + 1]

    def samples(self) -> Iterator[Sample]:
        for j in range(self.sample_count):
            yield Sample(
                subject_id=self.subject_id,
                interval=int(self.intervals[j]),
                sample_idx=int(self.sample_ids[j]),
                features=self.features[j],
                label=None if self.labels is None else float(self.labels[j]),
            )

    @classmethod
    def from_samples(
        cls,
        subject_id: str,
        samples: Sequence[Sample],
        latest_interval: int | None = None,
        true_rul: float | None = None,
    ) -> "SubjectSeries":
        if not samples:
            raise DataError(f"subject {subject_id}: no samples")
        intervals = np.array([s.interval for s in samples], dtype=np.int64)
        sample_ids = np.array([s.sample_idx for s in samples], dtype=np.int64)
        features = np.stack([s.features for s in samples])
        labels = None
        label_values = [s.label for s in samples]
        if any(v is not None for v in label_values):
            if any(v is None for v in label_values):
                raise DataError(
                    f"subject {subject_id}: labels must be all present or all absent"
                )
            labels = np.array(label_values, dtype=np.float64)
        if latest_interval is None:
            latest_interval = int(intervals.max())
        return cls(
            subject_id=subject_id,
            latest_interval=latest_interval,
            intervals=intervals,
            sample_ids=sample_ids,
            features=features,
            labels=labels,
            true_rul=true_rul,
        )


@dataclass(frozen=True)
class NormStats:
    """Per-variable z-score statistics fitted on a training split."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=np.float64)
        stds = np.asarray(self.stds, dtype=np.float64)
        if means.ndim != 1 or means.shape != stds.shape:
            raise DataError("means/stds must be aligned 1-D vectors")
        if np.any(stds <= 0):
            raise DataError("stds must be strictly positive")
        means.flags.writeable = False
        stds.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of subject series sharing one variable set."""

    subjects: tuple[SubjectSeries, ...]
    num_variables: int
    normalization: NormStats | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "subjects", tuple(self.subjects))
        for subj in self.subjects:
            if subj.num_variables != self.num_variables:
                raise DataError(
                    f"subject {subj.subject_id} has {subj.num_variables} "
                    f"variables, dataset declares {self.num_variables}"
                )
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject_id in dataset")

    @property
    def num_subjects(self) -> int:
        return len(self.subjects)

    @property
    def total_samples(self) -> int:
        return sum(s.sample_count for s in self.subjects)

    @property
    def max_interval(self) -> int:
        return max((s.latest_interval for s in self.subjects), default=0)

    @property
    def labeled(self) -> bool:
        return bool(self.subjects) and all(
            s.labels is not None for s in self.subjects
        )

    def subject(self, subject_id: str) -> SubjectSeries:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)


# ---------------------------------------------------------------------------
# CMAPSS ingestion
# ---------------------------------------------------------------------------

CMAPSS_NUM_COLUMNS = 26  # unit, cycle, 3 operational settings, 21 sensors
CMAPSS_NUM_FEATURES = 24


def ingest_cmapss(
    path: str | Path,
    split: str = "train",
    rul_path: str | Path | None = None,
    columns: Sequence[int] | None = None,
) -> Dataset:
    """Read a whitespace-delimited turbofan benchmark file.

    Each row is ``unit cycle setting1-3 sensor1-21``; one sample per
    cycle per unit (RSTS).  ``columns`` optionally selects a subset of
    the 24 feature columns (0-based indices into settings+sensors);
    default keeps all of them.  For the test split, ``rul_path`` holds
    one true RUL per line, line k belonging to the k-th unit in order
    of appearance.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    path = Path(path)
    per_unit: dict[str, list[tuple[int, np.ndarray]]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != CMAPSS_NUM_COLUMNS:
                raise ParseError(
                    f"{path.name} line {lineno}: expected "
                    f"{CMAPSS_NUM_COLUMNS} columns, got {len(tokens)}"
                )
            try:
                unit = str(int(tokens[0]))
                cycle = int(tokens[1])
                feats = np.array(tokens[2:], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path.name} line {lineno}: {exc}") from None
            rows = per_unit.setdefault(unit, [])
            if rows and cycle <= rows[-1][0]:
                raise DataError(
                    f"{path.name} line {lineno}: non-monotone cycle {cycle} "
                    f"for unit {unit}"
                )
            rows.append((cycle, feats))
    if not per_unit:
        raise ParseError(f"{path.name}: no records")

    ruls: list[float] | None = None
    if rul_path is not None:
        rul_lines = Path(rul_path).read_text(encoding="utf-8").split()
        ruls = [float(tok) for tok in rul_lines]
        if len(ruls) != len(per_unit):
            raise DataError(
                f"RUL sidecar has {len(ruls)} entries for "
                f"{len(per_unit)} units"
            )

    subjects = []
    for k, (unit, rows) in enumerate(per_unit.items()):
        intervals = np.array([c for c, _ in rows], dtype=np.int64)
        features = np.stack([f for _, f in rows])
        if columns is not None:
            features = features[:, list(columns)]
        true_rul = ruls[k] if ruls is not None else None
        subjects.append(
            SubjectSeries(
                subject_id=unit,
                latest_interval=int(intervals.max()),
                intervals=intervals,
                sample_ids=np.ones(len(rows), dtype=np.int64),
                features=features,
                true_rul=true_rul,
            )
        )
    return Dataset(subjects=tuple(subjects), num_variables=subjects[0].num_variables)


# ---------------------------------------------------------------------------
# Canonical CSV
# ---------------------------------------------------------------------------


def _parse_meta_row(row: Sequence[str], lineno: int) -> tuple[str, dict]:
    # "#meta,<subject_id>,key=value,..." rows carry per-subject metadata.
    if len(row) < 3:
        raise ParseError(f"line {lineno}: malformed #meta row")
    subject_id = row[1]
    meta: dict = {}
    for item in row[2:]:
        key, _, value = item.partition("=")
        if key == "latest_interval":
            meta["latest_interval"] = int(value)
        elif key == "true_rul":
            meta["true_rul"] = float(value)
        else:
            raise ParseError(f"line {lineno}: unknown #meta key {key!r}")
    return subject_id, meta


def ingest_canonical_csv(path: str | Path) -> Dataset:
    """Read the canonical CSV format (header mandatory, rows in any order)."""
    path = Path(path)
    meta: dict[str, dict] = {}
    header: list[str] | None = None
    has_label = False
    num_features = 0
    rows: dict[str, list[tuple[int, int, np.ndarray, float | None]]] = {}
    seen: set[tuple[str, int, int]] = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if row[0].startswith("#"):
                if row[0] == "#meta":
                    sid, m = _parse_meta_row(row, lineno)
                    meta.setdefault(sid, {}).update(m)
                continue
            if header is None:
                header = [h.strip() for h in row]
                if header[:3] != ["subject_id", "interval", "sample_idx"]:
                    raise ParseError(
                        f"line {lineno}: header must start with "
                        "subject_id,interval,sample_idx"
                    )
                has_label = header[-1] == "label"
                num_features = len(header) - 3 - int(has_label)
                if num_features < 1:
                    raise ParseError(f"line {lineno}: no feature columns")
                continue
            if len(row) != len(header):
                raise DataError(
                    f"line {lineno}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            try:
                sid = row[0]
                interval = int(row[1])
                sample_idx = int(row[2])
                feats = np.array(row[3 : 3 + num_features], dtype=np.float64)
                label = float(row[-1]) if has_label else None
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            key = (sid, interval, sample_idx)
            if key in seen:
                raise DataError(
                    f"line {lineno}: duplicate sample "
                    f"({sid}, {interval}, {sample_idx})"
                )
            seen.add(key)
            rows.setdefault(sid, []).append((interval, sample_idx, feats, label))
    if header is None:
        raise ParseError(f"{path.name}: no header")
    if not rows:
        raise ParseError(f"{path.name}: no records")

    subjects = []
    for sid, items in rows.items():
        m = meta.get(sid, {})
        samples = [
            Sample(sid, interval, sample_idx, feats, label)
            for interval, sample_idx, feats, label in items
        ]
        subjects.append(
            SubjectSeries.from_samples(
                sid,
                samples,
                latest_interval=m.get("latest_interval"),
                true_rul=m.get("true_rul"),
            )
        )
    return Dataset(subjects=tuple(subjects), num_variables=num_features)


def write_canonical_csv(
    dataset: Dataset,
    path: str | Path,
    header_comments: Iterable[str] = (),
) -> None:
    """Write a dataset in the canonical CSV format (round-trips ingestion)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for comment in header_comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        for subj in dataset.subjects:
            meta = [f"latest_interval={subj.latest_interval}"]
            if subj.true_rul is not None:
                meta.append(f"true_rul={subj.true_rul!r}")
            writer.writerow(["#meta", subj.subject_id, *meta])
        labeled = dataset.labeled
        header = ["subject_id", "interval", "sample_idx"]
        header += [f"v{k + 1}" for k in range(dataset.num_variables)]
        if labeled:
            header.append("label")
        writer.writerow(header)
        for subj in dataset.subjects:
            for j in range(subj.sample_count):
                row = [
                    subj.subject_id,
                    int(subj.intervals[j]),
                    int(subj.sample_ids[j]),
                    *(repr(float(v)) for v in subj.features[j]),
                ]
                if labeled:
                    row.append(repr(float(subj.labels[j])))
                writer.writerow(row)


# ---------------------------------------------------------------------------
# Categorization, normalization, interval collapsing
# ---------------------------------------------------------------------------


def categorize(dataset: Dataset) -> SeriesCategory:
    """Classify per-interval sample counts into the scarcity taxonomy."""
    if dataset.num_subjects == 0:
        raise DataError("cannot categorize an empty dataset")
    has_gap = False
    has_multi = False
    for subj in dataset.subjects:
        counts = subj.interval_counts()
        has_gap = has_gap or bool(np.any(counts == 0))
        has_multi = has_multi or bool(np.any(counts > 1))
    if has_gap:
        return SeriesCategory.SMTS if has_multi else SeriesCategory.SSTS
    return SeriesCategory.RMTS if has_multi else SeriesCategory.RSTS


def fit_normalization(dataset: Dataset) -> NormStats:
    """Per-variable mean/std over all samples (training split only).

    Zero-variance columns get std 1.0 so constant sensors normalize to
    zero instead of erroring out.
    """
    if dataset.total_samples < 2:
        raise DataError("need at least 2 samples to fit normalization")
    stacked = np.concatenate([s.features for s in dataset.subjects], axis=0)
    means = stacked.mean(axis=0)
    stds = stacked.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    return NormStats(means=means, stds=stds)


def apply_normalization(dataset: Dataset, stats: NormStats) -> Dataset:
    """Return a dataset with features replaced by (x - mean) / std."""
    if stats.means.shape[0] != dataset.num_variables:
        raise DataError(
            f"normalization has {stats.means.shape[0]} variables, "
            f"dataset has {dataset.num_variables}"
        )
    subjects = tuple(
        replace(s, features=(s.features - stats.means) / stats.stds)
        for s in dataset.subjects
    )
    return Dataset(
        subjects=subjects,
        num_variables=dataset.num_variables,
        normalization=stats,
    )


def mean_collapse(dataset: Dataset) -> Dataset:
    """Collapse every non-empty interval group to its per-variable mean.

    Output carries one sample per non-empty interval (RSTS or SSTS);
    subject count, latest intervals, and the set of non-empty intervals
    are preserved.
    """
    subjects = []
    for subj in dataset.subjects:
        uniq, inverse = np.unique(subj.intervals, return_inverse=True)
        features = np.zeros((uniq.size, subj.num_variables))
        np.add.at(features, inverse, subj.features)
        counts = np.bincount(inverse).astype(np.float64)
        features /= counts[:, None]
        labels = None
        if subj.labels is not None:
            labels = np.zeros(uniq.size)
            np.add.at(labels, inverse, subj.labels)
            labels /= counts
        subjects.append(
            SubjectSeries(
                subject_id=subj.subject_id,
                latest_interval=subj.latest_interval,
                intervals=uniq,
                sample_ids=np.ones(uniq.size, dtype=np.int64),
                features=features,
                labels=labels,
                true_rul=subj.true_rul,
            )
        )
    return Dataset(
        subjects=tuple(subjects),
        num_variables=dataset.num_variables,
        normalization=dataset.normalization,
    )
