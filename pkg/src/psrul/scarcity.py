"""Uniform random subsampling of each subject's samples.

Scarcity is expressed as the fraction of samples REMOVED: "90% scarcity"
keeps 10% of each subject's samples.  Retention counts are per-subject
exact (``max(1, round(keep_fraction * M_i))``) so runs are reproducible,
and every subject keeps at least one sample so posterior estimation
always has input.  Selection uses a per-subject Philox stream derived
from (seed, subject ordinal), making the operator trivially parallel
across subjects and bit-stable regardless of subject order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .seeding import generator

_SCARCITY_STREAM = 0x5C


@dataclass(frozen=True)
class ScarcityConfig:
    """Fraction removed, RNG seed, and optional last-sample anchoring."""

    scarcity_fraction: float
    seed: int
    keep_last: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.scarcity_fraction < 1.0:
            raise ValueError(
                f"scarcity_fraction must be in [0, 1), got {self.scarcity_fraction}"
            )


def retained_count(num_samples: int, scarcity_fraction: float) -> int:
    """Samples kept for one subject: max(1, round-half-up of kept share)."""
    kept = (1.0 - scarcity_fraction) * num_samples
    return max(1, int(np.floor(kept + 0.5)))


def scarcify(dataset: Dataset, cfg: ScarcityConfig) -> Dataset:
    """Subsample every subject without replacement; metadata unchanged.

    Retained samples are an untouched subset of the originals; the
    per-subject ``latest_interval`` and ``true_rul`` survive even when
    the sample at the latest interval is dropped.
    """
    if cfg.scarcity_fraction == 0.0:
        return dataset
    subjects = []
    for ordinal, subj in enumerate(dataset.subjects):
        m = subj.sample_count
        k = retained_count(m, cfg.scarcity_fraction)
        rng = generator(cfg.seed, _SCARCITY_STREAM, ordinal)
        if cfg.keep_last:
            # Samples are in (interval, sample_idx) order, so the anchor
            # is the final row; draw the remainder from the rest.
            chosen = rng.choice(m - 1, size=k - 1, replace=False) if k > 1 else []
            keep = np.append(np.asarray(chosen, dtype=np.int64), m - 1)
        else:
            keep = rng.choice(m, size=k, replace=False)
        keep = np.sort(keep)
        subjects.append(
            replace(
                subj,
                intervals=subj.intervals[keep],
                sample_ids=subj.sample_ids[keep],
                features=subj.features[keep],
                labels=None if subj.labels is None else subj.labels[keep],
            )
        )
    return Dataset(
        subjects=tuple(subjects),
        num_variables=dataset.num_variables,
        normalization=dataset.normalization,
    )
