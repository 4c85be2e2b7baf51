"""Synthetic degradation data with known ground truth.

Each subject gets a lifetime drawn from a range; its latent health curve
is the labeling-family curve normalized to start at 1, and features are
a fixed random linear mix of [health, health^2, 1] plus Gaussian noise.
The mixing matrix depends only on ``mixing_seed``, so train and test
splits built from specs sharing that seed live in one feature space, and
the map features -> label is learnable by a static regressor.

Test-style splits can truncate subjects mid-life: samples past the cut
are dropped, the cut becomes the latest interval, and the remaining
lifetime is attached as evaluation ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, SubjectSeries
from .labeling import LabelingPolicy
from .seeding import generator

_MIX_STREAM = 0x31
_SUBJECT_STREAM = 0x32


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of one synthetic split."""

    subjects: int
    lifetime_range: tuple[int, int]  # inclusive; minimum >= 2
    num_variables: int
    mixing_seed: int = 0
    noise_sigma: float = 0.0
    samples_per_interval: tuple[int, int] = (1, 1)  # uniform inclusive range
    truncate_range: tuple[float, float] | None = None  # mid-life cut fractions

    def __post_init__(self) -> None:
        if self.subjects < 1:
            raise ValueError("need at least one subject")
        if self.lifetime_range[0] < 2 or self.lifetime_range[1] < self.lifetime_range[0]:
            raise ValueError("lifetime_range must be [lo, hi] with lo >= 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        lo, hi = self.samples_per_interval
        if lo < 1 or hi < lo:
            raise ValueError("samples_per_interval must be [lo, hi] with lo >= 1")
        if self.truncate_range is not None:
            lo, hi = self.truncate_range
            if not (0.0 < lo <= hi <= 1.0):
                raise ValueError("truncate_range fractions must be in (0, 1]")


def mixing_matrix(spec: SyntheticSpec) -> np.ndarray:
    """(V, 3) coefficients for [health, health^2, 1]; split-independent."""
    rng = generator(spec.mixing_seed, _MIX_STREAM)
    return rng.normal(0.0, 1.0, size=(spec.num_variables, 3))


def generate_synthetic(
    spec: SyntheticSpec, policy: LabelingPolicy, seed: int
) -> Dataset:
    """Draw one labeled split; bit-identical for identical arguments."""
    mix = mixing_matrix(spec)
    subjects = []
    for i in range(spec.subjects):
        rng = generator(seed, _SUBJECT_STREAM, i)
        lifetime = int(
            rng.integers(spec.lifetime_range[0], spec.lifetime_range[1] + 1)
        )
        fn = policy.function_for(float(lifetime))
        latest = lifetime
        true_rul = 0.0
        if spec.truncate_range is not None:
            frac = rng.uniform(*spec.truncate_range)
            latest = max(1, int(np.floor(frac * lifetime + 0.5)))
            true_rul = float(lifetime - latest)
        grid = np.arange(1, latest + 1)
        lo, hi = spec.samples_per_interval
        per_t = (
            np.full(grid.size, lo)
            if lo == hi
            else rng.integers(lo, hi + 1, size=grid.size)
        )
        intervals = np.repeat(grid, per_t)
        sample_ids = np.concatenate([np.arange(1, n + 1) for n in per_t])
        # Health is the label curve over the CONSTANT cap alpha, so the
        # label alpha*h is a subject-independent function of h and the
        # feature -> label map is learnable across subjects.
        labels = np.asarray(fn.value(intervals), dtype=np.float64)
        health = labels / policy.alpha
        basis = np.stack([health, health**2, np.ones_like(health)], axis=1)
        features = basis @ mix.T
        if spec.noise_sigma > 0:
            features = features + rng.normal(
                0.0, spec.noise_sigma, size=features.shape
            )
        # Labels come from the FULL lifetime curve: for truncated subjects
        # these are the evaluation ground truth at each interval, which
        # label_dataset (keyed on the truncated latest interval) cannot
        # reconstruct.
        subjects.append(
            SubjectSeries(
                subject_id=f"s{i + 1:03d}",
                latest_interval=latest,
                intervals=intervals,
                sample_ids=sample_ids,
                features=features,
                labels=labels,
                true_rul=true_rul,
            )
        )
    return Dataset(subjects=tuple(subjects), num_variables=spec.num_variables)
