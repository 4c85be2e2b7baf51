"""Parametric labeling functions mapping time to training targets.

Three one-parameter families share the free parameter ``theta``:

- linear:            Y(t) = theta - t
- piecewise linear:  Y(t) = clip(theta - t, 0, alpha)
- Weibull survival:  Y(t) = alpha * exp(-(t / theta)**beta)

During training, theta is tied to each subject's complete lifetime via a
:class:`LabelingPolicy`; during rectification the same family is refit
with theta free.  The Weibull family linearizes via a double log:
``-ln(-ln(y / alpha)) / beta = ln(theta) - ln(t)``, which supplies a
closed-form warm start for curve fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .data import Dataset, DataError

# Domain guard for the double-log transform: posterior estimates can fall
# outside (0, alpha), so y is clipped into [EPS*alpha, (1-EPS)*alpha].
LOGLOG_CLIP_EPS = 1e-6

FAMILIES = ("linear", "piecewise", "weibull")


@dataclass(frozen=True)
class LinearRul:
    """Y(t) = theta - t; theta is the complete lifetime."""

    theta: float

    def __post_init__(self) -> None:
        if self.theta <= 0:
            raise ValueError("theta must be positive")

    def value(self, t):
        return self.theta - np.asarray(t, dtype=np.float64)

    def dtheta(self, t):
        return np.ones_like(np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class PiecewiseLinearRul:
    """Y(t) = theta - t capped above at alpha and floored at zero."""

    alpha: float
    theta: float

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.theta <= 0:
            raise ValueError("alpha and theta must be positive")

    def value(self, t):
        return np.clip(self.theta - np.asarray(t, dtype=np.float64), 0.0, self.alpha)

    def dtheta(self, t):
        raw = self.theta - np.asarray(t, dtype=np.float64)
        return ((raw > 0.0) & (raw < self.alpha)).astype(np.float64)


@dataclass(frozen=True)
class WeibullRul:
    """Y(t) = alpha * exp(-(t / theta)**beta), the scaled survival curve."""

    alpha: float
    beta: float
    theta: float

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.beta <= 0 or self.theta <= 0:
            raise ValueError("alpha, beta, theta must be positive")

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.alpha * np.exp(-((t / self.theta) ** self.beta))

    def dtheta(self, t):
        t = np.asarray(t, dtype=np.float64)
        return (
            self.value(t) * self.beta * t**self.beta * self.theta ** (-self.beta - 1)
        )


LabelingFunction = Union[LinearRul, PiecewiseLinearRul, WeibullRul]


@dataclass(frozen=True)
class LabelingPolicy:
    """Family plus the dataset-wide rule theta_i = lifetime / theta_divisor.

    ``alpha`` and ``beta`` are fixed dataset-wide; only theta varies per
    subject, keeping the family one-degree-of-freedom for rectification.
    Serialized in configs as {family, alpha, beta, theta_divisor}.
    """

    family: str = "weibull"
    alpha: float = 130.0
    beta: float = 5.0
    theta_divisor: float = 1.7

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.theta_divisor <= 0:
            raise ValueError("theta_divisor must be positive")

    @classmethod
    def default(cls, family: str) -> "LabelingPolicy":
        divisor = 1.7 if family == "weibull" else 1.0
        return cls(family=family, theta_divisor=divisor)

    def theta_for(self, lifetime: float) -> float:
        return lifetime / self.theta_divisor

    def with_theta(self, theta: float) -> LabelingFunction:
        if self.family == "linear":
            return LinearRul(theta=theta)
        if self.family == "piecewise":
            return PiecewiseLinearRul(alpha=self.alpha, theta=theta)
        return WeibullRul(alpha=self.alpha, beta=self.beta, theta=theta)

    def function_for(self, lifetime: float) -> LabelingFunction:
        return self.with_theta(self.theta_for(lifetime))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "alpha": self.alpha,
            "beta": self.beta,
            "theta_divisor": self.theta_divisor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelingPolicy":
        base = cls.default(d["family"]) if "family" in d else cls()
        known = {k: d[k] for k in ("family", "alpha", "beta", "theta_divisor") if k in d}
        return replace(base, **known)


def label_dataset(dataset: Dataset, policy: LabelingPolicy) -> Dataset:
    """Attach Y(t; theta_i) to every sample, theta_i from the lifetime rule.

    All samples in one interval share a label; labels are stored per
    sample so the trainer consumes flat (x, y) pairs.
    """
    subjects = []
    for subj in dataset.subjects:
        if subj.latest_interval < 1:
            raise DataError(f"subject {subj.subject_id}: missing latest interval")
        fn = policy.function_for(float(subj.latest_interval))
        labels = np.asarray(fn.value(subj.intervals), dtype=np.float64)
        subjects.append(replace(subj, labels=labels))
    return Dataset(
        subjects=tuple(subjects),
        num_variables=dataset.num_variables,
        normalization=dataset.normalization,
    )


def loglog_transform(y, fn: WeibullRul):
    """Map Weibull-family values into the space where the curve is linear.

    For exact values y = Y(t; theta) the result equals ln(theta) - ln(t);
    inputs are clipped into the open interval (0, alpha) first, so the
    transform is total.
    """
    y = np.clip(
        np.asarray(y, dtype=np.float64),
        LOGLOG_CLIP_EPS * fn.alpha,
        (1.0 - LOGLOG_CLIP_EPS) * fn.alpha,
    )
    return -np.log(-np.log(y / fn.alpha)) / fn.beta
