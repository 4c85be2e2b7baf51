"""Fit the labeling function to posterior estimates, then rectify.

For each test subject, the free parameter theta of the training-time
labeling family is refit to the subject's historical posterior estimates
by minimizing the mean squared error J(theta) with a one-parameter
Levenberg-Marquardt iteration (the normal-equations matrix is a scalar).
The fitted curve then replaces raw estimates; in particular it supplies
the prediction at the latest interval even when no sample exists there.

Theta is constrained to an interval derived from the subject's largest
observed time t_max: the implied complete lifetime (theta times the
labeling policy's divisor) must be at least t_max, i.e. a subject cannot
have outlived its fitted lifetime.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .labeling import LabelingFunction, LabelingPolicy, WeibullRul, loglog_transform
from .models import PosteriorEstimates

_TINY = 1e-300


@dataclass(frozen=True)
class LMConfig:
    """Damped least-squares knobs; defaults suit all desk-scale fits."""

    max_iterations: int = 100
    initial_damping: float = 1e-3
    damping_increase: float = 10.0
    damping_decrease: float = 0.1
    convergence_tol: float = 1e-10  # relative objective change
    theta_bounds: tuple[float, float] | None = None  # None: derive from data

    def __post_init__(self) -> None:
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.theta_bounds is not None and self.theta_bounds[0] <= 0:
            raise ValueError("theta lower bound must be positive")


@dataclass(frozen=True)
class RectificationResult:
    """Fitted parameter, objective diagnostics, and the fitted curve."""

    subject_id: str
    theta_hat: float
    objective_value: float
    iterations_used: int
    converged: bool
    function: LabelingFunction


def objective(theta: float, p: PosteriorEstimates, policy: LabelingPolicy) -> float:
    """Mean squared error of the family curve against the estimates."""
    fn = policy.with_theta(theta)
    resid = p.estimates - fn.value(p.intervals)
    return float(np.mean(resid**2))


def default_theta_bounds(
    p: PosteriorEstimates, policy: LabelingPolicy
) -> tuple[float, float]:
    """Bounds from t_max: implied lifetime in [t_max, generous multiple].

    Linear families: theta in [t_max, t_max + 2 * cap], cap being the
    family's ceiling (or the largest estimate for the uncapped family),
    so the RUL at the last observation stays non-negative.  Weibull:
    theta in [t_max / divisor, 10 * t_max], the lower end being the theta
    of a subject exactly at its end of life.
    """
    t_max = float(p.intervals.max())
    if policy.family == "weibull":
        lo = t_max / policy.theta_divisor
        return lo, max(10.0 * t_max, 10.0 * lo)
    cap = policy.alpha
    if policy.family == "linear":
        cap = max(cap, float(np.max(p.estimates, initial=0.0)), 1.0)
    return t_max, t_max + 2.0 * cap


def initialize_theta(
    p: PosteriorEstimates,
    policy: LabelingPolicy,
    bounds: tuple[float, float] | None = None,
) -> float:
    """Closed-form warm start, clamped to the fitting bounds.

    Linear families solve theta = median(estimate + t).  The Weibull
    family inverts the double-log linearization: each clipped estimate
    gives ln(theta) = transform(y) + ln(t), and the least-squares
    intercept with the slope pinned at the model's value is their mean.
    """
    if bounds is None:
        bounds = default_theta_bounds(p, policy)
    if policy.family == "weibull":
        fn = policy.with_theta(1.0)
        assert isinstance(fn, WeibullRul)
        y_tilde = loglog_transform(p.estimates, fn)
        log_theta = float(np.mean(y_tilde + np.log(p.intervals)))
        theta = float(np.exp(log_theta))
    else:
        theta = float(np.median(p.estimates + p.intervals))
    return float(np.clip(theta, bounds[0], bounds[1]))


def fit_theta(
    p: PosteriorEstimates,
    policy: LabelingPolicy,
    cfg: LMConfig = LMConfig(),
) -> RectificationResult:
    """One-parameter Levenberg-Marquardt fit of theta to the estimates.

    Steps solve (g.g + mu) * delta = -g.r for residuals r and their
    analytic theta-derivative g; only steps that reduce J are accepted,
    with the damping mu adapted accordingly.  Degenerate inputs whose
    Jacobian vanishes (e.g. every point on the flat part of the capped
    family) return the warm start flagged as not converged.
    """
    if p.count < 1:
        raise ValueError("need at least one posterior estimate")
    bounds = cfg.theta_bounds or default_theta_bounds(p, policy)
    t = p.intervals.astype(np.float64)
    y = p.estimates
    theta = initialize_theta(p, policy, bounds)
    cost = objective(theta, p, policy)
    damping = cfg.initial_damping
    converged = cost == 0.0
    iterations = 0
    while not converged and iterations < cfg.max_iterations:
        iterations += 1
        fn = policy.with_theta(theta)
        grad = -fn.dtheta(t)  # d residual / d theta
        resid = y - fn.value(t)
        gtg = float(grad @ grad)
        gtr = float(grad @ resid)
        if gtg == 0.0:
            return RectificationResult(
                subject_id=p.subject_id,
                theta_hat=theta,
                objective_value=cost,
                iterations_used=iterations,
                converged=False,
                function=fn,
            )
        accepted = False
        while damping < 1e12:
            step = -gtr / (gtg + damping)
            candidate = float(np.clip(theta + step, bounds[0], bounds[1]))
            cand_cost = objective(candidate, p, policy)
            if cand_cost < cost:
                rel_change = (cost - cand_cost) / max(cost, _TINY)
                theta, cost = candidate, cand_cost
                damping = max(damping * cfg.damping_decrease, 1e-12)
                accepted = True
                if rel_change < cfg.convergence_tol or cost == 0.0:
                    converged = True
                break
            damping *= cfg.damping_increase
        if not accepted:
            # No improving step exists at any damping: at a local minimum
            # (or pinned to a bound), which counts as converged.
            converged = True
    return RectificationResult(
        subject_id=p.subject_id,
        theta_hat=theta,
        objective_value=cost,
        iterations_used=iterations,
        converged=converged,
        function=policy.with_theta(theta),
    )


def rectify(result: RectificationResult, t: float) -> float:
    """Predicted RUL from the fitted curve, floored at zero."""
    return float(max(0.0, result.function.value(float(t))))


def lifetime_estimate(result: RectificationResult, policy: LabelingPolicy) -> float:
    """Implied complete lifetime: invert the labeling rule theta = T / d."""
    return result.theta_hat * policy.theta_divisor


def linear_rul_prediction(
    result: RectificationResult, policy: LabelingPolicy, t: float
) -> float:
    """Predicted remaining intervals at t, in raw (unlabeled) RUL units."""
    return float(max(0.0, lifetime_estimate(result, policy) - t))


def prediction_trace(
    p: PosteriorEstimates,
    policy: LabelingPolicy,
    cfg: LMConfig = LMConfig(),
    refit_every_interval: bool = False,
) -> list[tuple[int, float]]:
    """Rectified predictions along the subject's sampled intervals.

    Default: one terminal fit evaluated at every distinct interval plus
    the latest interval.  With ``refit_every_interval`` the fit is redone
    per interval using only estimates observed up to that interval
    (online evaluation mode).
    """
    distinct = sorted(set(int(v) for v in p.intervals) | {p.latest_interval})
    if not refit_every_interval:
        result = fit_theta(p, policy, cfg)
        return [(t, rectify(result, t)) for t in distinct]
    trace = []
    for t in distinct:
        mask = p.intervals <= t
        if not np.any(mask):
            continue
        upto = PosteriorEstimates(
            subject_id=p.subject_id,
            estimates=p.estimates[mask],
            intervals=p.intervals[mask],
            latest_interval=p.latest_interval,
            true_rul=p.true_rul,
        )
        trace.append((t, rectify(fit_theta(upto, policy, cfg), t)))
    return trace


def write_diagnostics_csv(
    results: Sequence[RectificationResult],
    path: str | Path,
    header_comments: Iterable[str] = (),
) -> None:
    """Per-subject fit diagnostics as CSV rows."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for comment in header_comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "theta_hat", "objective", "iterations", "converged"])
        for r in results:
            writer.writerow(
                [
                    r.subject_id,
                    repr(r.theta_hat),
                    repr(r.objective_value),
                    r.iterations_used,
                    int(r.converged),
                ]
            )
