"""Metric hand-value checks and structural properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psrul.metrics import (
    PredictionRecord,
    compute_metrics,
    read_records_csv,
    rmse_interval_levels,
    rmse_subject,
    s_score,
    write_records_csv,
)


def rec(sid, pred, truth, interval=1, sample_idx=None):
    return PredictionRecord(
        subject_id=sid, interval=interval, sample_idx=sample_idx,
        predicted=pred, truth=truth,
    )


# ---------------------------------------------------------------------------
# rmse_subject
# ---------------------------------------------------------------------------


def test_rmse_subject_perfect_is_zero():
    records = [rec("a", 5.0, 5.0), rec("b", -2.0, -2.0)]
    assert rmse_subject(records) == 0.0


def test_rmse_subject_hand_value():
    records = [rec("a", 3.0, 0.0), rec("b", 4.0, 0.0)]
    assert rmse_subject(records) == pytest.approx(math.sqrt(25.0 / 2.0), rel=1e-12)


def test_rmse_subject_single_negative_residual():
    assert rmse_subject([rec("a", 0.0, 7.0)]) == 7.0


def test_rmse_subject_duplicate_rejected():
    with pytest.raises(ValueError):
        rmse_subject([rec("a", 1.0, 0.0), rec("a", 2.0, 0.0)])


# ---------------------------------------------------------------------------
# interval-level variants
# ---------------------------------------------------------------------------


def test_all_equal_residuals_collapse_every_variant():
    records = [
        rec("a", 2.0, 0.0, interval=t, sample_idx=s)
        for t in (1, 2) for s in (1, 2)
    ] + [rec("a", 2.0, 0.0, interval=t) for t in (1, 2)] + [
        rec("b", 2.0, 0.0, interval=1)
    ]
    rmse_ts, rmse_t, rmse_it = rmse_interval_levels(records)
    assert rmse_ts == pytest.approx(2.0)
    assert rmse_t == pytest.approx(2.0)
    assert rmse_it == pytest.approx(2.0)


def test_rmse_it_is_mean_of_per_subject_rmse():
    records = [rec("a", 2.0, 0.0, interval=1), rec("b", 4.0, 0.0, interval=1)]
    _, _, rmse_it = rmse_interval_levels(records)
    assert rmse_it == 3.0


def test_weighting_difference_between_rmse_t_and_rmse_it():
    # Subject a: 100 interval records with zero residual; subject b: one
    # record with residual 10.  Pooled RMSE_t ~ 0.995; per-subject mean = 5.
    records = [rec("a", 0.0, 0.0, interval=t) for t in range(1, 101)]
    records.append(rec("b", 10.0, 0.0, interval=1))
    _, rmse_t, rmse_it = rmse_interval_levels(records)
    assert rmse_t == pytest.approx(math.sqrt(100.0 / 101.0), rel=1e-12)
    assert rmse_t == pytest.approx(0.995, abs=5e-4)
    assert rmse_it == 5.0


def test_missing_granularity_omitted():
    sample_only = [rec("a", 1.0, 0.0, sample_idx=1)]
    rmse_ts, rmse_t, rmse_it = rmse_interval_levels(sample_only)
    assert rmse_ts == 1.0
    assert rmse_t is None and rmse_it is None


def test_rmse_it_equals_rmse_t_with_balanced_subjects():
    rng = np.random.default_rng(3)
    records = []
    for sid in "abc":
        for t in range(1, 6):
            records.append(rec(sid, float(rng.normal()), 0.0, interval=t))
    _, rmse_t, rmse_it = rmse_interval_levels(records)
    # Equal counts per subject: mean-of-RMSEs != pooled RMSE in general,
    # but they agree when each subject has identical residual multisets.
    records = [
        rec(sid, r, 0.0, interval=t)
        for sid in "abc"
        for t, r in enumerate((1.0, -2.0, 3.0), start=1)
    ]
    _, rmse_t, rmse_it = rmse_interval_levels(records)
    assert rmse_t == pytest.approx(rmse_it, rel=1e-12)


# ---------------------------------------------------------------------------
# s-score
# ---------------------------------------------------------------------------


def test_s_score_zero_deltas():
    assert s_score([rec("a", 1.0, 1.0), rec("b", 0.0, 0.0)]) == 0.0


def test_s_score_overestimate_by_ten():
    assert s_score([rec("a", 10.0, 0.0)]) == pytest.approx(math.e - 1.0, rel=1e-12)


def test_s_score_underestimate_by_thirteen():
    assert s_score([rec("a", 0.0, 13.0)]) == pytest.approx(math.e - 1.0, rel=1e-12)


def test_s_score_penalizes_overestimates_more():
    over = s_score([rec("a", 13.0, 0.0)])
    under = s_score([rec("a", 0.0, 13.0)])
    assert over == pytest.approx(math.exp(1.3) - 1.0, rel=1e-12)
    assert under == pytest.approx(math.exp(1.0) - 1.0, rel=1e-12)
    assert over > under


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(
    residuals=st.lists(
        st.floats(min_value=-100, max_value=100), min_size=1, max_size=20
    ),
    scale=st.floats(min_value=-8.0, max_value=8.0),
    seed=st.integers(min_value=0, max_value=100),
)
def test_rmse_permutation_invariant_and_scales(residuals, scale, seed):
    records = [
        rec(f"s{i}", r, 0.0, interval=1) for i, r in enumerate(residuals)
    ]
    base = rmse_subject(records)
    perm = np.random.default_rng(seed).permutation(len(records))
    assert rmse_subject([records[i] for i in perm]) == pytest.approx(base, rel=1e-12)
    scaled = [rec(f"s{i}", r * scale, 0.0, interval=1) for i, r in enumerate(residuals)]
    assert rmse_subject(scaled) == pytest.approx(abs(scale) * base, rel=1e-9, abs=1e-12)


def test_records_must_be_finite():
    with pytest.raises(ValueError):
        rec("a", float("nan"), 0.0)
    with pytest.raises(ValueError):
        rec("a", 0.0, float("inf"))


# ---------------------------------------------------------------------------
# report and CSV round trip
# ---------------------------------------------------------------------------


def test_compute_metrics_full_report():
    records = [
        rec("a", 12.0, 10.0, interval=9),
        rec("b", 7.0, 7.0, interval=5),
        rec("a", 11.0, 10.0, interval=9, sample_idx=1),
        rec("a", 13.0, 10.0, interval=9, sample_idx=2),
    ]
    report = compute_metrics(records)
    assert report.rmse_i == pytest.approx(math.sqrt(4.0 / 2.0))
    assert report.rmse_ts == pytest.approx(math.sqrt((1.0 + 9.0) / 2.0))
    assert report.s_score is not None
    assert report.counts["subjects"] == 2
    lines = report.lines()
    assert any(line.startswith("rmse_i = ") for line in lines)


def test_compute_metrics_without_subject_level():
    records = [
        rec("a", 1.0, 0.0, interval=1),
        rec("a", 2.0, 0.0, interval=2),
    ]
    report = compute_metrics(records)
    assert report.rmse_i is None
    assert report.s_score is None
    assert report.rmse_t is not None


def test_records_csv_round_trip(tmp_path):
    records = [
        rec("a", 1.25, 1.0, interval=3, sample_idx=2),
        rec("b", -0.5, 0.125, interval=7),
    ]
    path = tmp_path / "records.csv"
    write_records_csv(records, path, header_comments=["cfg = test"])
    back = read_records_csv(path)
    assert back == records
