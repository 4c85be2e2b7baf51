"""Regressors: forward contracts, loss, identical batches, training loop."""

import numpy as np
import pytest

from psrul.data import Dataset, Sample, SubjectSeries
from psrul.models import (
    AerRegressor,
    MlpRegressor,
    PosteriorEstimates,
    TrainConfig,
    batch_loss,
    build_model,
    interval_wise_median,
    load_model,
    predict_posterior,
    sample_identical_batch,
    save_model,
    train,
)
from psrul.seeding import generator


def identity_aer(v=3):
    """AER whose encoder/decoder are identity maps on positive inputs."""
    model = AerRegressor(v, hidden=(v,), dropout=0.0, seed=0)
    enc = model.encoder.layers[0]
    enc.weights = np.eye(v)
    enc.biases = np.zeros(v)
    dec = model.decoder.layers[0]
    dec.weights = np.eye(v)
    dec.biases = np.zeros(v)
    return model


def constant_model(v, value):
    model = MlpRegressor(v, hidden=(4,), dropout=0.0, seed=0)
    for layer in model.encoder.layers:
        if hasattr(layer, "weights"):
            layer.weights = np.zeros_like(layer.weights)
            layer.biases = np.zeros_like(layer.biases)
    head = model.head.layers[0]
    head.weights = np.zeros_like(head.weights)
    head.biases = np.array([value])
    return model


def dataset_from_arrays(per_subject):
    """per_subject: list of (sid, intervals, features, labels)."""
    subjects = []
    for sid, intervals, features, labels in per_subject:
        intervals = np.asarray(intervals, dtype=np.int64)
        subjects.append(
            SubjectSeries(
                subject_id=sid,
                latest_interval=int(intervals.max()),
                intervals=intervals,
                sample_ids=np.ones(intervals.size, dtype=np.int64),
                features=np.asarray(features, dtype=float),
                labels=None if labels is None else np.asarray(labels, dtype=float),
            )
        )
    return Dataset(subjects=tuple(subjects), num_variables=subjects[0].num_variables)


def toy_first_feature_dataset(n_subjects=4, per_subject=30, v=3, seed=0):
    """Labels equal the first feature: trivially learnable."""
    rng = generator(seed)
    out = []
    for i in range(n_subjects):
        features = rng.uniform(-1.0, 1.0, size=(per_subject, v))
        labels = features[:, 0].copy()
        out.append((f"s{i}", np.arange(1, per_subject + 1), features, labels))
    return dataset_from_arrays(out)


# ---------------------------------------------------------------------------
# forward_estimate
# ---------------------------------------------------------------------------


def test_identity_aer_reconstructs_positive_input():
    model = identity_aer(3)
    x = np.array([0.5, 1.0, 2.0])
    _, xhat = model.estimate(x)
    np.testing.assert_allclose(xhat, x)


def test_mlp_returns_no_reconstruction():
    model = MlpRegressor(3, seed=1)
    yhat, xhat = model.estimate(np.zeros(3))
    assert isinstance(yhat, float)
    assert xhat is None


def test_inference_is_deterministic():
    model = AerRegressor(4, seed=3)
    x = generator(8).normal(size=4)
    first = model.estimate(x)
    for _ in range(3):
        again = model.estimate(x)
        assert again[0] == first[0]
        np.testing.assert_array_equal(again[1], first[1])


# ---------------------------------------------------------------------------
# batch_loss
# ---------------------------------------------------------------------------


def test_batch_loss_perfect_model_is_zero():
    model = identity_aer(2)
    head = model.head.layers[0]
    head.weights = np.zeros_like(head.weights)
    head.biases = np.array([7.0])
    x = np.array([[0.5, 1.5], [2.0, 0.25]])
    y = np.array([7.0, 7.0])
    assert batch_loss(model, x, y, gamma=1.0) == 0.0


def test_batch_loss_gamma_zero_is_pure_mse():
    model = identity_aer(2)
    head = model.head.layers[0]
    head.weights = np.zeros_like(head.weights)
    head.biases = np.array([0.0])
    x = np.array([[1.0, 1.0], [9.0, 9.0]])  # reconstruction error would be 0 anyway
    y = np.array([-1.0, -3.0])  # residuals {1, 3}
    assert batch_loss(model, x, y, gamma=0.0) == 5.0


def test_batch_loss_empty_batch_rejected():
    model = MlpRegressor(2, seed=0)
    with pytest.raises(ValueError):
        batch_loss(model, np.zeros((0, 2)), np.zeros(0))


def test_batch_loss_nonnegative_random():
    rng = generator(31)
    model = AerRegressor(3, seed=5)
    for _ in range(20):
        x = rng.normal(size=(4, 3))
        y = rng.normal(size=4)
        assert batch_loss(model, x, y, gamma=0.3) >= 0.0


# ---------------------------------------------------------------------------
# sample_identical_batch
# ---------------------------------------------------------------------------


def test_batch_size_capped_by_subject_samples():
    ds = toy_first_feature_dataset(n_subjects=1, per_subject=50)
    sel = sample_identical_batch(ds.subjects[0], 100, generator(0))
    assert sel.size == 50
    assert np.unique(sel).size == 50  # without replacement


def test_batch_size_one():
    ds = toy_first_feature_dataset(n_subjects=1, per_subject=5)
    sel = sample_identical_batch(ds.subjects[0], 1, generator(0))
    assert sel.size == 1


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_train_converges_on_trivial_mapping():
    ds = toy_first_feature_dataset()
    model = build_model("mlp", 3, seed=2, hidden=(16, 8), dropout=0.0)
    cfg = TrainConfig(sample_size=30, learning_rate=1e-2, epochs=200, dropout=0.0, seed=2)
    _, trace = train(model, ds, cfg)
    assert trace[-1] < 0.01 * trace[0]


def test_gamma_zero_aer_trace_equals_mlp_trace():
    ds = toy_first_feature_dataset()
    cfg = TrainConfig(sample_size=16, learning_rate=1e-2, epochs=20, gamma=0.0, seed=7)
    mlp = build_model("mlp", 3, seed=7, hidden=(8, 4), dropout=0.1)
    aer = build_model("aer", 3, seed=7, hidden=(8, 4), dropout=0.1)
    _, mlp_trace = train(mlp, ds, cfg)
    _, aer_trace = train(aer, ds, cfg)
    assert mlp_trace == aer_trace
    for p_mlp, p_aer in zip(mlp.encoder.params(), aer.encoder.params()):
        np.testing.assert_array_equal(p_mlp, p_aer)


def test_zero_epochs_returns_model_unchanged():
    ds = toy_first_feature_dataset()
    model = build_model("mlp", 3, seed=4)
    before = [p.copy() for p in model.params()]
    _, trace = train(model, ds, TrainConfig(epochs=0, seed=1))
    assert trace == []
    for b, p in zip(before, model.params()):
        np.testing.assert_array_equal(b, p)


def test_train_bit_deterministic():
    ds = toy_first_feature_dataset()
    cfg = TrainConfig(sample_size=8, epochs=15, seed=12)
    m1 = build_model("aer", 3, seed=12, hidden=(8, 4))
    m2 = build_model("aer", 3, seed=12, hidden=(8, 4))
    _, t1 = train(m1, ds, cfg)
    _, t2 = train(m2, ds, cfg)
    assert t1 == t2
    for p1, p2 in zip(m1.params(), m2.params()):
        assert p1.tobytes() == p2.tobytes()


def test_train_unlabeled_dataset_rejected():
    ds = toy_first_feature_dataset()
    stripped = dataset_from_arrays(
        [(s.subject_id, s.intervals, s.features, None) for s in ds.subjects]
    )
    with pytest.raises(ValueError, match="label"):
        train(build_model("mlp", 3), stripped, TrainConfig(epochs=1))


def test_train_divergence_aborts_with_guidance():
    ds = toy_first_feature_dataset()
    model = build_model("mlp", 3, seed=0, hidden=(8,), dropout=0.0)
    cfg = TrainConfig(sample_size=8, learning_rate=1e100, epochs=5, seed=0)
    with pytest.raises(RuntimeError, match="learning rate"):
        train(model, ds, cfg)


def test_batches_never_mix_subjects():
    ds = toy_first_feature_dataset(n_subjects=3, per_subject=12)
    by_id = {s.subject_id: s for s in ds.subjects}
    seen = []

    def on_batch(subject_id, indices):
        subj = by_id[subject_id]
        assert np.all(indices < subj.sample_count)
        seen.append((subject_id, len(indices)))

    model = build_model("mlp", 3, seed=1, hidden=(4,))
    train(model, ds, TrainConfig(sample_size=5, epochs=4, seed=3), on_batch=on_batch)
    assert len(seen) == 12  # 3 subjects x 4 epochs
    assert all(size == 5 for _, size in seen)


def test_resgur_trains_and_predicts():
    ds = toy_first_feature_dataset(n_subjects=2, per_subject=10)
    model = build_model("resgur", 3, seed=6, gated_width=8, gated_layers=2, head_hidden=(4,))
    _, trace = train(model, ds, TrainConfig(sample_size=10, learning_rate=1e-3, epochs=5, seed=6))
    assert len(trace) == 5
    assert all(np.isfinite(v) for v in trace)


# ---------------------------------------------------------------------------
# predict_posterior / interval median
# ---------------------------------------------------------------------------


def sparse_subject_dataset():
    subj = SubjectSeries(
        subject_id="a",
        latest_interval=12,
        intervals=np.array([2, 5, 9]),
        sample_ids=np.array([1, 1, 1]),
        features=np.array([[0.1], [0.2], [0.3]]),
    )
    return Dataset(subjects=(subj,), num_variables=1)


def test_predict_posterior_aligns_estimates_with_intervals():
    ds = sparse_subject_dataset()
    out = predict_posterior(constant_model(1, 4.5), ds)
    assert len(out) == 1
    p = out[0]
    assert p.count == 3
    np.testing.assert_array_equal(p.intervals, [2, 5, 9])
    np.testing.assert_allclose(p.estimates, 4.5)
    assert p.latest_interval == 12


def test_predict_posterior_cap_subsamples_sorted():
    ds = sparse_subject_dataset()
    p = predict_posterior(constant_model(1, 1.0), ds, test_sample_cap=2, seed=3)[0]
    assert p.count == 2
    assert np.all(np.diff(p.intervals) >= 0)
    assert set(p.intervals.tolist()) <= {2, 5, 9}


def test_predict_posterior_skips_empty_subject(caplog):
    empty = SubjectSeries(
        subject_id="empty",
        latest_interval=4,
        intervals=np.array([], dtype=np.int64),
        sample_ids=np.array([], dtype=np.int64),
        features=np.zeros((0, 1)),
    )
    ds = Dataset(
        subjects=(empty, sparse_subject_dataset().subjects[0]), num_variables=1
    )
    with caplog.at_level("WARNING"):
        out = predict_posterior(constant_model(1, 1.0), ds)
    assert [p.subject_id for p in out] == ["a"]
    assert "empty" in caplog.text


def test_interval_wise_median_robust_to_outlier():
    p = PosteriorEstimates(
        subject_id="a",
        estimates=np.array([1.0, 5.0, 100.0]),
        intervals=np.array([4, 4, 4]),
        latest_interval=4,
    )
    out = interval_wise_median(p)
    assert out.count == 1
    assert out.estimates[0] == 5.0


def test_interval_wise_median_single_sample_identity():
    p = PosteriorEstimates(
        subject_id="a",
        estimates=np.array([3.0, 4.0]),
        intervals=np.array([1, 2]),
        latest_interval=2,
    )
    out = interval_wise_median(p)
    np.testing.assert_array_equal(out.estimates, p.estimates)
    np.testing.assert_array_equal(out.intervals, p.intervals)


def test_interval_wise_median_even_count_mean_of_central():
    p = PosteriorEstimates(
        subject_id="a",
        estimates=np.array([2.0, 4.0]),
        intervals=np.array([7, 7]),
        latest_interval=7,
    )
    assert interval_wise_median(p).estimates[0] == 3.0


# ---------------------------------------------------------------------------
# checkpoint round trip at the model level
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["mlp", "aer", "resgur"])
def test_model_checkpoint_round_trip(kind, tmp_path):
    model = build_model(
        kind, 4, seed=9, hidden=(8, 4), gated_width=6, gated_layers=2, head_hidden=(4,)
    )
    path = tmp_path / f"{kind}.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.kind == kind
    x = generator(2).normal(size=(5, 4))
    y_orig, _ = model.forward_batch(x)
    y_load, _ = loaded.forward_batch(x)
    assert y_orig.tobytes() == y_load.tobytes()
