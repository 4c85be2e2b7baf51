"""Static regression models and the identical-batch training loop.

Three model families share one interface: an MLP (encoder + scalar
head), an autoencoder-regressor AER (encoder + decoder + head, trained
with a weighted reconstruction term), and ResGUR (a dense projection
into a stack of residual gated units plus a dense head).

Training draws one batch per subject per epoch, every batch sampled
without replacement from a single subject so all of its targets come
from one labeling function.  Weight initialization uses a separate
derived stream per component (encoder/decoder/head/...), which makes an
AER trained with gamma=0 bit-identical to the MLP with the same seed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset, NormStats, SubjectSeries
from .nn import Adam, DenseLayer, DropoutLayer, GatedUnitLayer, Stack
from .nn import load_stacks, save_stacks, zero_grads
from .seeding import generator

logger = logging.getLogger(__name__)

# Init/runtime stream salts; fixed so checkpoints and traces reproduce.
STREAM_ENCODER = 0xE1
STREAM_DECODER = 0xD1
STREAM_HEAD = 0xA1
STREAM_PROJECTION = 0xB1
STREAM_GATED = 0xC1
STREAM_TRAIN = 0x71
STREAM_PREDICT = 0x72

MODEL_KINDS = ("mlp", "aer", "resgur")


@dataclass(frozen=True)
class TrainConfig:
    """Identical-batch training knobs (config keys B, lr, epochs, ...)."""

    sample_size: int = 100  # B: per-subject samples per gradient step
    learning_rate: float = 1e-2
    epochs: int = 300
    gamma: float = 0.1  # reconstruction weight; only AER has that term
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


@dataclass(frozen=True)
class PosteriorEstimates:
    """Reindexed per-subject estimates aligned with their intervals."""

    subject_id: str
    estimates: np.ndarray
    intervals: np.ndarray
    latest_interval: int
    sample_ids: np.ndarray | None = None
    true_rul: float | None = None

    def __post_init__(self) -> None:
        estimates = np.asarray(self.estimates, dtype=np.float64)
        intervals = np.asarray(self.intervals, dtype=np.int64)
        if estimates.shape != intervals.shape:
            raise ValueError("estimates and intervals must align")
        if np.any(np.diff(intervals) < 0):
            raise ValueError("intervals must be non-decreasing")
        object.__setattr__(self, "estimates", estimates)
        object.__setattr__(self, "intervals", intervals)

    @property
    def count(self) -> int:
        return self.estimates.shape[0]


def _encoder_stack(n_in, hidden, dropout, rng):
    layers = []
    for width in hidden:
        layers.append(DenseLayer(n_in, width, activation="relu", rng=rng))
        layers.append(DropoutLayer(dropout))
        n_in = width
    return Stack(layers)


class MlpRegressor:
    """Encoder MLP with a scalar regression head."""

    kind = "mlp"
    has_reconstruction = False
    normalization: NormStats | None = None  # attached by checkpoint loading

    def __init__(self, num_variables, hidden=(32, 16, 8), dropout=0.1, seed=0):
        self.num_variables = num_variables
        # Empty hidden: the head regresses directly on the inputs (a plain
        # linear model), handy for noiseless oracles.
        self.latent_dim = hidden[-1] if hidden else num_variables
        self.encoder = _encoder_stack(
            num_variables, hidden, dropout, generator(seed, STREAM_ENCODER)
        )
        self.head = Stack(
            [DenseLayer(self.latent_dim, 1, rng=generator(seed, STREAM_HEAD))]
        )

    def forward_batch(self, x, training=False, rng=None):
        latent = self.encoder.forward(x, training=training, rng=rng)
        yhat = self.head.forward(latent)
        return np.asarray(yhat)[..., 0], None

    def backward_batch(self, d_yhat, d_xhat=None):
        grad_latent = self.head.backward(np.asarray(d_yhat)[..., None])
        self.encoder.backward(grad_latent)

    def estimate(self, x):
        """Posterior estimate for one feature vector (inference mode)."""
        yhat, xhat = self.forward_batch(x)
        return (float(yhat), xhat) if np.ndim(x) == 1 else (yhat, xhat)

    def stacks(self):
        return {"encoder": self.encoder, "head": self.head}

    def params(self):
        return [p for s in self.stacks().values() for p in s.params()]

    def grads(self):
        return [g for s in self.stacks().values() for g in s.grads()]


class AerRegressor(MlpRegressor):
    """Autoencoder-regressor: adds a decoder reconstructing the input."""

    kind = "aer"
    has_reconstruction = True

    def __init__(
        self, num_variables, hidden=(32, 16, 8), dropout=0.1, seed=0, gamma=0.1
    ):
        super().__init__(num_variables, hidden=hidden, dropout=dropout, seed=seed)
        self.gamma = gamma
        rng = generator(seed, STREAM_DECODER)
        widths = list(hidden[::-1][1:]) + [num_variables]
        layers = []
        n_in = self.latent_dim
        for width in widths[:-1]:
            layers.append(DenseLayer(n_in, width, activation="relu", rng=rng))
            n_in = width
        layers.append(DenseLayer(n_in, widths[-1], activation="identity", rng=rng))
        self.decoder = Stack(layers)

    def forward_batch(self, x, training=False, rng=None):
        latent = self.encoder.forward(x, training=training, rng=rng)
        xhat = self.decoder.forward(latent)
        yhat = self.head.forward(latent)
        return np.asarray(yhat)[..., 0], xhat

    def backward_batch(self, d_yhat, d_xhat=None):
        grad_latent = self.head.backward(np.asarray(d_yhat)[..., None])
        if d_xhat is not None:
            grad_latent = grad_latent + self.decoder.backward(d_xhat)
        self.encoder.backward(grad_latent)

    def stacks(self):
        return {"encoder": self.encoder, "decoder": self.decoder, "head": self.head}


class ResgurRegressor:
    """Dense projection into stacked residual gated units, dense head."""

    kind = "resgur"
    has_reconstruction = False
    normalization: NormStats | None = None

    def __init__(
        self,
        num_variables,
        gated_width=100,
        gated_layers=4,
        head_hidden=(16, 8),
        seed=0,
    ):
        self.num_variables = num_variables
        self.latent_dim = gated_width
        self.projection = Stack(
            [
                DenseLayer(
                    num_variables, gated_width, rng=generator(seed, STREAM_PROJECTION)
                )
            ]
        )
        rng = generator(seed, STREAM_GATED)
        self.gated = Stack(
            [
                GatedUnitLayer(gated_width, gated_width, residual=True, rng=rng)
                for _ in range(gated_layers)
            ]
        )
        rng = generator(seed, STREAM_HEAD)
        layers = []
        n_in = gated_width
        for width in head_hidden:
            layers.append(DenseLayer(n_in, width, activation="relu", rng=rng))
            n_in = width
        layers.append(DenseLayer(n_in, 1, rng=rng))
        self.head = Stack(layers)

    def forward_batch(self, x, training=False, rng=None):
        z = self.projection.forward(x)
        z = self.gated.forward(z)
        yhat = self.head.forward(z)
        return np.asarray(yhat)[..., 0], None

    def backward_batch(self, d_yhat, d_xhat=None):
        grad = self.head.backward(np.asarray(d_yhat)[..., None])
        grad = self.gated.backward(grad)
        self.projection.backward(grad)

    def estimate(self, x):
        yhat, xhat = self.forward_batch(x)
        return (float(yhat), xhat) if np.ndim(x) == 1 else (yhat, xhat)

    def stacks(self):
        return {"projection": self.projection, "gated": self.gated, "head": self.head}

    def params(self):
        return [p for s in self.stacks().values() for p in s.params()]

    def grads(self):
        return [g for s in self.stacks().values() for g in s.grads()]


RegressorModel = MlpRegressor | AerRegressor | ResgurRegressor


def build_model(
    kind: str,
    num_variables: int,
    seed: int = 0,
    hidden: Sequence[int] = (32, 16, 8),
    dropout: float = 0.1,
    gamma: float = 0.1,
    gated_width: int = 100,
    gated_layers: int = 4,
    head_hidden: Sequence[int] = (16, 8),
) -> RegressorModel:
    if kind == "mlp":
        return MlpRegressor(num_variables, hidden=tuple(hidden), dropout=dropout, seed=seed)
    if kind == "aer":
        return AerRegressor(
            num_variables, hidden=tuple(hidden), dropout=dropout, seed=seed, gamma=gamma
        )
    if kind == "resgur":
        return ResgurRegressor(
            num_variables,
            gated_width=gated_width,
            gated_layers=gated_layers,
            head_hidden=tuple(head_hidden),
            seed=seed,
        )
    raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")


def save_model(
    model: RegressorModel,
    path: str | Path,
    normalization: NormStats | None = None,
) -> None:
    """Checkpoint the model (optionally with its training-split z-stats)."""
    meta = {"model": model.kind, "num_variables": model.num_variables}
    if normalization is not None:
        meta["normalization"] = {
            "means": [float(v) for v in normalization.means],
            "stds": [float(v) for v in normalization.stds],
        }
    save_stacks(path, meta, model.stacks())


def load_model(path: str | Path) -> RegressorModel:
    meta, stacks = load_stacks(path)
    kind = meta["model"]
    if kind == "mlp":
        model = MlpRegressor.__new__(MlpRegressor)
    elif kind == "aer":
        model = AerRegressor.__new__(AerRegressor)
        model.gamma = 0.0
    elif kind == "resgur":
        model = ResgurRegressor.__new__(ResgurRegressor)
    else:
        raise ValueError(f"checkpoint has unknown model kind {kind!r}")
    model.num_variables = meta["num_variables"]
    norm = meta.get("normalization")
    model.normalization = (
        NormStats(means=np.array(norm["means"]), stds=np.array(norm["stds"]))
        if norm
        else None
    )
    for name, stack in stacks.items():
        setattr(model, name, stack)
    return model


# ---------------------------------------------------------------------------
# Loss, batching, training
# ---------------------------------------------------------------------------


def batch_loss(model: RegressorModel, features, labels, gamma: float = 0.0) -> float:
    """Mean squared regression error plus gamma-weighted reconstruction.

    All samples must come from one subject (the caller's contract); with
    gamma=0 or a model without a decoder this is the plain regression MSE.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if features.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    yhat, xhat = model.forward_batch(features)
    loss = float(np.mean((yhat - labels) ** 2))
    if xhat is not None and gamma > 0.0:
        loss += gamma * float(np.mean(np.sum((xhat - features) ** 2, axis=1)))
    return loss


def sample_identical_batch(
    subject: SubjectSeries, sample_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform subset without replacement of size min(M_i, B)."""
    m = subject.sample_count
    return rng.choice(m, size=min(m, sample_size), replace=False)


def train(
    model: RegressorModel,
    dataset: Dataset,
    cfg: TrainConfig,
    on_batch: Callable[[str, np.ndarray], None] | None = None,
) -> tuple[RegressorModel, list[float]]:
    """Run identical-batch training; returns the model and epoch loss trace.

    Per epoch, subjects are visited in shuffled order and contribute one
    gradient step each.  ``on_batch(subject_id, indices)`` is invoked per
    step for instrumentation.  Divergence (non-finite loss) aborts with a
    diagnostic rather than continuing on corrupted parameters.
    """
    if not dataset.labeled:
        raise ValueError("train needs a labeled dataset (run label_dataset first)")
    rng = generator(cfg.seed, STREAM_TRAIN)
    adam = Adam(model.params(), cfg.learning_rate)
    trace: list[float] = []
    n = dataset.num_subjects
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for idx in order:
            subj = dataset.subjects[idx]
            sel = sample_identical_batch(subj, cfg.sample_size, rng)
            x = subj.features[sel]
            y = subj.labels[sel]
            b = x.shape[0]
            # Overflow here means divergence; it is caught explicitly below.
            with np.errstate(over="ignore", invalid="ignore"):
                yhat, xhat = model.forward_batch(x, training=True, rng=rng)
                resid = yhat - y
                loss = float(np.mean(resid**2))
                d_xhat = None
                if xhat is not None:
                    recon = xhat - x
                    loss += cfg.gamma * float(np.mean(np.sum(recon**2, axis=1)))
                    d_xhat = (2.0 * cfg.gamma / b) * recon
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}, subject "
                    f"{subj.subject_id} (loss={loss}); try a lower "
                    f"learning rate than {cfg.learning_rate}"
                )
            zero_grads(model.grads())
            model.backward_batch((2.0 / b) * resid, d_xhat)
            adam.step(model.grads())
            if on_batch is not None:
                on_batch(subj.subject_id, sel)
            epoch_loss += loss
        trace.append(epoch_loss / n)
    return model, trace


def predict_posterior(
    model: RegressorModel,
    dataset: Dataset,
    test_sample_cap: int | None = None,
    seed: int = 0,
) -> list[PosteriorEstimates]:
    """Per-subject posterior estimates aligned with sampling intervals.

    With ``test_sample_cap`` set, a uniform subsample of at most that many
    samples is scored per subject (test-stage analog of the training-time
    sample size).  Subjects without samples are skipped with a warning.
    """
    out = []
    for ordinal, subj in enumerate(dataset.subjects):
        m = subj.sample_count
        if m == 0:
            logger.warning("subject %s has no samples; skipped", subj.subject_id)
            continue
        if test_sample_cap is not None and test_sample_cap < m:
            rng = generator(seed, STREAM_PREDICT, ordinal)
            sel = np.sort(rng.choice(m, size=test_sample_cap, replace=False))
        else:
            sel = np.arange(m)
        yhat, _ = model.forward_batch(subj.features[sel])
        out.append(
            PosteriorEstimates(
                subject_id=subj.subject_id,
                estimates=yhat,
                intervals=subj.intervals[sel],
                latest_interval=subj.latest_interval,
                sample_ids=subj.sample_ids[sel],
                true_rul=subj.true_rul,
            )
        )
    return out


def interval_wise_median(p: PosteriorEstimates) -> PosteriorEstimates:
    """One estimate per distinct interval: the median of its samples."""
    uniq, inverse = np.unique(p.intervals, return_inverse=True)
    med = np.array(
        [np.median(p.estimates[inverse == g]) for g in range(uniq.size)]
    )
    return PosteriorEstimates(
        subject_id=p.subject_id,
        estimates=med,
        intervals=uniq,
        latest_interval=p.latest_interval,
        sample_ids=None,
        true_rul=p.true_rul,
    )


def write_estimates_csv(
    estimates: Sequence[PosteriorEstimates],
    path: str | Path,
    header_comments: Iterable[str] = (),
) -> None:
    """Posterior estimates in the stage-to-stage CSV format."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for comment in header_comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "interval", "sample_idx", "estimate", "latest_interval", "true_rul"]
        )
        for p in estimates:
            for j in range(p.count):
                writer.writerow(
                    [
                        p.subject_id,
                        int(p.intervals[j]),
                        "" if p.sample_ids is None else int(p.sample_ids[j]),
                        repr(float(p.estimates[j])),
                        p.latest_interval,
                        "" if p.true_rul is None else repr(float(p.true_rul)),
                    ]
                )


def read_estimates_csv(path: str | Path) -> list[PosteriorEstimates]:
    groups: dict[str, dict] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        header = None
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = row
                continue
            g = groups.setdefault(
                row[0], {"t": [], "s": [], "y": [], "latest": 0, "true_rul": None}
            )
            g["t"].append(int(row[1]))
            g["s"].append(int(row[2]) if row[2] else None)
            g["y"].append(float(row[3]))
            g["latest"] = int(row[4])
            g["true_rul"] = float(row[5]) if row[5] else None
    out = []
    for sid, g in groups.items():
        order = np.lexsort((np.array([s or 0 for s in g["s"]]), np.array(g["t"])))
        sample_ids = None
        if all(s is not None for s in g["s"]):
            sample_ids = np.array(g["s"], dtype=np.int64)[order]
        out.append(
            PosteriorEstimates(
                subject_id=sid,
                estimates=np.array(g["y"])[order],
                intervals=np.array(g["t"], dtype=np.int64)[order],
                latest_interval=g["latest"],
                sample_ids=sample_ids,
                true_rul=g["true_rul"],
            )
        )
    return out
