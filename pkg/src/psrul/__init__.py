"""Parameterized static regression for RUL prediction on scarce series."""

from .data import (
    DataError,
    Dataset,
    NormStats,
    ParseError,
    Sample,
    SeriesCategory,
    SubjectSeries,
    apply_normalization,
    categorize,
    fit_normalization,
    ingest_canonical_csv,
    ingest_cmapss,
    mean_collapse,
    write_canonical_csv,
)
from .labeling import (
    LabelingPolicy,
    LinearRul,
    PiecewiseLinearRul,
    WeibullRul,
    label_dataset,
    loglog_transform,
)
from .metrics import (
    MetricsReport,
    PredictionRecord,
    compute_metrics,
    rmse_interval_levels,
    rmse_subject,
    s_score,
)
from .models import (
    AerRegressor,
    MlpRegressor,
    PosteriorEstimates,
    ResgurRegressor,
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
from .rectify import (
    LMConfig,
    RectificationResult,
    fit_theta,
    initialize_theta,
    linear_rul_prediction,
    objective,
    rectify,
)
from .scarcity import ScarcityConfig, scarcify
from .synth import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"
