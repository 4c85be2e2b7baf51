"""CLI subcommands chained file-to-file, plus run/sweep determinism."""

import csv

import pytest

from psrul.cli import main
from psrul.data import ingest_canonical_csv
from psrul.metrics import read_records_csv
from psrul.models import read_estimates_csv

CONFIG_TOML = """
[data]
source = "synthetic"
[data.synthetic]
train_subjects = 5
test_subjects = 3
lifetime = [30, 60]
variables = 3
mixing_seed = 4
noise_sigma = 0.3
test_truncate = [0.5, 0.9]

[labeling]
family = "weibull"
alpha = 130.0
beta = 5.0
theta_divisor = 1.7

[model]
model = "mlp"
hidden = [12, 6]

[train]
B = 64
lr = 0.01
epochs = 30
gamma = 0.0
dropout = 0.0

[scarcity]
fraction = 0.5

[evaluation]
eval_space = "label"

[run]
replicates = 2
base_seed = 21
"""


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(CONFIG_TOML)
    return path


def test_stage_chain(tmp_path, config_path, capsys):
    train_csv = tmp_path / "train.csv"
    test_csv = tmp_path / "test.csv"
    scarce_csv = tmp_path / "train_scarce.csv"
    ckpt = tmp_path / "model.json"
    estimates_csv = tmp_path / "estimates.csv"
    records_csv = tmp_path / "records.csv"
    diag_csv = tmp_path / "diag.csv"
    metrics_txt = tmp_path / "metrics.txt"

    assert main([
        "synth", "--subjects", "5", "--lifetime", "30", "60", "--variables", "3",
        "--mixing-seed", "4", "--sigma", "0.3", "--seed", "1", "--out", str(train_csv),
    ]) == 0
    assert main([
        "synth", "--subjects", "3", "--lifetime", "30", "60", "--variables", "3",
        "--mixing-seed", "4", "--sigma", "0.3", "--truncate", "0.5", "0.9",
        "--seed", "2", "--out", str(test_csv),
    ]) == 0
    assert main([
        "scarcify", "--in", str(train_csv), "--scarcity", "0.5", "--seed", "3",
        "--out", str(scarce_csv),
    ]) == 0
    before = ingest_canonical_csv(train_csv)
    after = ingest_canonical_csv(scarce_csv)
    assert after.total_samples < before.total_samples

    assert main([
        "train", "--config", str(config_path), "--in", str(scarce_csv),
        "--seed", "5", "--out", str(ckpt),
    ]) == 0
    assert ckpt.exists()

    assert main([
        "predict", "--model", str(ckpt), "--in", str(test_csv),
        "--out", str(estimates_csv),
    ]) == 0
    estimates = read_estimates_csv(estimates_csv)
    assert len(estimates) == 3
    assert all(p.true_rul is not None for p in estimates)

    assert main([
        "rectify", "--estimates", str(estimates_csv), "--config", str(config_path),
        "--diagnostics", str(diag_csv), "--out", str(records_csv),
    ]) == 0
    records = read_records_csv(records_csv)
    assert len(records) == 3
    diag_rows = list(csv.reader(diag_csv.open()))
    assert diag_rows[0] == ["subject_id", "theta_hat", "objective", "iterations", "converged"]
    assert len(diag_rows) == 4

    assert main(["evaluate", "--records", str(records_csv), "--out", str(metrics_txt)]) == 0
    out = capsys.readouterr().out
    assert "rmse_i = " in out
    assert metrics_txt.read_text().startswith("rmse_i = ")


def test_ingest_cmapss_to_canonical(tmp_path):
    raw = tmp_path / "train_FD000.txt"
    lines = []
    for unit in (1, 2):
        for cycle in range(1, 5):
            vals = [str(unit), str(cycle)] + [f"{0.1 * cycle + unit:.3f}"] * 24
            lines.append(" ".join(vals))
    raw.write_text("\n".join(lines) + "\n")
    out = tmp_path / "canonical.csv"
    assert main(["ingest", "--cmapss", str(raw), "--out", str(out)]) == 0
    ds = ingest_canonical_csv(out)
    assert ds.num_subjects == 2
    assert ds.num_variables == 24


def test_rectify_linear_space(tmp_path, config_path):
    from psrul.labeling import WeibullRul

    fn = WeibullRul(alpha=130.0, beta=5.0, theta=100.0)
    estimates_csv = tmp_path / "estimates.csv"
    with estimates_csv.open("w") as fh:
        fh.write("subject_id,interval,sample_idx,estimate,latest_interval,true_rul\n")
        for t in (40, 60, 80):
            fh.write(f"u1,{t},1,{float(fn.value(t))!r},90,80.0\n")
    records_csv = tmp_path / "records.csv"
    assert main([
        "rectify", "--estimates", str(estimates_csv), "--config", str(config_path),
        "--space", "linear", "--out", str(records_csv),
    ]) == 0
    (record,) = read_records_csv(records_csv)
    assert record.truth == 80.0
    # Exact theta=100 estimates imply lifetime 170, so linear RUL at 90 is 80.
    assert record.predicted == pytest.approx(80.0, abs=1e-6)


def test_run_and_sweep_commands(tmp_path, config_path):
    out_a = tmp_path / "run_a"
    out_b = tmp_path / "run_b"
    assert main(["run", "--config", str(config_path), "--out", str(out_a)]) == 0
    assert main(["run", "--config", str(config_path), "--out", str(out_b)]) == 0
    summary_a = (out_a / "summary.csv").read_bytes()
    assert summary_a == (out_b / "summary.csv").read_bytes()

    sweep_dir = tmp_path / "sweep"
    assert main([
        "sweep", "--config", str(config_path), "--axis", "scarcity",
        "--values", "0.5", "--out", str(sweep_dir),
    ]) == 0
    assert (sweep_dir / "sweep.csv").read_text().count("label_rmse_i_rectified") == 1
    assert summary_a == (sweep_dir / "scarcity_0.5" / "summary.csv").read_bytes()


def test_console_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "psrul.cli", "synth", "--help"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert "--lifetime" in proc.stdout
