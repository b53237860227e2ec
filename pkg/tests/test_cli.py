"""Command-line entry points, argument plumbing, and config files."""

import csv
import json
import math

import numpy as np
import pytest

from beamtrack.cli import (
    _angle_rate,
    _float_list,
    _inject_config,
    _load_config_file,
    build_parser,
    main,
)
from beamtrack.predictor import NoiseTable, load_checkpoint


def test_angle_rate_parser():
    assert _angle_rate("0.4pi") == pytest.approx(0.4 * math.pi)
    assert _angle_rate("pi") == pytest.approx(math.pi)
    assert _angle_rate("-0.5PI") == pytest.approx(-0.5 * math.pi)
    assert _angle_rate("2.5") == 2.5
    with pytest.raises(ValueError):
        _angle_rate("fast")


def test_float_list():
    assert _float_list("1,2.5, 3") == [1.0, 2.5, 3.0]
    assert _float_list("6,") == [6.0]


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "snr-db = 3\n"
        "num_cycles=7   # trailing comment\n"
        "\n"
        "variant = genie\n"
    )
    values = _load_config_file(path)
    assert values == {"snr_db": "3", "num_cycles": "7", "variant": "genie"}
    bad = tmp_path / "bad.cfg"
    bad.write_text("snr-db 3\n")
    with pytest.raises(ValueError, match="bad config line"):
        _load_config_file(bad)


def test_config_injection_explicit_flags_win(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("snr-db = 3\nnum-cycles = 4\n")
    parser = build_parser()

    argv = ["--config", str(path), "evaluate"]
    merged = _inject_config(argv, "evaluate")
    args = parser.parse_args(merged)
    assert args.snr_db == 3.0 and args.num_cycles == 4

    override = _inject_config(
        ["--config", str(path), "evaluate", "--snr-db", "12"], "evaluate"
    )
    args = parser.parse_args(override)
    assert args.snr_db == 12.0  # typed flag beats the file
    assert args.num_cycles == 4  # untouched file entry still applies


def test_cli_requires_a_command():
    with pytest.raises(SystemExit):
        main([])


def test_cli_evaluate_prints_metrics(capsys):
    rc = main([
        "evaluate", "--variants", "genie,ekf", "--num-cycles", "2",
        "--t-csi", "40", "--seed", "3",
    ])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "variant mean_nmse_db mean_ber"
    assert out[1].startswith("genie ") and out[2].startswith("ekf ")
    assert float(out[1].split()[1]) == -100.0


def test_cli_sweep_writes_csv(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    rc = main([
        "sweep", "--axis", "snr_db", "--values", "6,9", "--variants", "genie",
        "--trials", "1", "--num-cycles", "2", "--t-csi", "40", "--out", str(out),
    ])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4  # 2 values x (1 trial + 1 mean)
    assert {r["axis_name"] for r in rows} == {"snr_db"}


def test_cli_calibrate_noise_writes_table(tmp_path, capsys):
    out = tmp_path / "noise.json"
    rc = main([
        "calibrate-noise", "--snr-grid", "6,9", "--episodes", "1",
        "--num-cycles", "12", "--t-csi", "40", "--out", str(out),
    ])
    assert rc == 0
    table = NoiseTable.from_json(out.read_text())
    np.testing.assert_array_equal(table.snr_db, [6.0, 9.0])
    assert np.all(table.estimate_std > 0)


def test_cli_proposed_needs_checkpoint(tmp_path):
    with pytest.raises(SystemExit, match="checkpoint"):
        main([
            "evaluate", "--variants", "proposed_csi_imu", "--num-cycles", "2",
            "--t-csi", "40",
        ])


def test_cli_pipeline_data_train_evaluate(tmp_path, capsys):
    # generate-data -> train -> evaluate with the trained checkpoint.
    table_path = tmp_path / "noise.json"
    table_path.write_text(
        NoiseTable(snr_db=[0.0, 20.0], estimate_std=[0.05, 0.005]).to_json()
    )
    data_path = tmp_path / "train.npz"
    rc = main([
        "generate-data", "--noise-table", str(table_path), "--num-windows", "400",
        "--cycles-per-episode", "30", "--seed", "1", "--out", str(data_path),
    ])
    assert rc == 0 and data_path.exists()

    ckpt_path = tmp_path / "model.ckpt"
    rc = main([
        "train", "--dataset", str(data_path), "--epochs", "2", "--seed", "0",
        "--out", str(ckpt_path),
    ])
    assert rc == 0
    model = load_checkpoint(ckpt_path)
    assert model.delta == 3 and model.k_samples == 4

    capsys.readouterr()  # drop the generation/training progress lines
    rc = main([
        "evaluate", "--variants", "proposed_csi_imu,proposed_csi", "--num-cycles",
        "4", "--t-csi", "40", "--checkpoint", str(ckpt_path), "--seed", "2",
    ])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 3
    for line in out[1:]:
        nmse = float(line.split()[1])
        assert math.isfinite(nmse)


def test_cli_plot_data(tmp_path, capsys):
    out_dir = tmp_path / "figs"
    rc = main([
        "plot-data", "--variants", "genie", "--trials", "1", "--num-cycles", "2",
        "--t-csi", "40", "--out-dir", str(out_dir),
    ])
    assert rc == 0
    names = sorted(p.name for p in out_dir.iterdir())
    assert names == [
        "ber_vs_snr.csv", "nmse_vs_a_avg.csv", "nmse_vs_snr.csv", "nmse_vs_t_csi.csv",
    ]
