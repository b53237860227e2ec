"""Episode simulation, metrics, sweeps, and calibration glue."""

import csv

import numpy as np
import pytest

from beamtrack.harness import (
    NMSE_FLOOR_DB,
    SimConfig,
    _stream,
    bit_error_rate_mc,
    calibrate_estimate_noise,
    episode_seed,
    normalized_mse,
    plot_data,
    qfunc,
    run_episode,
    run_sweep,
)


def _tiny_config(**kw):
    base = dict(t_csi=40, num_cycles=5, variant="ekf", seed=7)
    base.update(kw)
    return SimConfig(**base)


def test_qfunc_hand_values():
    assert qfunc(0.0) == pytest.approx(0.5, abs=1e-15)
    assert qfunc(1.0) == pytest.approx(0.15865525393145705, abs=1e-15)
    assert qfunc(3.0) == pytest.approx(0.0013498980316300933, abs=1e-16)
    np.testing.assert_allclose(qfunc([-50.0, 50.0]), [1.0, 0.0], atol=1e-300)


def test_normalized_mse_hand_cases():
    assert normalized_mse(np.array([[2.0]]), np.array([[1.0]])) == pytest.approx(
        10 * np.log10(0.25)
    )
    assert normalized_mse(np.array([[1.0]]), np.array([[0.0]])) == pytest.approx(0.0)
    assert normalized_mse(np.eye(2), np.eye(2)) == NMSE_FLOOR_DB
    with pytest.raises(ValueError):
        normalized_mse(np.zeros((2, 2)), np.eye(2))


def test_bit_error_rate_mc_matches_tail_probability():
    rng = np.random.default_rng(3)
    p_true = float(qfunc(np.sqrt(2.0 * 1.0 / 0.5)))
    n = 200_000
    p_hat = bit_error_rate_mc(1.0, 0.5, n, rng)
    se = np.sqrt(p_true * (1 - p_true) / n)
    assert abs(p_hat - p_true) < 3 * se
    assert bit_error_rate_mc(1.0, 0.0, 100, rng) == 0.0


def test_sim_config_validation():
    with pytest.raises(ValueError, match="variant"):
        SimConfig(variant="oracle")
    with pytest.raises(ValueError, match="divisible"):
        SimConfig(t_csi=41)
    with pytest.raises(ValueError, match="ber_mode"):
        SimConfig(ber_mode="exact")
    with pytest.raises(ValueError, match="num_cycles"):
        SimConfig(num_cycles=0)


def test_sim_config_digest_tracks_content():
    a = SimConfig(seed=1)
    b = SimConfig(seed=1)
    c = SimConfig(seed=2)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert len(a.digest()) == 12


def test_episode_seed_properties():
    s = episode_seed(42, "snr_db", 9.0, 0)
    assert s == episode_seed(42, "snr_db", 9.0, 0)
    assert s != episode_seed(42, "snr_db", 9.0, 1)
    assert s != episode_seed(43, "snr_db", 9.0, 0)
    assert 0 <= s < 2**63


def test_stream_tags_are_independent_substreams():
    a = _stream(11, 1).uniform(size=4)
    b = _stream(11, 2).uniform(size=4)
    again = _stream(11, 1).uniform(size=4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, again)


def test_genie_static_single_path_metrics():
    # Perfect estimates on a static channel: NMSE pinned at the floor and the
    # analytic BER equal to the matched-filter tail probability every cycle.
    cfg = _tiny_config(
        variant="genie", num_paths=1, a_avg=0.0, drive_var=0.0,
        init_velocity_std=0.0, snr_db=9.0, num_cycles=4,
    )
    result = run_episode(cfg)
    np.testing.assert_array_equal(result.nmse_db, NMSE_FLOOR_DB)
    expected = float(qfunc(np.sqrt(2.0 * 10.0 ** 0.9)))
    np.testing.assert_allclose(result.ber, expected, rtol=1e-9)
    np.testing.assert_array_equal(result.aoa_error, 0.0)
    assert result.mean_nmse_db == NMSE_FLOOR_DB


def test_run_episode_is_deterministic():
    cfg = _tiny_config()
    a = run_episode(cfg, process_noise=1e-5)
    b = run_episode(cfg, process_noise=1e-5)
    np.testing.assert_array_equal(a.nmse_db, b.nmse_db)
    np.testing.assert_array_equal(a.ber, b.ber)
    np.testing.assert_array_equal(a.aoa_error, b.aoa_error)
    assert a.config_digest == b.config_digest
    assert a.variant == "ekf" and a.seed == 7


def test_run_episode_montecarlo_ber_mode():
    cfg = _tiny_config(
        variant="genie", num_paths=1, a_avg=0.0, drive_var=0.0,
        init_velocity_std=0.0, num_cycles=2, ber_mode="montecarlo",
        mc_bits_per_slot=2, snr_db=0.0,
    )
    result = run_episode(cfg)
    assert np.all(result.ber >= 0.0) and np.all(result.ber <= 1.0)


def test_proposed_variant_needs_checkpoint():
    cfg = _tiny_config(variant="proposed_csi_imu")
    with pytest.raises(ValueError, match="checkpoint"):
        run_episode(cfg)


def test_run_sweep_shape_pairing_and_csv(tmp_path):
    cfg = _tiny_config(num_cycles=3)
    out = tmp_path / "sweep.csv"
    rows = run_sweep(
        cfg, "snr_db", [6.0, 9.0], ("ekf", "genie"), trials=2,
        master_seed=5, out_path=out,
    )
    # 2 values x 2 variants x (2 trials + 1 mean row)
    assert len(rows) == 12
    trials = [r for r in rows if r["status"] == "ok"]
    means = [r for r in rows if r["status"] == "aggregate"]
    assert len(trials) == 8 and len(means) == 4

    # Variants at the same sweep cell share the episode seed (pairing).
    by_cell = {}
    for r in trials:
        by_cell.setdefault((r["axis_value"], r["trial"]), set()).add(r["seed"])
    assert all(len(seeds) == 1 for seeds in by_cell.values())

    # The mean row averages its trial rows.
    for mean_row in means:
        member = [
            float(r["mean_nmse_db"]) for r in trials
            if r["variant"] == mean_row["variant"]
            and r["axis_value"] == mean_row["axis_value"]
        ]
        assert float(mean_row["mean_nmse_db"]) == pytest.approx(np.mean(member), rel=1e-15)

    with open(out, newline="") as fh:
        back = list(csv.DictReader(fh))
    assert back == rows


def test_run_sweep_survives_failing_cells(tmp_path):
    # A proposed variant without a model fails per episode; its rows carry an
    # error status while the other variant still completes.
    cfg = _tiny_config(num_cycles=2)
    rows = run_sweep(cfg, "snr_db", [9.0], ("proposed_csi", "genie"), trials=2)
    failures = [r for r in rows if r["variant"] == "proposed_csi" and r["trial"] != "mean"]
    assert all(r["status"] == "error:ValueError" for r in failures)
    assert all(r["mean_nmse_db"] == "" for r in failures)
    empty_mean = [r for r in rows if r["variant"] == "proposed_csi" and r["trial"] == "mean"]
    assert empty_mean[0]["mean_nmse_db"] == ""
    ok = [r for r in rows if r["variant"] == "genie" and r["status"] == "ok"]
    assert len(ok) == 2


def test_run_sweep_rejects_unknown_axis():
    with pytest.raises(ValueError, match="unknown config field"):
        run_sweep(_tiny_config(), "bandwidth", [1], ("genie",), trials=1)


def test_run_sweep_episodes_hook_sees_every_success():
    seen = []
    run_sweep(
        _tiny_config(num_cycles=2), "snr_db", [9.0], ("genie",), trials=3,
        episodes_hook=lambda cfg, result: seen.append((cfg.seed, result.mean_nmse_db)),
    )
    assert len(seen) == 3
    assert len({s for s, _ in seen}) == 3


def test_calibrate_estimate_noise_grid():
    cfg = _tiny_config(num_cycles=12)
    table = calibrate_estimate_noise(
        cfg, [12.0, 6.0], episodes_per_point=1, skip_cycles=2
    )
    np.testing.assert_array_equal(table.snr_db, [6.0, 12.0])  # sorted grid
    assert np.all(table.estimate_std >= 1e-6)
    again = calibrate_estimate_noise(
        cfg, [6.0, 12.0], episodes_per_point=1, skip_cycles=2
    )
    np.testing.assert_array_equal(table.estimate_std, again.estimate_std)


def test_plot_data_writes_per_figure_csvs(tmp_path):
    cfg = _tiny_config(num_cycles=2)
    written = plot_data(
        tmp_path, cfg, variants=("ekf", "genie"), snr_values=(9.0,),
        t_csi_values=(40,), a_avg_values=(0.2 * np.pi,), trials=1,
    )
    names = sorted(p.split("/")[-1] for p in written)
    assert names == [
        "ber_vs_snr.csv", "nmse_vs_a_avg.csv", "nmse_vs_snr.csv", "nmse_vs_t_csi.csv",
    ]
    with open(tmp_path / "nmse_vs_snr.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["snr_db", "variant", "mean_nmse_db"]
    assert len(rows) == 3  # header + one aggregate row per variant
