import json

import numpy as np
import pytest

from dhwflex import config
from dhwflex.dispatch import DispatchRequest, dispatch
from dhwflex.scenario import (DrawProfileModel, LossyChannel, build_fleet, generate_draws, generate_wind,
                              metrics, normed_deviation, rate_curve, run_closed_loop,
                              thermostat_baseline)
from dhwflex.scenario import io as runio
from dhwflex.scenario.loop import RunLog, _Engine
from dhwflex.thermal import ComfortBounds, DeviceParams

P = DeviceParams()
BOUNDS = ComfortBounds()


def small_config(**scenario):
    d = {"fleet": {"clusters": [{"name": "res", "kind": "residential", "size": 6},
                                {"name": "off", "kind": "office", "size": 6}]},
         "rl": {"history_days": 1, "n_trees": 3, "iterations": 4, "max_batch": 300},
         "scenario": {"days": 1, "seed": 3, **scenario}}
    return config.from_dict(d)


@pytest.fixture(scope="module")
def small_run():
    return run_closed_loop(small_config())


# --- draws ----------------------------------------------------------------

def test_zero_curve_gives_zero_draws():
    ds = generate_draws(DrawProfileModel("zero"), 5, 2, seed=1)
    assert ds.litres_per_min.shape == (5, 2880)
    assert not ds.litres_per_min.any()


def test_rate_curves_normalised_and_nonnegative():
    for kind in ("residential", "office"):
        c = rate_curve(kind)
        assert c.shape == (96,) and np.all(c >= 0) and c.sum() == pytest.approx(1.0)
    office = rate_curve("office")
    assert np.ptp(office[32:72]) == 0 and office[32] > 50 * office[0]
    with pytest.raises(ValueError):
        rate_curve("factory")


def test_residential_peaks_morning_and_evening():
    model = DrawProfileModel("residential")
    sums = np.zeros(96)
    for seed in range(10):
        mean = generate_draws(model, 100, 1, seed).mean_profile
        sums += mean.reshape(96, 15).sum(axis=1)
    morning, evening = sums[24:36], sums[72:88]
    outside = np.delete(sums, np.r_[24:36, 72:88])
    # the two peaks: one in each window, both above everything else in the day
    assert morning.max() > outside.max() and evening.max() > outside.max()
    assert sums.argmax() in range(24, 36) or sums.argmax() in range(72, 88)


def test_draws_deterministic_and_customers_independent_of_count():
    m = DrawProfileModel("office")
    a = generate_draws(m, 8, 1, seed=5).litres_per_min
    b = generate_draws(m, 8, 1, seed=5).litres_per_min
    c = generate_draws(m, 3, 1, seed=5).litres_per_min
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a[:3], c)


def test_expected_profile_matches_sample_volume():
    m = DrawProfileModel("residential")
    daily = m.expected_minute_profile().sum()
    assert daily == pytest.approx(1.2 * 40 + 12 * 2)
    sample = generate_draws(m, 400, 3, seed=2).litres_per_min.sum(axis=1).mean() / 3
    assert sample == pytest.approx(daily, rel=0.05)


def test_draws_validation():
    with pytest.raises(ValueError):
        generate_draws(DrawProfileModel(), 0, 1, 0)


# --- wind -----------------------------------------------------------------

def test_zero_error_std_gives_identical_forecasts():
    w = generate_wind(500, 1e5, 0.0, 0.9, seed=1)
    np.testing.assert_array_equal(w.short_term, w.day_ahead)


def test_white_errors_have_no_lag_one_correlation():
    w = generate_wind(20000, 1e6, 1e4, 0.0, seed=3)
    e = w.error - w.error.mean()
    r1 = np.dot(e[1:], e[:-1]) / np.dot(e, e)
    assert abs(r1) < 4 / np.sqrt(len(e))


def test_ar_error_is_stationary_with_configured_std():
    w = generate_wind(50000, 1e7, 1e4, 0.9, seed=4)
    assert w.error.std() == pytest.approx(1e4, rel=0.1)
    e = w.error - w.error.mean()
    assert np.dot(e[1:], e[:-1]) / np.dot(e, e) == pytest.approx(0.9, abs=0.02)
    np.testing.assert_allclose(w.expected_error(2.0, [0, 1, 2]), [2.0, 1.8, 1.62])


def test_wind_nonnegative_and_deterministic():
    a = generate_wind(1000, 1e4, 2e4, 0.5, seed=9)
    b = generate_wind(1000, 1e4, 2e4, 0.5, seed=9)
    assert np.all(a.short_term >= 0) and np.all(a.day_ahead >= 0)
    np.testing.assert_array_equal(a.short_term, b.short_term)
    with pytest.raises(ValueError):
        generate_wind(10, 1.0, 1.0, 1.0, seed=0)


# --- channel --------------------------------------------------------------

def test_channel_behaviour():
    u = np.ones(20000, dtype=np.int8)
    rng = np.random.default_rng(0)
    recv, drop, delay = LossyChannel(0.0).transmit(u, rng)
    assert np.all(recv == 1) and not drop.any()
    assert np.all((delay >= 2.0) & (delay <= 4.0))
    recv, drop, _ = LossyChannel(0.1).transmit(u, rng)
    assert np.all(recv[drop] == 0) and np.all(recv[~drop] == 1)
    assert drop.mean() == pytest.approx(0.1, abs=0.01)
    recv, _, _ = LossyChannel(1.0).transmit(u, rng)
    assert not recv.any()
    with pytest.raises(ValueError):
        LossyChannel(1.5)


# --- baseline -------------------------------------------------------------

def test_baseline_no_draws_from_upper_bound_is_near_zero():
    res = thermostat_baseline(P, BOUNDS, np.zeros((4, 1440)), np.full(4, 85.0))
    # standing losses alone need a couple of hours to reach the lower bound
    assert np.all(res.quarter_power[:8] == 0)
    assert res.minute_power.mean() < 0.1 * 4 * P.nominal_power


def test_baseline_hysteresis_and_capacity():
    draws = generate_draws(DrawProfileModel("residential"), 20, 2, seed=1).rate_kg_s()
    res = thermostat_baseline(P, BOUNDS, draws, np.full(20, 60.0), record_temps=True)
    assert np.all(res.minute_power <= 20 * P.nominal_power)
    assert np.all(res.quarter_power >= 0)
    assert res.temps.shape == (2881, 20)
    assert res.temps.max() < BOUNDS.upper + 0.5


def test_baseline_energy_balance():
    days, n = 5, 20
    draws = generate_draws(DrawProfileModel("residential"), n, days, seed=7).rate_kg_s()
    res = thermostat_baseline(P, BOUNDS, draws, np.full(n, 60.0), record_temps=True)
    T = res.temps
    mid = 0.5 * (T[1:] + T[:-1])
    losses = (P.loss_coeff * (mid - 20.0)).sum() * 60.0
    enthalpy = (draws.T * P.specific_heat * (mid - 15.0)).sum() * 60.0
    stored = P.thermal_capacity * (T[-1] - T[0]).sum()
    electric = P.efficiency * res.minute_power.sum() * 60.0
    assert abs(electric - (losses + enthalpy + stored)) <= 0.05 * electric


def test_baseline_window_must_divide_minutes():
    with pytest.raises(ValueError):
        thermostat_baseline(P, BOUNDS, np.zeros((1, 20)), [60.0])


# --- metrics --------------------------------------------------------------

def test_normed_deviation_examples():
    assert normed_deviation([10e3, 14e3], [10e3, 10e3]) == pytest.approx(4 / np.sqrt(200))
    assert normed_deviation([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert normed_deviation([0.0], [0.0]) == 0.0


def synthetic_log(pi, u_phys, temps=None):
    """Single-cluster log with one device per column and 15-minute windows."""
    u_phys = np.asarray(u_phys, dtype=np.int8)
    n_min, n_dev = u_phys.shape
    n_q = n_min // 15
    temps = np.full((n_min + 1, n_dev), 60.0) if temps is None else temps
    z = np.zeros(n_q)
    return RunLog(device_ids=[str(i) for i in range(n_dev)], cluster_of=np.zeros(n_dev, int),
                  cluster_names=["c"], nominal_power=2500.0, step_len=60.0, window_len=900.0,
                  t_lower=50.0, t_upper=85.0, overshoot_slack=0.5, u=u_phys.copy(), u_phys=u_phys,
                  temps=temps, dropped=np.zeros_like(u_phys, bool), delay=np.zeros(u_phys.shape),
                  pi=np.asarray(pi, float).reshape(n_q, 1), sigma=np.ones((n_q, 1), int),
                  theta=np.zeros((n_q, 1)), objective=z.copy(), status=["optimal"] * n_q,
                  widened=np.zeros(n_q, int), baseline=z.copy(), wind_day_ahead=z.copy(),
                  wind_short_term=z.copy())


def test_metrics_on_synthetic_log():
    # quarter 0: 4 devices on throughout (10 kW); quarter 1: 4 devices plus 1.6 extra device-equivalents
    u = np.zeros((30, 6), dtype=np.int8)
    u[:, :4] = 1
    u[15:, 4] = 1
    u[15:15 + 9, 5] = 1  # 25 kW*min extra -> quarter-1 power = 10 + 2.5 + 1.5 = 14 kW
    log = synthetic_log([10e3 * 900, 10e3 * 900], u)
    np.testing.assert_allclose(log.p_rl(), [10e3, 14e3])
    m = metrics(log)
    assert m["deviation_rl_vs_mpc"] == pytest.approx(4 / np.sqrt(200))
    assert m["shortfall_quarter_fraction"] == 0.0
    assert m["mean_relative_shortfall"] == pytest.approx(-4 / 20)
    assert m["backup_violations"] == 0 and m["comfort_violation_device_minutes"] == 0


def test_metrics_count_violations():
    u = np.zeros((15, 2), dtype=np.int8)
    temps = np.full((16, 2), 60.0)
    temps[3, 0] = 49.0  # below lower bound while off: a backup violation
    temps[4, 1] = 49.0
    u[4, 1] = 1
    temps[15, 0] = 86.0  # final state above the cap plus slack
    m = metrics(synthetic_log([1e6], u, temps))  # one on-minute delivers 1.5e5 J
    assert m["comfort_violation_device_minutes"] == 2
    assert m["backup_violations"] == 1
    assert m["above_cap_device_minutes"] == 1
    assert m["max_temperature_C"] == 86.0
    assert m["shortfall_quarter_fraction"] == 1.0


def test_metrics_reject_empty_log():
    with pytest.raises(ValueError):
        metrics(synthetic_log(np.zeros(0), np.zeros((0, 1))))


# --- closed loop ----------------------------------------------------------

def test_all_below_lower_bound_first_quarter_at_capacity():
    cfg = small_config(channel={"p_drop": 1.0})
    fleet = build_fleet(cfg)
    n = fleet.n_devices
    eng = _Engine(cfg, fleet, np.zeros((n, 15)), np.full(n, 40.0), 15)
    chan = LossyChannel(1.0)
    rng = np.random.default_rng(0)
    for _ in range(15):
        T = eng.temps
        u = np.zeros(n, dtype=np.int8)
        for c in range(len(fleet.cluster_names)):
            idx = fleet.members(c)
            u[idx] = dispatch(DispatchRequest(0.0, 900.0, T[idx], 2500.0, 50.0, 85.0, np.zeros(len(idx)))).u
        recv, _, _ = chan.transmit(u, rng)
        eng.step(u, recv)
    assert np.all(eng.uphys_hist == 1)
    assert eng.uphys_hist.sum() * 2500.0 * 60.0 / 900.0 == fleet.capacity


def test_closed_loop_log_complete_and_safe(small_run):
    log = small_run
    assert log.u.shape == (1440, 12) and log.temps.shape == (1441, 12)
    assert log.pi.shape == (96, 2) and len(log.status) == 96
    assert np.all(log.pi >= 0)
    below = log.temps[:-1] < log.t_lower
    assert np.all(log.u_phys[below] == 1)
    assert log.temps.max() <= log.t_upper + log.overshoot_slack
    assert log.meta["training_rounds"] == 1


def test_delivered_energy_conservation(small_run):
    log = small_run
    e = np.zeros((96, 2))
    for k in range(1440):
        for i in range(12):
            e[k // 15, log.cluster_of[i]] += int(log.u_phys[k, i]) * 2500.0 * 60.0
    np.testing.assert_array_equal(log.delivered(), e)


def test_closed_loop_deterministic(small_run):
    again = run_closed_loop(small_config())
    for f in ("u", "u_phys", "temps", "pi", "delay", "baseline", "wind_short_term"):
        np.testing.assert_array_equal(getattr(again, f), getattr(small_run, f))
    assert json.dumps(metrics(again)) == json.dumps(metrics(small_run))


def test_retraining_rounds_and_freeze():
    seen = []
    log = run_closed_loop(small_config(days=2), on_models=seen.append)
    assert log.meta["training_rounds"] == 2 and len(seen) == 2
    frozen = run_closed_loop(small_config(days=2, freeze_models=True))
    assert frozen.meta["training_rounds"] == 1


def test_dropped_commands_recorded():
    log = run_closed_loop(small_config(channel={"p_drop": 0.5}))
    assert log.dropped.any()
    on_dropped = log.dropped & (log.u == 1) & (log.temps[:-1] >= log.t_lower)
    assert np.all(log.u_phys[on_dropped] == 0)


# --- run directory io -----------------------------------------------------

def test_runlog_roundtrip_reproduces_metrics(small_run, tmp_path):
    runio.write_runlog(small_run, tmp_path)
    runio.write_metrics(metrics(small_run), tmp_path / runio.METRICS_FILE)
    first = (tmp_path / runio.METRICS_FILE).read_bytes()
    back = runio.read_runlog(tmp_path)
    for f in ("u", "u_phys", "temps", "pi", "theta", "baseline", "delay", "dropped"):
        np.testing.assert_array_equal(getattr(back, f), getattr(small_run, f))
    assert runio.report(tmp_path) == metrics(small_run)
    assert (tmp_path / runio.METRICS_FILE).read_bytes() == first
    for name in runio.FIGURE_FILES:
        assert (tmp_path / name).is_file()


def test_read_runlog_detects_incomplete(small_run, tmp_path):
    with pytest.raises(runio.RunLogError, match="missing"):
        runio.read_runlog(tmp_path)
    runio.write_runlog(small_run, tmp_path)
    lines = (tmp_path / runio.MINUTE_FILE).read_text().splitlines()
    (tmp_path / runio.MINUTE_FILE).write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(runio.RunLogError, match="incomplete"):
        runio.read_runlog(tmp_path)


@pytest.mark.slow
def test_zero_wind_error_tracks_baseline():
    # default 2x100 fleet; lighter training than the default to bound runtime
    cfg = config.from_dict({"rl": {"iterations": 24, "n_trees": 5},
                            "scenario": {"wind": {"error_std_fraction": 0.0}}})
    log = run_closed_loop(cfg)
    np.testing.assert_allclose(log.target(), log.baseline, rtol=1e-12)
    assert normed_deviation(log.p_rl(), log.baseline) <= 0.10
