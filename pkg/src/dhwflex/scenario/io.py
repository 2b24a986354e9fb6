"""Run directory layout: CSV logs, metrics and figure data series.

Floats are written with ``repr`` so reading a log back reproduces the
in-memory arrays bit for bit, and metrics recomputed from files match the
ones computed during the run.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .loop import RunLog
from .metrics import metrics

MINUTE_FILE = "runlog_minute.csv"
QUARTER_FILE = "runlog_quarter.csv"
META_FILE = "runlog_meta.json"
METRICS_FILE = "metrics.json"
FIGURE_FILES = ("fig_power_tracking.csv", "fig_cluster_power.csv", "fig_temperatures.csv",
                "fig_energy_request.csv")

MINUTE_COLUMNS = ("device_id", "minute", "u", "u_phys", "delivered_J", "temp_C", "delay_s", "dropped")
QUARTER_COLUMNS = ("quarter_index", "cluster", "pi_J", "sigma", "objective", "status", "widened_C",
                   "theta", "delivered_J", "baseline_W", "wind_day_ahead_W", "wind_short_term_W")


class RunLogError(ValueError):
    pass


def _r(x) -> str:
    return repr(float(x))


def write_metrics(m: dict, path) -> None:
    Path(path).write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


def write_runlog(log: RunLog, out_dir, minute_log: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "device_ids": log.device_ids, "cluster_of": log.cluster_of.tolist(),
        "cluster_names": log.cluster_names, "nominal_power": log.nominal_power,
        "step_len": log.step_len, "window_len": log.window_len, "t_lower": log.t_lower,
        "t_upper": log.t_upper, "overshoot_slack": log.overshoot_slack,
        "final_temps": log.temps[-1].tolist(), "n_minutes": log.n_minutes,
        "n_quarters": log.n_quarters, "minute_log": minute_log, "info": log.meta,
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=1) + "\n")
    dlv = log.delivered()
    with open(out / QUARTER_FILE, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUARTER_COLUMNS)
        for q in range(log.n_quarters):
            for c, name in enumerate(log.cluster_names):
                w.writerow([q, name, _r(log.pi[q, c]), int(log.sigma[q, c]), _r(log.objective[q]),
                            log.status[q], int(log.widened[q]), _r(log.theta[q, c]), _r(dlv[q, c]),
                            _r(log.baseline[q]), _r(log.wind_day_ahead[q]), _r(log.wind_short_term[q])])
    if minute_log:
        e = log.nominal_power * log.step_len
        with open(out / MINUTE_FILE, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MINUTE_COLUMNS)
            for k in range(log.n_minutes):
                up = log.u_phys[k]
                w.writerows(zip(log.device_ids, [k] * len(up), log.u[k].tolist(), up.tolist(),
                                [_r(x) for x in up * e], [_r(x) for x in log.temps[k]],
                                [_r(x) for x in log.delay[k]], log.dropped[k].astype(int).tolist()))


def read_runlog(run_dir) -> RunLog:
    d = Path(run_dir)
    if not d.is_dir():
        raise RunLogError(f"run directory not found: {d}")
    missing = [f for f in (META_FILE, QUARTER_FILE, MINUTE_FILE) if not (d / f).is_file()]
    if missing:
        raise RunLogError(f"{d}: incomplete run log, missing {', '.join(missing)}")
    meta = json.loads((d / META_FILE).read_text())
    ids = meta["device_ids"]
    names = meta["cluster_names"]
    n_dev, n_min, n_q, C = len(ids), meta["n_minutes"], meta["n_quarters"], len(names)
    col = {name: i for i, name in enumerate(names)}

    rows = list(csv.reader(open(d / QUARTER_FILE, newline="")))
    if tuple(rows[0]) != QUARTER_COLUMNS or len(rows) - 1 != n_q * C:
        raise RunLogError(f"{d / QUARTER_FILE}: expected {n_q * C} rows with the standard header")
    pi = np.zeros((n_q, C))
    sigma = np.zeros((n_q, C), dtype=int)
    theta = np.zeros((n_q, C))
    obj, widened, base, wda, wst = (np.zeros(n_q) for _ in range(5))
    widened = widened.astype(int)
    status = [""] * n_q
    for r in rows[1:]:
        q, c = int(r[0]), col[r[1]]
        pi[q, c], sigma[q, c], theta[q, c] = float(r[2]), int(r[3]), float(r[7])
        obj[q], status[q], widened[q] = float(r[4]), r[5], int(r[6])
        base[q], wda[q], wst[q] = float(r[9]), float(r[10]), float(r[11])

    u = np.zeros((n_min, n_dev), dtype=np.int8)
    u_phys = np.zeros((n_min, n_dev), dtype=np.int8)
    temps = np.zeros((n_min + 1, n_dev))
    delay = np.zeros((n_min, n_dev))
    dropped = np.zeros((n_min, n_dev), dtype=bool)
    seen = np.zeros((n_min, n_dev), dtype=bool)
    dev = {name: i for i, name in enumerate(ids)}
    with open(d / MINUTE_FILE, newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != MINUTE_COLUMNS:
            raise RunLogError(f"{d / MINUTE_FILE}: bad header")
        for lineno, r in enumerate(reader, start=2):
            try:
                i, k = dev[r[0]], int(r[1])
                u[k, i], u_phys[k, i] = int(r[2]), int(r[3])
                temps[k, i], delay[k, i], dropped[k, i] = float(r[5]), float(r[6]), r[7] == "1"
            except (KeyError, ValueError, IndexError) as exc:
                raise RunLogError(f"{d / MINUTE_FILE}: line {lineno}: {exc}") from None
            seen[k, i] = True
    if not seen.all():
        raise RunLogError(f"{d / MINUTE_FILE}: incomplete, {int((~seen).sum())} device-minutes missing")
    temps[n_min] = meta["final_temps"]
    return RunLog(device_ids=ids, cluster_of=np.array(meta["cluster_of"]), cluster_names=names,
                  nominal_power=meta["nominal_power"], step_len=meta["step_len"],
                  window_len=meta["window_len"], t_lower=meta["t_lower"], t_upper=meta["t_upper"],
                  overshoot_slack=meta["overshoot_slack"], u=u, u_phys=u_phys, temps=temps,
                  dropped=dropped, delay=delay, pi=pi, sigma=sigma, theta=theta, objective=obj,
                  status=status, widened=widened, baseline=base, wind_day_ahead=wda,
                  wind_short_term=wst, meta=meta.get("info", {}))


def write_figures(log: RunLog, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f for f in FIGURE_FILES]
    p_mpc, p_rl, target = log.p_mpc(), log.p_rl(), log.target()
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quarter_index", "baseline_W", "target_W", "p_mpc_W", "p_rl_W",
                    "wind_error_W", "balancing_W"])
        for q in range(log.n_quarters):
            w.writerow([q, _r(log.baseline[q]), _r(target[q]), _r(p_mpc[q]), _r(p_rl[q]),
                        _r(log.wind_short_term[q] - log.wind_day_ahead[q]), _r(p_rl[q] - log.baseline[q])])
    dlv = log.delivered()
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quarter_index", "cluster", "p_mpc_W", "p_rl_W"])
        for q in range(log.n_quarters):
            for c, name in enumerate(log.cluster_names):
                w.writerow([q, name, _r(log.pi[q, c] / log.window_len), _r(dlv[q, c] / log.window_len)])
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", "cluster", "mean_temp_C", "min_temp_C", "max_temp_C"])
        for c, name in enumerate(log.cluster_names):
            t = log.temps[:, log.cluster_of == c]
            for k in range(t.shape[0]):
                w.writerow([k, name, _r(t[k].mean()), _r(t[k].min()), _r(t[k].max())])
    with open(paths[3], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quarter_index", "cluster", "requested_J", "delivered_J"])
        for q in range(log.n_quarters):
            for c, name in enumerate(log.cluster_names):
                w.writerow([q, name, _r(log.pi[q, c]), _r(dlv[q, c])])
    return paths


def report(run_dir, out_dir=None) -> dict:
    """Recompute metrics from the files of a run and write the figure series."""
    log = read_runlog(run_dir)
    m = metrics(log)
    out = Path(out_dir or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(m, out / METRICS_FILE)
    write_figures(log, out)
    return m
