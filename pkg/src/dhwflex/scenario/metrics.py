"""Summary statistics of a run log."""
from __future__ import annotations

import numpy as np


def normed_deviation(x, ref) -> float:
    """``||x - ref|| / ||ref||`` with Euclidean norms."""
    x, ref = np.asarray(x, dtype=float), np.asarray(ref, dtype=float)
    denom = np.linalg.norm(ref)
    if denom == 0:
        return 0.0 if np.linalg.norm(x) == 0 else float("inf")
    return float(np.linalg.norm(x - ref) / denom)


def metrics(log) -> dict:
    if log.n_quarters == 0 or log.n_minutes == 0:
        raise ValueError("empty run log")
    p_mpc, p_rl = log.p_mpc(), log.p_rl()
    target = log.target()
    wind_dev = log.wind_short_term - log.wind_day_ahead
    req = log.pi
    dlv = log.delivered()
    nz = req > 0
    temps = log.temps[:-1]
    below = temps < log.t_lower
    return {
        "quarters": int(log.n_quarters),
        "devices": int(len(log.device_ids)),
        "deviation_rl_vs_mpc": normed_deviation(p_rl, p_mpc),
        "deviation_mpc_vs_target": normed_deviation(p_mpc, target),
        "tracking_deviation": normed_deviation(p_rl, target),
        "balancing_deviation": normed_deviation(p_rl - log.baseline, wind_dev),
        "mae_balancing_vs_wind_W": float(np.mean(np.abs((p_rl - log.baseline) - wind_dev))),
        "max_temperature_C": float(log.temps.max()),
        "min_temperature_C": float(log.temps.min()),
        "comfort_violation_device_minutes": int(below.sum()),
        "backup_violations": int(np.sum(below & (log.u_phys == 0))),
        "above_cap_device_minutes": int(np.sum(log.temps > log.t_upper + log.overshoot_slack)),
        "shortfall_quarter_fraction": float(np.mean(dlv[nz] < req[nz])) if nz.any() else 0.0,
        "mean_relative_shortfall": float((req[nz] - dlv[nz]).sum() / req[nz].sum()) if nz.any() else 0.0,
        "requested_energy_J": float(req.sum()),
        "delivered_energy_J": float(dlv.sum()),
        "dropped_on_commands": int(np.sum(log.dropped & (log.u == 1))),
        "mpc_fallback_quarters": int(sum(s != "optimal" for s in log.status)),
        "mpc_widened_quarters": int(np.sum(log.widened > 0)),
    }
