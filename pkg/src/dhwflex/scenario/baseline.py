"""Thermostat reference: every heater on plain hysteresis control."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..thermal import ComfortBounds, DeviceParams, advance, coefficients


@dataclass
class BaselineResult:
    quarter_power: np.ndarray  # W, fleet total per quarter
    minute_power: np.ndarray  # W, fleet total per minute
    final_temps: np.ndarray
    temps: np.ndarray | None = None  # (minutes + 1, devices) when recorded


def thermostat_baseline(params: DeviceParams, bounds: ComfortBounds, draw_kg_s, temps0,
                        ambient_temp: float = 20.0, inlet_temp: float = 15.0,
                        step_len: float = 60.0, window_len: float = 900.0,
                        record_temps: bool = False) -> BaselineResult:
    """On at or below ``lower``, off at or above ``upper``, otherwise keep the previous state."""
    draw_kg_s = np.asarray(draw_kg_s, dtype=float)
    n_dev, n_min = draw_kg_s.shape
    K = int(round(window_len / step_len))
    if n_min % K:
        raise ValueError("minute count must be a whole number of windows")
    temps = np.array(temps0, dtype=float)
    trace = np.empty((n_min + 1, n_dev)) if record_temps else None
    if record_temps:
        trace[0] = temps
    on = temps <= bounds.lower
    p = params.nominal_power
    power = np.zeros(n_min)
    for k in range(n_min):
        on = np.where(temps <= bounds.lower, True, np.where(temps >= bounds.upper, False, on))
        a, abar, zeta, b = coefficients(params, draw_kg_s[:, k], ambient_temp, inlet_temp, step_len)
        temps = advance(temps, a, abar, zeta, b, on * p)
        power[k] = on.sum() * p
        if record_temps:
            trace[k + 1] = temps
    return BaselineResult(power.reshape(-1, K).mean(axis=1), power, temps, trace)
