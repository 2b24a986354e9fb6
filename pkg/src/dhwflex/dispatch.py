"""Split a cluster energy setpoint into per-device on/off commands.

Devices below their lower comfort bound are switched on unconditionally and
count towards the committed power. The others are visited in order of
increasing advantage of switching on, each one switched on while the
committed power is still below ``setpoint / window``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DispatchRequest:
    setpoint: float  # J over the window
    window_len: float  # s
    temps: np.ndarray
    nominal_power: np.ndarray
    t_lower: np.ndarray
    t_upper: np.ndarray
    adv_on: np.ndarray  # A(x, 1); NaN where no model is available

    def __post_init__(self):
        self.temps = np.atleast_1d(np.asarray(self.temps, dtype=float))
        n = len(self.temps)
        if n == 0:
            raise ValueError("dispatch needs at least one device")
        if self.setpoint < 0:
            raise ValueError("setpoint must be >= 0")
        self.nominal_power = np.broadcast_to(np.asarray(self.nominal_power, dtype=float), (n,))
        self.t_lower = np.broadcast_to(np.asarray(self.t_lower, dtype=float), (n,))
        self.t_upper = np.broadcast_to(np.asarray(self.t_upper, dtype=float), (n,))
        self.adv_on = np.broadcast_to(np.asarray(self.adv_on, dtype=float), (n,))


@dataclass
class DispatchResult:
    u: np.ndarray  # int8 per device
    committed_power: float  # W
    forced: np.ndarray  # bool per device
    order: np.ndarray  # ranked non-forced candidates


def dispatch(req: DispatchRequest) -> DispatchResult:
    target = req.setpoint / req.window_len
    forced = req.temps < req.t_lower
    u = forced.astype(np.int8)
    p_d = float(req.nominal_power[forced].sum())
    cand = np.flatnonzero(~forced & (req.temps <= req.t_upper))
    # no model: rank last, stable by device index
    adv = np.where(np.isnan(req.adv_on[cand]), np.inf, req.adv_on[cand])
    order = cand[np.lexsort((cand, adv))]
    for i in order:
        if p_d < target:
            u[i] = 1
            p_d += req.nominal_power[i]
        else:
            break
    return DispatchResult(u=u, committed_power=p_d, forced=forced, order=order)


def committed_energy(result: DispatchResult, window_len: float) -> float:
    return result.committed_power * window_len
