"""Synthetic hot-water draw profiles.

Each customer produces shower and tap events as an inhomogeneous Poisson
process whose rate follows a per-quarter curve. Events have a fixed volume
spread evenly over a fixed number of minutes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QUARTERS = 96
MINUTES_PER_DAY = 1440


def _bump(hours, centre, width):
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def rate_curve(kind: str) -> np.ndarray:
    """Relative event intensity per quarter, normalised to sum to one."""
    h = (np.arange(QUARTERS) + 0.5) / 4.0
    if kind == "residential":
        w = 0.05 + _bump(h, 7.25, 0.9) + 0.8 * _bump(h, 20.0, 1.3)
    elif kind == "office":
        w = np.where((h >= 8.0) & (h < 18.0), 1.0, 0.01)
    elif kind == "zero":
        return np.zeros(QUARTERS)
    else:
        raise ValueError(f"unknown draw profile kind {kind!r}")
    return w / w.sum()


@dataclass(frozen=True)
class DrawProfileModel:
    kind: str = "residential"
    showers_per_day: float = 1.2
    taps_per_day: float = 12.0
    shower_volume: float = 40.0  # L
    shower_minutes: int = 8
    tap_volume: float = 2.0
    tap_minutes: int = 1

    @property
    def curve(self) -> np.ndarray:
        return rate_curve(self.kind)

    def expected_minute_profile(self) -> np.ndarray:
        """Expected draw in L/min for each minute of a day (events spill over midnight)."""
        lam = self.curve
        out = np.zeros(MINUTES_PER_DAY)
        for rate, vol, dur in ((self.showers_per_day, self.shower_volume, self.shower_minutes),
                               (self.taps_per_day, self.tap_volume, self.tap_minutes)):
            # event start uniform within its quarter
            start = np.repeat(rate * lam / 15.0, 15)
            for k in range(dur):
                out += np.roll(start, k) * vol / dur
        return out


@dataclass
class DrawSet:
    litres_per_min: np.ndarray  # (customers, minutes)
    density: float = 1.0

    @property
    def mean_profile(self) -> np.ndarray:
        return self.litres_per_min.mean(axis=0)

    def rate_kg_s(self, rows=slice(None), minutes=slice(None)) -> np.ndarray:
        return self.litres_per_min[rows, minutes] * (self.density / 60.0)


def _customer(rng, model: DrawProfileModel, days: int) -> np.ndarray:
    n_min = days * MINUTES_PER_DAY
    out = np.zeros(n_min)
    lam = model.curve
    for rate, vol, dur in ((model.showers_per_day, model.shower_volume, model.shower_minutes),
                           (model.taps_per_day, model.tap_volume, model.tap_minutes)):
        counts = rng.poisson(np.tile(rate * lam, days))
        q = np.repeat(np.arange(days * QUARTERS), counts)
        if q.size == 0:
            continue
        start = q * 15 + rng.integers(0, 15, size=q.size)
        idx = (start[:, None] + np.arange(dur)[None, :]).ravel()
        idx = idx[idx < n_min]
        np.add.at(out, idx, vol / dur)
    return out


def generate_draws(model: DrawProfileModel, n_customers: int, days: int, seed: int,
                   density: float = 1.0) -> DrawSet:
    """Per-minute draws in L/min; customer ``j`` depends only on ``(seed, j)``."""
    if n_customers < 1:
        raise ValueError("n_customers must be >= 1")
    if days < 1:
        raise ValueError("days must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_customers)
    mat = np.stack([_customer(np.random.default_rng(ss), model, days) for ss in children])
    return DrawSet(mat, density)
