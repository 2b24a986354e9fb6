"""Wind forecast pair: a smooth day-ahead curve and a 15-minute-ahead forecast
that adds a stationary AR(1) error to it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class WindTraces:
    day_ahead: np.ndarray  # W per quarter
    short_term: np.ndarray
    error_std: float
    ar_coef: float

    @property
    def error(self) -> np.ndarray:
        return self.short_term - self.day_ahead

    def expected_error(self, current: float, steps_ahead) -> np.ndarray:
        """Conditional mean of the error ``steps_ahead`` quarters after one observed."""
        return current * self.ar_coef ** np.asarray(steps_ahead, dtype=float)


def generate_wind(n_quarters: int, mean_level: float, error_std: float, ar_coef: float,
                  seed: int) -> WindTraces:
    if not -1 < ar_coef < 1:
        raise ValueError("ar_coef must lie in (-1, 1)")
    if error_std < 0 or mean_level < 0:
        raise ValueError("mean_level and error_std must be >= 0")
    rng = np.random.default_rng(seed)
    t = np.arange(n_quarters) / 96.0
    phase = rng.uniform(0, 2 * np.pi, size=2)
    shape = 1.0 + 0.4 * np.sin(2 * np.pi * t + phase[0]) + 0.2 * np.sin(2 * np.pi * t / 3.0 + phase[1])
    day_ahead = mean_level * shape
    xi = rng.standard_normal(n_quarters)
    err = np.empty(n_quarters)
    innov = np.sqrt(1.0 - ar_coef ** 2) * error_std
    prev = error_std * xi[0] if n_quarters else 0.0
    for q in range(n_quarters):
        err[q] = prev if q == 0 else ar_coef * err[q - 1] + innov * xi[q]
    short_term = np.maximum(day_ahead + err, 0.0)
    return WindTraces(day_ahead, short_term, float(error_std), float(ar_coef))
