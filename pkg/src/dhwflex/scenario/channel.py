"""Unreliable command link between the dispatcher and the heaters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossyChannel:
    p_drop: float = 0.0
    delay_min: float = 2.0  # s
    delay_max: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError("p_drop must be in [0, 1]")
        if not 0.0 <= self.delay_min <= self.delay_max:
            raise ValueError("need 0 <= delay_min <= delay_max")

    def transmit(self, u, rng: np.random.Generator):
        """Returns ``(received, dropped, delay_s)``.

        A lost message leaves the heater uncommanded, i.e. it behaves as if
        told ``u = 0`` and only its backup controller can switch it on.
        """
        u = np.asarray(u)
        dropped = rng.random(u.shape) < self.p_drop
        delay = rng.uniform(self.delay_min, self.delay_max, size=u.shape)
        received = np.where(dropped, 0, u).astype(np.int8)
        return received, dropped, delay
