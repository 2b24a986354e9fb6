"""Single-tank water heater physics.

The tank is a lumped first-order RC element. Over one step of length ``dt``
with constant draw, ambient and heating power the temperature evolves
exactly as

    T' = a*T + (1 - a)*zeta + (1 - a)*b*g

with ``a = exp(-dt*(G + B)/C)``, ``zeta = (G*T_a + B*T_in)/(G + B)`` and
``b = eta/(G + B)``, where ``B = rho_w*D_w*c_th`` is the heat-capacity flow
of the hot water drawn off and replaced by inlet water.

All functions broadcast over numpy arrays so a whole fleet can be stepped in
one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPECIFIC_HEAT_WATER = 4186.0  # J/(kg K)
WATER_DENSITY = 1.0  # kg/L


class ThermalError(ValueError):
    """Raised for invalid parameters or non-finite coefficients."""


@dataclass(frozen=True)
class DeviceParams:
    water_mass: float = 80.0  # kg
    specific_heat: float = SPECIFIC_HEAT_WATER
    surface_area: float = 1.6  # m^2
    tank_resistance: float = 0.8  # K m^2 / W
    efficiency: float = 0.98
    nominal_power: float = 2500.0  # W
    water_density: float = WATER_DENSITY
    thermal_capacity: float = field(init=False)
    loss_coeff: float = field(init=False)

    def __post_init__(self):
        for name in ("water_mass", "specific_heat", "surface_area", "tank_resistance",
                     "efficiency", "nominal_power", "water_density"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ThermalError(f"{name} must be finite and > 0, got {v!r}")
        if self.efficiency > 1:
            raise ThermalError(f"efficiency must be in (0, 1], got {self.efficiency}")
        object.__setattr__(self, "thermal_capacity", self.water_mass * self.specific_heat)
        object.__setattr__(self, "loss_coeff", self.surface_area / self.tank_resistance)

    @classmethod
    def from_volume(cls, litres: float, **kw) -> "DeviceParams":
        density = kw.get("water_density", WATER_DENSITY)
        return cls(water_mass=litres * density, **kw)


@dataclass(frozen=True)
class ComfortBounds:
    lower: float = 50.0
    upper: float = 85.0
    hard_lower: float = 45.0

    def __post_init__(self):
        if not self.hard_lower < self.lower < self.upper:
            raise ThermalError(
                f"need hard_lower < lower < upper, got {self.hard_lower}, {self.lower}, {self.upper}")


@dataclass(frozen=True)
class DeviceState:
    temperature: float
    minute_index: int = 0


@dataclass(frozen=True)
class StepInputs:
    draw_rate: float = 0.0  # kg/s
    ambient_temp: float = 20.0
    inlet_temp: float = 15.0
    heat_power: float = 0.0  # W
    step_len: float = 60.0  # s

    def validate(self, params: DeviceParams) -> None:
        if np.any(np.asarray(self.draw_rate) < 0):
            raise ThermalError("draw_rate must be >= 0")
        if not self.step_len > 0:
            raise ThermalError("step_len must be > 0")
        g = np.asarray(self.heat_power)
        if np.any(g < 0) or np.any(g > params.nominal_power):
            raise ThermalError("heat_power must lie in [0, nominal_power]")


def coefficients(params: DeviceParams, draw_rate, ambient_temp=20.0, inlet_temp=15.0,
                 step_len=60.0):
    """Vectorised ``(a, abar, zeta, b)`` for arbitrary array-like draw rates."""
    draw_rate = np.asarray(draw_rate, dtype=float)
    G = params.loss_coeff
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        B = params.water_density * draw_rate * params.specific_heat
        GB = G + B
        a = np.exp(-step_len * GB / params.thermal_capacity)
        abar = 1.0 - a
        zeta = (G * np.asarray(ambient_temp, dtype=float) + B * np.asarray(inlet_temp, dtype=float)) / GB
        b = params.efficiency / GB
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(zeta)) and np.all(np.isfinite(b))):
        raise ThermalError("non-finite step coefficient (parameter overflow/underflow)")
    return a, abar, zeta, b


def step_coefficients(params: DeviceParams, inputs: StepInputs):
    inputs.validate(params)
    a, abar, zeta, b = coefficients(params, inputs.draw_rate, inputs.ambient_temp,
                                    inputs.inlet_temp, inputs.step_len)
    if np.ndim(a) == 0:
        return float(a), float(abar), float(zeta), float(b)
    return a, abar, zeta, b


def advance(temp, a, abar, zeta, b, heat_power):
    """Apply precomputed coefficients; broadcasts."""
    return a * temp + abar * zeta + abar * b * heat_power


def step(state: DeviceState, params: DeviceParams, inputs: StepInputs) -> DeviceState:
    a, abar, zeta, b = step_coefficients(params, inputs)
    t_next = advance(state.temperature, a, abar, zeta, b, inputs.heat_power)
    return DeviceState(temperature=t_next, minute_index=state.minute_index + 1)


def backup(temp, u, bounds: ComfortBounds):
    """Local override: forced on at or below ``lower``, forced off above ``upper``."""
    temp = np.asarray(temp, dtype=float)
    out = np.where(temp <= bounds.lower, 1, np.where(temp > bounds.upper, 0, np.asarray(u)))
    out = out.astype(np.int8)
    return int(out) if out.ndim == 0 else out


def step_cost(u_phys, temp, params: DeviceParams, bounds: ComfortBounds, price: float,
              fee: float, step_len: float = 60.0):
    """Energy cost of the physical action minus the availability fee earned above ``lower``."""
    if price < 0 or fee < 0:
        raise ThermalError("price and fee must be >= 0")
    above = np.asarray(temp, dtype=float) > bounds.lower
    cost = params.nominal_power * step_len * price * np.asarray(u_phys, dtype=float) - fee * above
    return float(cost) if np.ndim(cost) == 0 else cost


def max_step_rise(params: DeviceParams, step_len: float = 60.0) -> float:
    """Upper bound on the one-step temperature increase from heating.

    ``(1 - a)*b*g <= dt*eta*p_nom/C`` for every draw rate, and ``zeta <= T``
    whenever ``T`` is above both ambient and inlet temperature. This is the
    overshoot slack past the upper comfort bound.
    """
    return step_len * params.efficiency * params.nominal_power / params.thermal_capacity
