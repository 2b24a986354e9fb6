"""Scenario configuration: nested dataclasses loaded from YAML.

Unknown keys are rejected and every default is materialised when the
effective configuration is written back out, so a run directory carries
everything needed to replay it.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .thermal import SPECIFIC_HEAT_WATER, WATER_DENSITY


class ConfigError(ValueError):
    pass


@dataclass
class ClusterSpec:
    name: str = "residential"
    kind: str = "residential"  # residential | office
    size: int = 100


@dataclass
class DeviceSpec:
    water_mass: float = 80.0
    specific_heat: float = SPECIFIC_HEAT_WATER
    surface_area: float = 1.6
    tank_resistance: float = 0.8
    efficiency: float = 0.98
    nominal_power: float = 2500.0
    water_density: float = WATER_DENSITY


@dataclass
class BoundsSpec:
    lower: float = 50.0
    upper: float = 85.0
    hard_lower: float = 45.0


@dataclass
class FleetConfig:
    clusters: list = field(default_factory=lambda: [ClusterSpec("residential", "residential", 100),
                                                    ClusterSpec("office", "office", 100)])
    device: DeviceSpec = field(default_factory=DeviceSpec)
    bounds: BoundsSpec = field(default_factory=BoundsSpec)
    ambient_temp: float = 20.0
    inlet_temp: float = 15.0
    initial_temp: list = field(default_factory=lambda: [55.0, 75.0])  # uniform range


@dataclass
class MpcConfig:
    horizon: int = 4
    window_len: float = 900.0
    step_len: float = 60.0
    big_m_factor: float = 10.0
    epsilon: float = 1e-3
    max_nodes: int = 100000
    max_widen_steps: int = 10
    perfect_foresight: bool = False


@dataclass
class RlConfig:
    price: float = 2e-8  # currency per J
    fee: float = 3e-4  # 10 % of one full-power minute at the default price
    gamma: float = 1.0
    iterations: int = 96
    n_trees: int = 10  # runtime budget: one training round is n_devices x iterations x 2 fits
    k_candidates: int | None = None
    n_min: int = 5
    time_encoding: str = "cyclic"
    history_days: int = 18
    max_batch: int = 1000
    explore_max: float = 0.2
    table_temps: list = field(default_factory=lambda: [40.0, 90.0, 0.5])  # start, stop, step


@dataclass
class DrawSpec:
    shower_volume: float = 40.0  # L
    shower_minutes: int = 8
    tap_volume: float = 2.0
    tap_minutes: int = 1
    residential_showers: float = 1.2  # events per customer-day
    residential_taps: float = 12.0
    office_showers: float = 0.1
    office_taps: float = 20.0


@dataclass
class WindSpec:
    mean_fraction: float = 0.5  # day-ahead mean, share of fleet nominal power
    error_std_fraction: float = 0.25
    error_reference: str = "baseline"  # baseline | nominal
    ar_coef: float = 0.9


@dataclass
class ChannelSpec:
    p_drop: float = 0.0
    delay_min: float = 2.0
    delay_max: float = 4.0


@dataclass
class ScenarioSection:
    days: int = 2
    seed: int = 0
    freeze_models: bool = False
    draws: DrawSpec = field(default_factory=DrawSpec)
    wind: WindSpec = field(default_factory=WindSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)


@dataclass
class OutputConfig:
    directory: str = "run"
    write_minute_log: bool = True
    write_models: bool = True


@dataclass
class ScenarioConfig:
    fleet: FleetConfig = field(default_factory=FleetConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    rl: RlConfig = field(default_factory=RlConfig)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "ScenarioConfig":
        f, m, r, s = self.fleet, self.mpc, self.rl, self.scenario
        if not f.clusters:
            raise ConfigError("fleet.clusters must not be empty")
        for c in f.clusters:
            if c.kind not in ("residential", "office"):
                raise ConfigError(f"fleet.clusters: unknown kind {c.kind!r}")
            if c.size < 1:
                raise ConfigError("fleet.clusters: size must be >= 1")
        if len({c.name for c in f.clusters}) != len(f.clusters):
            raise ConfigError("fleet.clusters: names must be unique")
        b = f.bounds
        if not b.hard_lower < b.lower < b.upper:
            raise ConfigError("fleet.bounds: need hard_lower < lower < upper")
        if len(f.initial_temp) != 2 or not f.initial_temp[0] <= f.initial_temp[1]:
            raise ConfigError("fleet.initial_temp must be [low, high]")
        if m.horizon < 1:
            raise ConfigError("mpc.horizon must be >= 1")
        k = m.window_len / m.step_len
        if m.step_len <= 0 or abs(k - round(k)) > 1e-9:
            raise ConfigError("mpc.window_len must be a whole multiple of mpc.step_len")
        if abs(86400 / m.window_len - 96) > 1e-9:
            raise ConfigError("mpc.window_len must be 900 s (the state uses 96 quarters per day)")
        if m.epsilon <= 0 or m.big_m_factor <= 1:
            raise ConfigError("mpc.epsilon must be > 0 and mpc.big_m_factor > 1")
        if r.price < 0 or r.fee < 0:
            raise ConfigError("rl.price and rl.fee must be >= 0")
        if not 0 < r.gamma <= 1:
            raise ConfigError("rl.gamma must be in (0, 1]")
        if r.iterations < 1 or r.n_trees < 1 or r.n_min < 2 or r.history_days < 1 or r.max_batch < 2:
            raise ConfigError("rl: iterations, n_trees, history_days >= 1; n_min, max_batch >= 2")
        if r.time_encoding not in ("raw", "cyclic"):
            raise ConfigError("rl.time_encoding must be raw or cyclic")
        if not 0 <= r.explore_max <= 1:
            raise ConfigError("rl.explore_max must be in [0, 1]")
        if len(r.table_temps) != 3 or r.table_temps[2] <= 0 or r.table_temps[1] <= r.table_temps[0]:
            raise ConfigError("rl.table_temps must be [start, stop, step] with stop > start")
        if s.days < 1:
            raise ConfigError("scenario.days must be >= 1")
        if not 0 <= s.channel.p_drop <= 1:
            raise ConfigError("scenario.channel.p_drop must be in [0, 1]")
        if not 0 <= s.channel.delay_min <= s.channel.delay_max < m.step_len:
            raise ConfigError("scenario.channel delays must satisfy 0 <= min <= max < step_len")
        if s.wind.error_reference not in ("baseline", "nominal"):
            raise ConfigError("scenario.wind.error_reference must be baseline or nominal")
        if not -1 < s.wind.ar_coef < 1 or s.wind.error_std_fraction < 0:
            raise ConfigError("scenario.wind: need |ar_coef| < 1 and error_std_fraction >= 0")
        d = s.draws
        if min(d.shower_volume, d.tap_volume, d.residential_showers, d.residential_taps,
               d.office_showers, d.office_taps) < 0 or d.shower_minutes < 1 or d.tap_minutes < 1:
            raise ConfigError("scenario.draws: volumes and rates must be >= 0, durations >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        elif name == "clusters":
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[name] = [_build(ClusterSpec, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[name] = _coerce(value, default, sub)
    return cls(**kwargs)


def _coerce(value, default, path):
    if default is None:
        if value is None or isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected an integer or null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(f"{path}: expected a list of numbers")
        return [float(v) for v in value]
    return value


def from_dict(data: dict | None) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "").validate()


def load(path) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from None
    return from_dict(data)


def dump(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
