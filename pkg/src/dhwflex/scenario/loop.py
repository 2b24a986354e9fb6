"""Closed-loop simulation: quarter-hourly MPC, minute-wise advantage dispatch.

Timeline of one run:

1. ``history_days`` of exploratory operation (random duty cycles under
   backup control) to fill the transition log;
2. initial per-device training on that log;
3. ``days`` of closed-loop operation, retraining every night on the most
   recent ``history_days`` unless models are frozen.

Only phase 3 is reported in the run log.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import forest as xt
from ..aggregate import lift_from_draws
from ..config import ScenarioConfig
from ..dispatch import DispatchRequest, dispatch
from ..mpc import MiqpProblem, solve_miqp
from ..rl import AdvantageTable, QEnsemble, TransitionBatch, double_fqi
from ..thermal import ComfortBounds, DeviceParams, advance, backup, coefficients, max_step_rise
from .baseline import thermostat_baseline
from .channel import LossyChannel
from .draws import MINUTES_PER_DAY, DrawProfileModel, generate_draws
from .wind import generate_wind

log = logging.getLogger(__name__)

QUARTERS_PER_DAY = 96


@dataclass
class Fleet:
    params: DeviceParams
    bounds: ComfortBounds
    cluster_names: list
    cluster_of: np.ndarray
    device_ids: list
    ambient_temp: float = 20.0
    inlet_temp: float = 15.0

    @property
    def n_devices(self) -> int:
        return len(self.cluster_of)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.cluster_of, minlength=len(self.cluster_names))

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of == c)

    @property
    def capacity(self) -> float:
        return self.params.nominal_power * self.n_devices


def build_fleet(cfg: ScenarioConfig) -> Fleet:
    f = cfg.fleet
    params = DeviceParams(**vars(f.device))
    bounds = ComfortBounds(f.bounds.lower, f.bounds.upper, f.bounds.hard_lower)
    cluster_of, ids = [], []
    for c, spec in enumerate(f.clusters):
        cluster_of += [c] * spec.size
        ids += [f"{spec.name}-{j:03d}" for j in range(spec.size)]
    return Fleet(params, bounds, [c.name for c in f.clusters], np.array(cluster_of), ids,
                 f.ambient_temp, f.inlet_temp)


def draw_model(cfg: ScenarioConfig, kind: str) -> DrawProfileModel:
    d = cfg.scenario.draws
    showers, taps = ((d.residential_showers, d.residential_taps) if kind == "residential"
                     else (d.office_showers, d.office_taps))
    return DrawProfileModel(kind, showers, taps, d.shower_volume, d.shower_minutes,
                            d.tap_volume, d.tap_minutes)


@dataclass
class RunLog:
    """Everything recorded over the reported days."""

    device_ids: list
    cluster_of: np.ndarray
    cluster_names: list
    nominal_power: float
    step_len: float
    window_len: float
    t_lower: float
    t_upper: float
    overshoot_slack: float
    # minute level, shape (minutes, devices); temps has one extra final row
    u: np.ndarray
    u_phys: np.ndarray
    temps: np.ndarray
    dropped: np.ndarray
    delay: np.ndarray
    # quarter level
    pi: np.ndarray  # (quarters, clusters) J requested
    sigma: np.ndarray  # (quarters, clusters) known current binary
    theta: np.ndarray  # (quarters, clusters) measured aggregate temperature
    objective: np.ndarray  # (quarters,)
    status: list
    widened: np.ndarray  # (quarters,) degC added to the upper bound
    baseline: np.ndarray  # (quarters,) W
    wind_day_ahead: np.ndarray
    wind_short_term: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_minutes(self) -> int:
        return self.u.shape[0]

    @property
    def n_quarters(self) -> int:
        return self.pi.shape[0]

    @property
    def steps_per_window(self) -> int:
        return int(round(self.window_len / self.step_len))

    def delivered(self) -> np.ndarray:
        """Energy consumed per quarter and cluster, J."""
        K = self.steps_per_window
        per_min = np.stack([self.u_phys[:, self.cluster_of == c].sum(axis=1)
                            for c in range(len(self.cluster_names))], axis=1)
        e = per_min.astype(float) * self.nominal_power * self.step_len
        return e.reshape(self.n_quarters, K, -1).sum(axis=1)

    def p_mpc(self) -> np.ndarray:
        return self.pi.sum(axis=1) / self.window_len

    def p_rl(self) -> np.ndarray:
        return self.delivered().sum(axis=1) / self.window_len

    def target(self) -> np.ndarray:
        return self.baseline + self.wind_short_term - self.wind_day_ahead


def _seed_int(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> 1)


class _Engine:
    """Fleet state plus the transition history used for training."""

    def __init__(self, cfg: ScenarioConfig, fleet: Fleet, draws_kg_s: np.ndarray, temps0, total_minutes):
        self.cfg, self.fleet, self.draws = cfg, fleet, draws_kg_s
        self.dt = cfg.mpc.step_len
        self.temps_hist = np.empty((total_minutes + 1, fleet.n_devices))
        self.u_hist = np.zeros((total_minutes, fleet.n_devices), dtype=np.int8)
        self.uphys_hist = np.zeros((total_minutes, fleet.n_devices), dtype=np.int8)
        self.temps_hist[0] = temps0
        self.k = 0

    @property
    def temps(self) -> np.ndarray:
        return self.temps_hist[self.k]

    def step(self, u_cmd, u_received):
        f = self.fleet
        T = self.temps
        u_phys = backup(T, u_received, f.bounds)
        a, abar, zeta, b = coefficients(f.params, self.draws[:, self.k], f.ambient_temp,
                                        f.inlet_temp, self.dt)
        self.temps_hist[self.k + 1] = advance(T, a, abar, zeta, b, u_phys * f.params.nominal_power)
        self.u_hist[self.k] = u_cmd
        self.uphys_hist[self.k] = u_phys
        self.k += 1
        return u_phys

    def batch(self, i: int, first: int, last: int) -> TransitionBatch:
        k = np.arange(first, last)
        q = (k % MINUTES_PER_DAY) // 15 + 1
        qn = ((k + 1) % MINUTES_PER_DAY) // 15 + 1
        return TransitionBatch(q, self.temps_hist[k, i], self.u_hist[k, i], self.uphys_hist[k, i],
                               qn, self.temps_hist[k + 1, i], device_id=self.fleet.device_ids[i])


def train_fleet(engine: _Engine, cfg: ScenarioConfig, round_index: int) -> list[QEnsemble]:
    r, f = cfg.rl, engine.fleet
    last = engine.k
    first = max(0, last - r.history_days * MINUTES_PER_DAY)
    models = []
    for i in range(f.n_devices):
        seed = _seed_int(cfg.scenario.seed, round_index, i)
        batch = engine.batch(i, first, last).subsample(r.max_batch, np.random.default_rng(seed))
        params = xt.ForestParams(r.n_trees, r.k_candidates, r.n_min, seed)
        models.append(double_fqi(batch, r.price, r.fee, r.iterations, params,
                                 nominal_power=f.params.nominal_power, t_lower=f.bounds.lower,
                                 step_len=cfg.mpc.step_len, gamma=r.gamma,
                                 time_encoding=r.time_encoding, seed=seed))
    return models


def temp_grid(cfg: ScenarioConfig) -> np.ndarray:
    start, stop, step = cfg.rl.table_temps
    return np.arange(start, stop + 0.5 * step, step)


def _solve_quarter(problem_kw: dict, cfg: ScenarioConfig, fleet: Fleet, mean_temps):
    """MIQP with the documented fallback: widen the upper bound 1 degC at a time."""
    m = cfg.mpc
    for widen in range(m.max_widen_steps + 1):
        prob = MiqpProblem.from_models(**problem_kw, t_upper=fleet.bounds.upper + widen)
        sol = solve_miqp(prob, max_nodes=m.max_nodes)
        if sol.feasible:
            if widen:
                log.info("MPC feasible after widening upper bound by %d degC", widen)
            return sol.setpoint, prob.sigma0, sol.objective, "optimal", widen
        log.info("MPC %s with upper bound widened by %d degC", sol.status, widen)
    cap = fleet.params.nominal_power * fleet.sizes * m.window_len
    all_on = np.asarray(mean_temps) < fleet.bounds.lower
    log.warning("MPC infeasible; falling back to %s", "all-on/all-off per cluster")
    return np.where(all_on, cap, 0.0), prob.sigma0, np.nan, "fallback", m.max_widen_steps


def run_closed_loop(cfg: ScenarioConfig, on_models=None) -> RunLog:
    """Simulate the configured scenario. ``on_models(list[QEnsemble])`` sees every trained set."""
    t_start = time.perf_counter()
    s, m, r = cfg.scenario, cfg.mpc, cfg.rl
    fleet = build_fleet(cfg)
    N, C = fleet.n_devices, len(fleet.cluster_names)
    K = int(round(m.window_len / m.step_len))
    warm_days = r.history_days
    span_days = warm_days + s.days + 1  # one tail day feeds the horizon beyond the last quarter
    warm_min = warm_days * MINUTES_PER_DAY
    run_min = s.days * MINUTES_PER_DAY
    seeds = np.random.SeedSequence(s.seed).spawn(6)
    ss_draw, ss_init, ss_explore, ss_channel, ss_wind, _ = seeds

    # draws, per cluster, in kg/s
    draw_models = [draw_model(cfg, spec.kind) for spec in cfg.fleet.clusters]
    draw_seeds = ss_draw.spawn(C)
    litres = np.zeros((N, span_days * MINUTES_PER_DAY))
    for c in range(C):
        ds = generate_draws(draw_models[c], int(fleet.sizes[c]), span_days,
                            int(draw_seeds[c].generate_state(1)[0]), fleet.params.water_density)
        litres[fleet.members(c)] = ds.litres_per_min
    draws = litres * (fleet.params.water_density / 60.0)
    lo, hi = cfg.fleet.initial_temp
    temps0 = np.random.default_rng(ss_init).uniform(lo, hi, N)

    # thermostat reference over the same draws and initial state
    base = thermostat_baseline(fleet.params, fleet.bounds, draws, temps0, fleet.ambient_temp,
                               fleet.inlet_temp, m.step_len, m.window_len)
    q_warm = warm_days * QUARTERS_PER_DAY
    baseline = base.quarter_power[q_warm:]
    n_q_run = s.days * QUARTERS_PER_DAY
    w = s.wind
    ref = baseline[:n_q_run].mean() if w.error_reference == "baseline" else fleet.capacity
    wind = generate_wind(len(baseline), w.mean_fraction * fleet.capacity, w.error_std_fraction * ref,
                         w.ar_coef, int(ss_wind.generate_state(1)[0]))

    # forecast draw profiles per cluster (kg/s per minute of day)
    if m.perfect_foresight:
        forecast = np.stack([draws[fleet.members(c)].mean(axis=0) for c in range(C)])
    else:
        prof = np.stack([dm.expected_minute_profile() for dm in draw_models]) * (fleet.params.water_density / 60.0)
        forecast = np.tile(prof, (1, span_days))

    eng = _Engine(cfg, fleet, draws, temps0, warm_min + run_min)

    # phase 1: exploration
    rng_x = np.random.default_rng(ss_explore)
    for k in range(warm_min):
        if k % K == 0:
            duty = rng_x.uniform(0.0, r.explore_max, N)
        u = (rng_x.random(N) < duty).astype(np.int8)
        eng.step(u, u)
    log.info("exploration finished after %.1fs", time.perf_counter() - t_start)

    grid = temp_grid(cfg)
    models = train_fleet(eng, cfg, 0)
    table = AdvantageTable.from_ensembles(models, grid)
    if on_models:
        on_models(models)
    log.info("initial training finished after %.1fs", time.perf_counter() - t_start)

    channel = LossyChannel(s.channel.p_drop, s.channel.delay_min, s.channel.delay_max)
    rng_c = np.random.default_rng(ss_channel)
    dropped = np.zeros((run_min, N), dtype=bool)
    delay = np.zeros((run_min, N))
    pi_log = np.zeros((n_q_run, C))
    sigma_log = np.zeros((n_q_run, C), dtype=int)
    theta_log = np.zeros((n_q_run, C))
    obj_log = np.zeros(n_q_run)
    widen_log = np.zeros(n_q_run, dtype=int)
    status = []
    members = [fleet.members(c) for c in range(C)]
    p_nom = fleet.params.nominal_power
    rounds = 1

    for gq in range(n_q_run):
        m0 = warm_min + gq * K
        T = eng.temps
        theta0 = np.array([T[idx].sum() for idx in members])
        stage_models = []
        for c in range(C):
            row = []
            for st in range(m.horizon):
                seg = forecast[c, m0 + st * K: m0 + (st + 1) * K]
                row.append(lift_from_draws(fleet.params, seg, int(fleet.sizes[c]), fleet.ambient_temp,
                                           fleet.inlet_temp, m.step_len))
            stage_models.append(row)
        h = np.arange(m.horizon)
        qs = np.minimum(gq + h, len(baseline) - 1)
        err_now = wind.error[gq]
        kw = dict(models=stage_models, theta0=theta0, baseline=baseline[qs],
                  wind_day_ahead=wind.day_ahead[qs],
                  wind_short_term=wind.day_ahead[qs] + wind.expected_error(err_now, h),
                  t_lower=fleet.bounds.lower, t_hard_lower=fleet.bounds.hard_lower, p_max=p_nom,
                  epsilon=m.epsilon, big_m_factor=m.big_m_factor)
        pi, sigma0, obj, st_, widen = _solve_quarter(kw, cfg, fleet, theta0 / fleet.sizes)
        pi_log[gq], sigma_log[gq], theta_log[gq] = pi, sigma0, theta0
        obj_log[gq], widen_log[gq] = obj, widen
        status.append(st_)

        q_of_day = gq % QUARTERS_PER_DAY + 1
        for k in range(K):
            T = eng.temps
            _, adv1 = table.lookup(q_of_day, T)
            u = np.zeros(N, dtype=np.int8)
            for c, idx in enumerate(members):
                res = dispatch(DispatchRequest(pi[c], m.window_len, T[idx], p_nom, fleet.bounds.lower,
                                               fleet.bounds.upper, adv1[idx]))
                u[idx] = res.u
            recv, drp, dly = channel.transmit(u, rng_c)
            j = gq * K + k
            dropped[j], delay[j] = drp, dly
            eng.step(u, recv)

        end_of_day = (gq + 1) % QUARTERS_PER_DAY == 0
        if end_of_day and gq + 1 < n_q_run and not s.freeze_models:
            models = train_fleet(eng, cfg, rounds)
            rounds += 1
            table = AdvantageTable.from_ensembles(models, grid)
            if on_models:
                on_models(models)
            log.info("retrained after day %d (%.1fs)", (gq + 1) // QUARTERS_PER_DAY,
                     time.perf_counter() - t_start)

    sl = slice(warm_min, warm_min + run_min)
    return RunLog(
        device_ids=fleet.device_ids, cluster_of=fleet.cluster_of, cluster_names=fleet.cluster_names,
        nominal_power=p_nom, step_len=m.step_len, window_len=m.window_len,
        t_lower=fleet.bounds.lower, t_upper=fleet.bounds.upper,
        overshoot_slack=max_step_rise(fleet.params, m.step_len),
        u=eng.u_hist[sl], u_phys=eng.uphys_hist[sl], temps=eng.temps_hist[warm_min:warm_min + run_min + 1],
        dropped=dropped, delay=delay, pi=pi_log, sigma=sigma_log, theta=theta_log, objective=obj_log,
        status=status, widened=widen_log, baseline=baseline[:n_q_run].copy(),
        wind_day_ahead=wind.day_ahead[:n_q_run].copy(), wind_short_term=wind.short_term[:n_q_run].copy(),
        meta={"seed": s.seed, "training_rounds": rounds, "wind_error_std_W": wind.error_std,
              "backend": xt.BACKEND},
    )
