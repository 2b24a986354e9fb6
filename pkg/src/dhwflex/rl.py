"""Per-device batch reinforcement learning: fitted (double) Q-iteration and advantages.

The device MDP has state ``(quarter of day, tank temperature)`` and binary
action ``u``. Transitions come from logs, costs are recomputed from the
*physical* action that the backup controller let through:

    c = p_nom * dt * price * u_phys - fee * [T > T_lower]

Costs are minimised, so the greedy policy and the advantage use ``min``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import forest as xt

ACTIONS = (0, 1)
QUARTERS_PER_DAY = 96


class BatchError(ValueError):
    pass


@dataclass(frozen=True)
class ObservedState:
    quarter: int  # 1..96
    temperature: float

    def __post_init__(self):
        if not 1 <= self.quarter <= QUARTERS_PER_DAY:
            raise ValueError(f"quarter must be in 1..96, got {self.quarter}")
        if not np.isfinite(self.temperature):
            raise ValueError("temperature must be finite")


@dataclass
class TransitionBatch:
    quarter: np.ndarray
    temp: np.ndarray
    u: np.ndarray
    u_phys: np.ndarray
    quarter_next: np.ndarray
    temp_next: np.ndarray
    device_id: str = "0"

    def __post_init__(self):
        self.quarter = np.asarray(self.quarter, dtype=np.int64)
        self.temp = np.asarray(self.temp, dtype=float)
        self.u = np.asarray(self.u, dtype=np.int64)
        self.u_phys = np.asarray(self.u_phys, dtype=np.int64)
        self.quarter_next = np.asarray(self.quarter_next, dtype=np.int64)
        self.temp_next = np.asarray(self.temp_next, dtype=float)
        n = len(self.quarter)
        if any(len(a) != n for a in (self.temp, self.u, self.u_phys, self.quarter_next, self.temp_next)):
            raise BatchError("transition arrays must share one length")

    def __len__(self) -> int:
        return len(self.quarter)

    def take(self, idx) -> "TransitionBatch":
        return TransitionBatch(self.quarter[idx], self.temp[idx], self.u[idx], self.u_phys[idx],
                               self.quarter_next[idx], self.temp_next[idx], self.device_id)

    def subsample(self, max_size: int | None, rng: np.random.Generator) -> "TransitionBatch":
        if max_size is None or len(self) <= max_size:
            return self
        return self.take(np.sort(rng.choice(len(self), size=max_size, replace=False)))

    @classmethod
    def concat(cls, batches) -> "TransitionBatch":
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, f) for b in batches])
                     for f in ("quarter", "temp", "u", "u_phys", "quarter_next", "temp_next")),
                   device_id=batches[0].device_id)


BATCH_COLUMNS = ("device_id", "quarter", "temp_C", "u", "u_phys", "quarter_next", "temp_next_C")


def write_batch_csv(path, batches) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BATCH_COLUMNS)
        for b in batches:
            for row in zip(b.quarter, b.temp, b.u, b.u_phys, b.quarter_next, b.temp_next):
                w.writerow([b.device_id, int(row[0]), repr(float(row[1])), int(row[2]), int(row[3]),
                            int(row[4]), repr(float(row[5]))])


def read_batch_csv(path) -> dict[str, TransitionBatch]:
    """Load a transition CSV into per-device batches; malformed rows raise with line numbers."""
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise BatchError(f"{path}: empty batch file")
        if tuple(h.strip() for h in header) != BATCH_COLUMNS:
            raise BatchError(f"{path}: line 1: expected header {','.join(BATCH_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(BATCH_COLUMNS):
                raise BatchError(f"{path}: line {lineno}: expected {len(BATCH_COLUMNS)} fields, got {len(rec)}")
            try:
                q, t, u, up, qn, tn = int(rec[1]), float(rec[2]), int(rec[3]), int(rec[4]), int(rec[5]), float(rec[6])
            except ValueError as exc:
                raise BatchError(f"{path}: line {lineno}: {exc}") from None
            if not (1 <= q <= QUARTERS_PER_DAY and 1 <= qn <= QUARTERS_PER_DAY):
                raise BatchError(f"{path}: line {lineno}: quarter out of range 1..96")
            if u not in ACTIONS or up not in ACTIONS:
                raise BatchError(f"{path}: line {lineno}: actions must be 0 or 1")
            if not (np.isfinite(t) and np.isfinite(tn)):
                raise BatchError(f"{path}: line {lineno}: non-finite temperature")
            rows.setdefault(rec[0], []).append((q, t, u, up, qn, tn))
    if not rows:
        raise BatchError(f"{path}: batch contains no transitions")
    out = {}
    for dev, recs in rows.items():
        a = list(zip(*recs))
        out[dev] = TransitionBatch(*a, device_id=dev)
    return out


def encode(quarter, temp, u, time_encoding: str = "cyclic") -> np.ndarray:
    q = np.asarray(quarter, dtype=float)
    temp = np.asarray(temp, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), q.shape)
    if time_encoding == "raw":
        return np.column_stack([q, temp, u])
    if time_encoding == "cyclic":
        ang = 2.0 * np.pi * q / QUARTERS_PER_DAY
        return np.column_stack([q, np.sin(ang), np.cos(ang), temp, u])
    raise ValueError(f"unknown time_encoding {time_encoding!r}")


def transition_costs(batch: TransitionBatch, price: float, fee: float, nominal_power: float = 2500.0,
                     t_lower: float = 50.0, step_len: float = 60.0) -> np.ndarray:
    if price < 0 or fee < 0:
        raise ValueError("price and fee must be >= 0")
    return nominal_power * step_len * price * batch.u_phys - fee * (batch.temp > t_lower)


# --- regressors -----------------------------------------------------------

class LookupRegressor:
    """Exact per-input mean; unseen inputs predict ``default``. For finite MDPs."""

    def __init__(self, default: float = 0.0):
        self.default = default

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        table: dict[bytes, list] = {}
        for row, target in zip(X, np.asarray(y, dtype=float)):
            acc = table.setdefault(row.tobytes(), [0.0, 0])
            acc[0] += target
            acc[1] += 1
        fitted = LookupRegressor(self.default)
        fitted.table = {k: s / c for k, (s, c) in table.items()}
        return fitted

    def predict(self, X):
        X = np.ascontiguousarray(np.asarray(X, dtype=float))
        return np.array([self.table.get(row.tobytes(), self.default) for row in X])


class ForestRegressor:
    def __init__(self, params: xt.ForestParams = xt.ForestParams(), backend: str | None = None):
        self.params = params
        self.backend = backend
        self._calls = 0

    def fit(self, X, y):
        # fresh randomness for every refit, still fully determined by the seed
        p = xt.ForestParams(self.params.n_trees, self.params.k_candidates, self.params.n_min,
                            self.params.rng_seed * 1_000_003 + self._calls)
        self._calls += 1
        return xt.fit(X, y, p, backend=self.backend)


# --- fitted Q-iteration ---------------------------------------------------

def _min_next(model, X_next, encode_fn, gamma):
    if model is None:
        return np.zeros(len(X_next))
    q = np.column_stack([model.predict(encode_fn(X_next, a)) for a in ACTIONS])
    return gamma * q.min(axis=1)


def _check_targets(targets, it):
    if not np.all(np.isfinite(targets)):
        bad = np.flatnonzero(~np.isfinite(targets))
        raise FloatingPointError(f"non-finite Q targets at iteration {it}: rows {bad[:10].tolist()}")


def fitted_q_iteration(X, u, X_next, costs, iterations: int, regressor, gamma: float = 1.0,
                       encode_fn=None):
    """Generic FQI over arbitrary state rows. ``encode_fn(states, action) -> features``."""
    if len(costs) == 0:
        raise BatchError("empty batch")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    encode_fn = encode_fn or (lambda S, a: np.column_stack([S, np.broadcast_to(a, len(S))]))
    X_sa = encode_fn(X, u)
    model = None
    for it in range(1, iterations + 1):
        targets = costs + _min_next(model, X_next, encode_fn, gamma)
        _check_targets(targets, it)
        model = regressor.fit(X_sa, targets)
    return model


def fitted_double_q_iteration(X, u, X_next, costs, iterations: int, regressor, rng: np.random.Generator,
                              gamma: float = 1.0, encode_fn=None):
    """Two estimators on random halves; each picks the argmin action, the other evaluates it.

    Returns the pair ``(model_a, model_b)``.
    """
    n = len(costs)
    if n == 0:
        raise BatchError("empty batch")
    if n < 2:
        raise BatchError("double Q-iteration needs at least two transitions")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    encode_fn = encode_fn or (lambda S, a: np.column_stack([S, np.broadcast_to(a, len(S))]))
    X_sa = encode_fn(X, u)
    qa = qb = None
    for it in range(1, iterations + 1):
        perm = rng.permutation(n)
        halves = (perm[: n // 2], perm[n // 2:])
        new = []
        for half, (sel, ev) in zip(halves, ((qa, qb), (qb, qa))):
            if sel is None:
                nxt = np.zeros(len(half))
            else:
                Xn = X_next[half]
                q_sel = np.column_stack([sel.predict(encode_fn(Xn, a)) for a in ACTIONS])
                best = np.argmin(q_sel, axis=1)  # ties -> action 0
                q_ev = np.column_stack([ev.predict(encode_fn(Xn, a)) for a in ACTIONS])
                nxt = gamma * q_ev[np.arange(len(half)), best]
            targets = costs[half] + nxt
            _check_targets(targets, it)
            new.append(regressor.fit(X_sa[half], targets))
        qa, qb = new
    return qa, qb


def merge_forests(a: xt.Forest, b: xt.Forest) -> xt.Forest:
    """Single forest whose prediction is the mean of two equally sized forests."""
    if a.n_trees != b.n_trees or a.n_features != b.n_features:
        raise ValueError("can only merge forests with equal tree count and input width")
    off = a.n_nodes
    return xt.Forest(
        a.n_features,
        np.concatenate([a.roots, b.roots + off]).astype(np.int32),
        np.concatenate([a.feature, b.feature]),
        np.concatenate([a.threshold, b.threshold]),
        np.concatenate([a.left, np.where(b.left >= 0, b.left + off, -1)]).astype(np.int32),
        np.concatenate([a.right, np.where(b.right >= 0, b.right + off, -1)]).astype(np.int32),
        np.concatenate([a.value, b.value]),
        meta=dict(a.meta),
    )


@dataclass
class QEnsemble:
    """Approximate Q-function of one device over ``(quarter, temperature, action)``."""

    predictors: list
    iterations: int
    price: float
    fee: float
    gamma: float = 1.0
    time_encoding: str = "cyclic"
    device_id: str = "0"
    meta: dict = field(default_factory=dict)

    def q_values(self, quarter, temp) -> np.ndarray:
        quarter = np.atleast_1d(quarter)
        temp = np.atleast_1d(np.asarray(temp, dtype=float))
        out = np.zeros((len(temp), len(ACTIONS)))
        for a in ACTIONS:
            X = encode(quarter, temp, a, self.time_encoding)
            out[:, a] = sum(p.predict(X) for p in self.predictors) / len(self.predictors)
        return out

    def save(self, path) -> None:
        if len(self.predictors) != 1 or not isinstance(self.predictors[0], xt.Forest):
            raise TypeError("only single-forest ensembles can be serialised")
        f = self.predictors[0]
        f.meta = dict(f.meta, iterations=self.iterations, price=self.price, fee=self.fee,
                      gamma=self.gamma, time_encoding=self.time_encoding, device_id=self.device_id)
        f.save(path)

    @classmethod
    def load(cls, path) -> "QEnsemble":
        f = xt.Forest.load(path)
        m = f.meta
        return cls([f], iterations=m["iterations"], price=m["price"], fee=m["fee"], gamma=m["gamma"],
                   time_encoding=m["time_encoding"], device_id=str(m["device_id"]))


def _device_encoder(time_encoding):
    return lambda S, a: encode(S[:, 0], S[:, 1], a, time_encoding)


def _as_rows(batch: TransitionBatch):
    X = np.column_stack([batch.quarter, batch.temp])
    Xn = np.column_stack([batch.quarter_next, batch.temp_next])
    return X, Xn


def fqi(batch: TransitionBatch, price: float, fee: float, iterations: int = 96,
        forest_params: xt.ForestParams | None = None, *, nominal_power: float = 2500.0,
        t_lower: float = 50.0, step_len: float = 60.0, gamma: float = 1.0, regressor=None,
        time_encoding: str = "cyclic") -> QEnsemble:
    costs = transition_costs(batch, price, fee, nominal_power, t_lower, step_len)
    reg = regressor or ForestRegressor(forest_params or xt.ForestParams())
    X, Xn = _as_rows(batch)
    model = fitted_q_iteration(X, batch.u, Xn, costs, iterations, reg, gamma,
                               _device_encoder(time_encoding))
    return QEnsemble([model], iterations, price, fee, gamma, time_encoding, batch.device_id)


def double_fqi(batch: TransitionBatch, price: float, fee: float, iterations: int = 96,
               forest_params: xt.ForestParams | None = None, *, nominal_power: float = 2500.0,
               t_lower: float = 50.0, step_len: float = 60.0, gamma: float = 1.0, regressor=None,
               time_encoding: str = "cyclic", seed: int | None = None) -> QEnsemble:
    forest_params = forest_params or xt.ForestParams()
    costs = transition_costs(batch, price, fee, nominal_power, t_lower, step_len)
    reg = regressor or ForestRegressor(forest_params)
    rng = np.random.default_rng(forest_params.rng_seed if seed is None else seed)
    X, Xn = _as_rows(batch)
    qa, qb = fitted_double_q_iteration(X, batch.u, Xn, costs, iterations, reg, rng, gamma,
                                       _device_encoder(time_encoding))
    preds = [merge_forests(qa, qb)] if isinstance(qa, xt.Forest) else [qa, qb]
    return QEnsemble(preds, iterations, price, fee, gamma, time_encoding, batch.device_id)


def _state_args(x, temp):
    if isinstance(x, ObservedState):
        return x.quarter, x.temperature
    return x, temp


def greedy_policy(q: QEnsemble, x, temp=None):
    """Cost-minimising action; exact ties go to ``u = 0``."""
    qv = q.q_values(*_state_args(x, temp))
    out = np.argmin(qv, axis=1)
    return int(out[0]) if isinstance(x, ObservedState) or np.ndim(x) == 0 else out


def advantage(q: QEnsemble, x, temp=None):
    """``(A(x, 0), A(x, 1))``: each action's Q-value above the per-state minimum."""
    qv = q.q_values(*_state_args(x, temp))
    adv = qv - qv.min(axis=1, keepdims=True)
    if isinstance(x, ObservedState) or np.ndim(x) == 0:
        return float(adv[0, 0]), float(adv[0, 1])
    return adv[:, 0], adv[:, 1]


@dataclass
class AdvantageTable:
    """Q-values of one or more devices tabulated on ``quarter x temperature``.

    Lookups interpolate Q linearly in temperature and then subtract the
    per-state minimum, so looked-up advantages keep ``A >= 0`` and
    ``min_u A = 0`` exactly.
    """

    q: np.ndarray  # (n_devices, 96, n_temps, 2)
    temp_grid: np.ndarray
    device_ids: list

    @classmethod
    def from_ensembles(cls, ensembles, temp_grid) -> "AdvantageTable":
        temp_grid = np.asarray(temp_grid, dtype=float)
        qq, tt = np.meshgrid(np.arange(1, QUARTERS_PER_DAY + 1), temp_grid, indexing="ij")
        tabs = [e.q_values(qq.ravel(), tt.ravel()).reshape(QUARTERS_PER_DAY, len(temp_grid), 2)
                for e in ensembles]
        return cls(np.stack(tabs), temp_grid, [e.device_id for e in ensembles])

    def replace(self, index: int, ensemble: QEnsemble) -> None:
        one = AdvantageTable.from_ensembles([ensemble], self.temp_grid)
        self.q[index] = one.q[0]
        self.device_ids[index] = ensemble.device_id

    def q_lookup(self, quarter, temp, devices=None) -> np.ndarray:
        temp = np.asarray(temp, dtype=float)
        devices = np.arange(len(self.q)) if devices is None else np.asarray(devices)
        quarter = np.broadcast_to(np.asarray(quarter), temp.shape)
        g = self.temp_grid
        pos = np.clip((temp - g[0]) / (g[1] - g[0]), 0.0, len(g) - 1.0)
        j = np.minimum(pos.astype(int), len(g) - 2)
        w = (pos - j)[:, None]
        qi = quarter - 1
        return (1.0 - w) * self.q[devices, qi, j] + w * self.q[devices, qi, j + 1]

    def lookup(self, quarter, temp, devices=None):
        qv = self.q_lookup(quarter, temp, devices)
        adv = qv - qv.min(axis=1, keepdims=True)
        return adv[:, 0], adv[:, 1]
