"""Receding-horizon MIQP that plans cluster energy setpoints.

Decision variables per solve are the quarter-hour energies ``pi[i, s]`` of
every cluster ``i`` over ``horizon`` stages and the backup-logic binaries
``sigma[i, s]`` for stages ``1 .. horizon-1`` (stage 0 is measured). The
aggregate temperature is affine in ``pi`` through the lifted cluster models.

Internally energies are scaled to ``x = pi / (window * p_max * n)`` and
temperatures to per-device means so every row has O(1) coefficients. The
continuous relaxations are convex QPs solved with ``quadprog``; the Hessian
(sum of squared stage powers) is only positive semidefinite, so a tiny ridge
is added and the reported objective is always re-evaluated without it.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import quadprog

from .aggregate import LiftedClusterModel

log = logging.getLogger(__name__)

RIDGE = 1e-9
FEAS_TOL = 1e-9
INT_TOL = 1e-7
MAX_ENUM_BINARIES = 16


class MpcError(RuntimeError):
    pass


class InfeasibleInitialState(MpcError):
    """Measured aggregate temperature lies outside the hard bounds."""


def _vec(x, n, dtype=float):
    a = np.asarray(x, dtype=dtype)
    if a.ndim == 0:
        a = np.full(n, a, dtype=dtype)
    if a.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {a.shape}")
    return a


@dataclass
class MiqpProblem:
    """One MPC snapshot.

    ``decay``, ``drift`` and ``gain`` hold, per cluster and stage, the lifted
    model scalars ``M``, ``row_C . zeta_hat`` (degC) and ``row_D . 1 / window``
    (K/J) so that ``Theta' = decay*Theta + n*drift + gain*pi``.
    """

    cluster_sizes: np.ndarray
    theta0: np.ndarray  # aggregate temperatures, degC * count
    decay: np.ndarray  # (n, horizon)
    drift: np.ndarray
    gain: np.ndarray
    baseline: np.ndarray  # (horizon,) W
    wind_day_ahead: np.ndarray
    wind_short_term: np.ndarray
    t_lower: np.ndarray | float = 50.0
    t_upper: np.ndarray | float = 85.0
    t_hard_lower: np.ndarray | float = 45.0
    p_max: np.ndarray | float = 2500.0
    window_len: float = 900.0
    epsilon: float = 1e-3
    big_m: np.ndarray | None = None
    sigma0: np.ndarray | None = None
    big_m_factor: float = 10.0

    def __post_init__(self):
        self.cluster_sizes = np.atleast_1d(np.asarray(self.cluster_sizes, dtype=int))
        n = len(self.cluster_sizes)
        self.theta0 = _vec(self.theta0, n)
        self.decay = np.atleast_2d(np.asarray(self.decay, dtype=float))
        self.drift = np.atleast_2d(np.asarray(self.drift, dtype=float))
        self.gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        if not (self.decay.shape == self.drift.shape == self.gain.shape) or self.decay.shape[0] != n:
            raise ValueError("decay/drift/gain must all have shape (n_clusters, horizon)")
        H = self.horizon
        if H < 1:
            raise ValueError("horizon must be >= 1")
        self.baseline = _vec(self.baseline, H)
        self.wind_day_ahead = _vec(self.wind_day_ahead, H)
        self.wind_short_term = _vec(self.wind_short_term, H)
        self.t_lower = _vec(self.t_lower, n)
        self.t_upper = _vec(self.t_upper, n)
        self.t_hard_lower = _vec(self.t_hard_lower, n)
        self.p_max = _vec(self.p_max, n)
        if np.any(self.cluster_sizes < 1):
            raise ValueError("cluster sizes must be >= 1")
        if not np.all((self.t_hard_lower < self.t_lower) & (self.t_lower < self.t_upper)):
            raise ValueError("need t_hard_lower < t_lower < t_upper")
        if self.big_m is None:
            self.big_m = self.big_m_factor * self.cluster_sizes * (self.t_upper - self.t_hard_lower)
        self.big_m = _vec(self.big_m, n)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.sigma0 is None:
            self.sigma0 = (self.theta0 > self.cluster_sizes * self.t_lower).astype(int)
        self.sigma0 = _vec(self.sigma0, n, int)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_sizes)

    @property
    def horizon(self) -> int:
        return self.decay.shape[1]

    @property
    def n_binaries(self) -> int:
        return self.n_clusters * (self.horizon - 1)

    @property
    def capacity(self) -> np.ndarray:
        """Per-cluster all-on energy over one window, J."""
        return self.window_len * self.p_max * self.cluster_sizes

    @property
    def target_power(self) -> np.ndarray:
        """Fleet power the objective tracks at each stage, W."""
        return self.baseline + self.wind_short_term - self.wind_day_ahead

    @classmethod
    def from_models(cls, models, theta0, baseline, wind_day_ahead, wind_short_term, **kw):
        """``models[i][s]`` is the lifted model of cluster ``i`` at stage ``s``."""
        decay = np.array([[m.M for m in row] for row in models])
        drift = np.array([[m.drift() for m in row] for row in models])
        gain = np.array([[m.gain for m in row] for row in models])
        sizes = [row[0].cluster_size for row in models]
        window = models[0][0].window_len
        return cls(cluster_sizes=sizes, theta0=theta0, decay=decay, drift=drift, gain=gain,
                   baseline=baseline, wind_day_ahead=wind_day_ahead,
                   wind_short_term=wind_short_term, window_len=window, **kw)

    def objective(self, pi) -> float:
        pi = np.asarray(pi, dtype=float).reshape(self.n_clusters, self.horizon)
        resid = pi.sum(axis=0) / self.window_len - self.target_power
        return float(resid @ resid)

    def trajectory(self, pi) -> np.ndarray:
        """Aggregate temperatures ``Theta[i, 0..horizon]`` under energies ``pi``."""
        pi = np.asarray(pi, dtype=float).reshape(self.n_clusters, self.horizon)
        out = np.empty((self.n_clusters, self.horizon + 1))
        out[:, 0] = self.theta0
        for s in range(self.horizon):
            out[:, s + 1] = (self.decay[:, s] * out[:, s] + self.cluster_sizes * self.drift[:, s]
                             + self.gain[:, s] * pi[:, s])
        return out

    def to_dict(self) -> dict:
        keys = ("cluster_sizes", "theta0", "decay", "drift", "gain", "baseline", "wind_day_ahead",
                "wind_short_term", "t_lower", "t_upper", "t_hard_lower", "p_max", "big_m", "sigma0")
        d = {k: np.asarray(getattr(self, k)).tolist() for k in keys}
        d.update(window_len=float(self.window_len), epsilon=float(self.epsilon),
                 big_m_factor=float(self.big_m_factor), horizon=self.horizon)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MiqpProblem":
        d = dict(d)
        horizon = d.pop("horizon", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown problem keys: {sorted(unknown)}")
        p = cls(**d)
        if horizon is not None and horizon != p.horizon:
            raise ValueError(f"horizon {horizon} disagrees with stage data ({p.horizon})")
        return p


@dataclass
class ConstraintSet:
    """Rows ``A v >= b`` plus variable bounds over ``v = [x, s]``.

    ``x[i*H + t] = pi[i, t] / capacity[i]``; ``s[i*(H-1) + t-1] = sigma[i, t]``.
    Temperature rows are expressed in per-device degC.
    """

    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    labels: list
    n_x: int
    n_s: int
    row_scale: np.ndarray  # multiply a row residual by this to get problem units

    def violation(self, v) -> float:
        r = (self.b - self.A @ v) * self.row_scale
        vb = np.maximum(self.lower - v, v - self.upper)
        return float(max(np.max(r, initial=0.0), np.max(vb, initial=0.0)))


def _affine_temperature(p: MiqpProblem):
    """Per-device mean temperature ``base[i, t] + Lx[i, t, :] @ x[i, :]``."""
    n, H = p.n_clusters, p.horizon
    scale = p.capacity / p.cluster_sizes
    base = np.empty((n, H + 1))
    Lx = np.zeros((n, H + 1, H))
    base[:, 0] = p.theta0 / p.cluster_sizes
    for t in range(H):
        base[:, t + 1] = p.decay[:, t] * base[:, t] + p.drift[:, t]
        Lx[:, t + 1, :] = p.decay[:, t, None] * Lx[:, t, :]
        Lx[:, t + 1, t] += p.gain[:, t] * scale
    return base, Lx


def build_constraints(problem: MiqpProblem) -> ConstraintSet:
    """Big-M indicator rows, energy box and hard temperature bounds.

    Binaries are left relaxed to ``[0, 1]``; callers narrow their bounds to
    fix them. Raises :class:`InfeasibleInitialState` if the measured state is
    already outside the hard box.
    """
    p = problem
    n, H = p.n_clusters, p.horizon
    mean0 = p.theta0 / p.cluster_sizes
    bad = (mean0 < p.t_hard_lower) | (mean0 > p.t_upper)
    if np.any(bad):
        raise InfeasibleInitialState(
            f"initial mean temperature {mean0[bad]} outside hard bounds for clusters {np.flatnonzero(bad)}")
    n_x, n_s = n * H, n * (H - 1)
    nv = n_x + n_s
    base, Lx = _affine_temperature(p)
    rows, rhs, labels, scales = [], [], [], []

    def add(coef, b, label, scale):
        rows.append(coef)
        rhs.append(b)
        labels.append(label)
        scales.append(scale)

    lower = np.zeros(nv)
    upper = np.ones(nv)
    for i in range(n):
        ni = p.cluster_sizes[i]
        cap = p.capacity[i]
        lower[i * H] = 1.0 - p.sigma0[i]
        for t in range(1, H + 1):
            row = np.zeros(nv)
            row[i * H:(i + 1) * H] = Lx[i, t]
            # hard bounds, stages 1..H
            add(row.copy(), p.t_hard_lower[i] - base[i, t], ("hard_lower", i, t), ni)
            add(-row, base[i, t] - p.t_upper[i], ("hard_upper", i, t), ni)
            if t < H:
                j = n_x + i * (H - 1) + t - 1
                m = p.big_m[i] / ni
                e = p.epsilon / ni
                r1 = row.copy()
                r1[j] = -m
                add(r1, p.t_lower[i] + e - m - base[i, t], ("bigm_above", i, t), ni)
                r2 = -row
                r2[j] = m
                add(r2, e - p.t_lower[i] + base[i, t], ("bigm_below", i, t), ni)
                r3 = np.zeros(nv)
                r3[i * H + t] = 1.0
                r3[j] = 1.0
                add(r3, 1.0, ("box_lower", i, t), cap)
    A = np.array(rows) if rows else np.zeros((0, nv))
    return ConstraintSet(A=A, b=np.array(rhs, dtype=float), lower=lower, upper=upper, labels=labels,
                         n_x=n_x, n_s=n_s, row_scale=np.array(scales, dtype=float))


def _presolve(A, b, lo, hi, tol=FEAS_TOL):
    """Turn single-variable rows into bounds and eliminate fixed variables.

    Returns ``(free_mask, fixed_values, A_free, b_free, lo, hi)`` or ``None``
    when infeasibility is detected.
    """
    lo = lo.copy()
    hi = hi.copy()
    active = np.ones(len(b), dtype=bool)
    nzmask = A != 0
    while True:
        if np.any(lo > hi + tol):
            return None
        fixed = hi - lo <= tol
        mid = np.where(fixed, 0.5 * (lo + hi), 0.0)
        lo = np.where(fixed, mid, lo)
        hi = np.where(fixed, mid, hi)
        live = nzmask & ~fixed
        nz = live.sum(axis=1)
        resid = b - A @ mid
        empty = active & (nz == 0)
        if np.any(resid[empty] > tol * np.maximum(1.0, np.abs(b[empty]))):
            return None
        active &= ~empty
        single = np.flatnonzero(active & (nz == 1))
        if single.size == 0:
            break
        active[single] = False
        cols = np.argmax(live[single], axis=1)
        c = A[single, cols]
        bound = resid[single] / c
        pos = c > 0
        np.maximum.at(lo, cols[pos], bound[pos])
        np.minimum.at(hi, cols[~pos], bound[~pos])
        # snap bounds that cross within tolerance
        near = (lo > hi) & (lo <= hi + tol)
        lo[near] = hi[near]
    fixed = hi - lo <= tol
    vals = np.where(fixed, lo, 0.0)
    keep = active
    b_free = b[keep] - A[np.ix_(keep, fixed)] @ vals[fixed]
    Af, b_free = _merge_parallel(A[np.ix_(keep, ~fixed)], b_free)
    return ~fixed, vals, Af, b_free, lo, hi


def _merge_parallel(A, b):
    """Keep only the tightest of rows sharing a direction (degeneracy hurts the dual solver)."""
    if len(b) < 2:
        return A, b
    norms = np.linalg.norm(A, axis=1)
    U = A / norms[:, None]
    bn = b / norms
    keys = np.round(U, 10) + 0.0  # +0.0 folds -0.0 into 0.0
    best = {}
    for r in range(len(b)):
        k = keys[r].tobytes()
        j = best.get(k)
        if j is None or bn[r] > bn[j]:
            best[k] = r
    rows = np.array(sorted(best.values()))
    return U[rows], bn[rows]


def _lp_feasible(C, bb) -> bool:
    from scipy.optimize import linprog

    res = linprog(np.zeros(C.shape[0]), A_ub=-C.T, b_ub=-bb, bounds=(None, None), method="highs")
    return res.status == 0


@dataclass
class RelaxationResult:
    status: str  # "optimal" | "infeasible"
    pi: np.ndarray | None = None
    sigma: np.ndarray | None = None
    objective: float = np.inf  # W^2, without ridge
    bound: float = np.inf  # scaled ridge objective, used for pruning
    kkt_residual: float = np.nan
    violation: float = np.nan

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def _objective_terms(p: MiqpProblem, n_v: int):
    n, H = p.n_clusters, p.horizon
    S = p.capacity.sum() / p.window_len
    W = np.zeros((H, n_v))
    for i in range(n):
        for t in range(H):
            W[t, i * H + t] = p.capacity[i] / p.window_len / S
    r = p.target_power / S
    Hm = 2.0 * W.T @ W + RIDGE * np.eye(n_v)
    q = 2.0 * W.T @ r
    return Hm, q, float(r @ r), S


def solve_relaxation(problem: MiqpProblem, sigma=None, constraints: ConstraintSet | None = None,
                     _terms=None) -> RelaxationResult:
    """Convex QP with binaries fixed where ``sigma`` is 0/1 and relaxed where NaN.

    ``sigma`` has shape ``(n_clusters, horizon - 1)``; ``None`` relaxes all.
    """
    p = problem
    cs = constraints or build_constraints(p)
    lo, hi = cs.lower.copy(), cs.upper.copy()
    if sigma is not None and cs.n_s:
        sig = np.asarray(sigma, dtype=float).reshape(-1)
        m = ~np.isnan(sig)
        lo[cs.n_x:][m] = sig[m]
        hi[cs.n_x:][m] = sig[m]
    pre = _presolve(cs.A, cs.b, lo, hi)
    if pre is None:
        return RelaxationResult(status="infeasible")
    free, vals, Af, bf, lo, hi = pre
    Hm, q, c0, S = _terms if _terms is not None else _objective_terms(p, cs.n_x + cs.n_s)
    v = vals.copy()
    kkt = 0.0
    if free.any():
        idx = np.flatnonzero(free)
        G = Hm[np.ix_(idx, idx)]
        fixed_idx = np.flatnonzero(~free)
        a = q[idx] - Hm[np.ix_(idx, fixed_idx)] @ vals[fixed_idx]
        nf = len(idx)
        C = np.vstack([Af, np.eye(nf), -np.eye(nf)]).T
        bb = np.concatenate([bf, lo[idx], -hi[idx]])
        sol = None
        for ridge in (0.0, 1e-6, 1e-4):
            try:
                sol, _, _, _, lagr, _ = quadprog.solve_qp(G + ridge * np.eye(nf), a, C, bb, 0)
            except ValueError as exc:
                if "inconsistent" in str(exc):
                    return RelaxationResult(status="infeasible")
                raise
            if np.all(np.isfinite(sol)) and np.all(np.isfinite(lagr)):
                break
            # numerical breakdown: decide feasibility independently before retrying
            if not _lp_feasible(C, bb):
                return RelaxationResult(status="infeasible")
            log.debug("quadprog breakdown, retrying with ridge %g", ridge)
            sol = None
        if sol is None:
            raise MpcError("relaxation QP failed to converge")
        v[idx] = np.clip(sol, lo[idx], hi[idx])
        grad = G @ sol - a - C @ lagr
        kkt = float(np.linalg.norm(grad) / max(1.0, np.linalg.norm(a)))
    viol = cs.violation(v)
    scale_tol = 1e-7 * max(1.0, float(np.max(np.abs(cs.b * cs.row_scale), initial=1.0)))
    if viol > scale_tol:
        return RelaxationResult(status="infeasible", violation=viol)
    n, H = p.n_clusters, p.horizon
    pi = v[:cs.n_x].reshape(n, H) * p.capacity[:, None]
    sig = v[cs.n_x:].reshape(n, H - 1)
    bound = 0.5 * v @ Hm @ v - q @ v + 0.5 * c0
    return RelaxationResult(status="optimal", pi=pi, sigma=sig, objective=p.objective(pi),
                            bound=float(bound), kkt_residual=kkt, violation=viol)


@dataclass
class MiqpSolution:
    status: str  # "optimal" | "infeasible" | "infeasible_initial"
    pi: np.ndarray | None = None  # (n, horizon) J
    sigma: np.ndarray | None = None  # (n, horizon - 1)
    objective: float = np.inf  # W^2
    node_count: int = 0
    theta: np.ndarray | None = None  # (n, horizon + 1)
    violation: float = np.nan
    sigma0: np.ndarray | None = None
    notes: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"

    @property
    def setpoint(self) -> np.ndarray:
        """First-stage energies, the only part applied (receding horizon)."""
        return self.pi[:, 0]

    def fleet_power(self, window_len: float = 900.0) -> np.ndarray:
        return self.pi.sum(axis=0) / window_len


def _finish(p: MiqpProblem, res: RelaxationResult, nodes: int) -> MiqpSolution:
    sig = np.rint(res.sigma).astype(int) if res.sigma is not None else None
    return MiqpSolution(status="optimal", pi=res.pi, sigma=sig, objective=res.objective,
                        node_count=nodes, theta=p.trajectory(res.pi), violation=res.violation,
                        sigma0=p.sigma0.copy())


def enumerate_oracle(problem: MiqpProblem) -> MiqpSolution:
    """Solve every binary assignment and keep the best. Ground truth for small sizes."""
    p = problem
    nb = p.n_binaries
    if nb > MAX_ENUM_BINARIES:
        raise ValueError(f"{nb} binaries exceeds enumeration limit {MAX_ENUM_BINARIES}")
    try:
        cs = build_constraints(p)
    except InfeasibleInitialState as exc:
        return MiqpSolution(status="infeasible_initial", notes=[str(exc)])
    terms = _objective_terms(p, cs.n_x + cs.n_s)
    best, count = None, 0
    for bits in itertools.product((0.0, 1.0), repeat=nb):
        count += 1
        res = solve_relaxation(p, np.array(bits).reshape(p.n_clusters, p.horizon - 1), cs, terms)
        if res.feasible and (best is None or res.bound < best.bound):
            best = res
    if best is None:
        return MiqpSolution(status="infeasible", node_count=count, sigma0=p.sigma0.copy())
    return _finish(p, best, count)


def solve_miqp(problem: MiqpProblem, max_nodes: int = 100_000) -> MiqpSolution:
    """Depth-first branch and bound over the relaxed binaries.

    Branches on the binary closest to 0.5, exploring ``sigma = 0`` first, and
    prunes nodes whose relaxation bound cannot beat the incumbent.
    """
    p = problem
    try:
        cs = build_constraints(p)
    except InfeasibleInitialState as exc:
        return MiqpSolution(status="infeasible_initial", notes=[str(exc)])
    terms = _objective_terms(p, cs.n_x + cs.n_s)
    shape = (p.n_clusters, max(p.horizon - 1, 0))
    stack = [np.full(shape, np.nan)]
    best, nodes = None, 0
    while stack:
        if nodes >= max_nodes:
            log.warning("branch and bound hit node limit %d", max_nodes)
            break
        sigma = stack.pop()
        nodes += 1
        res = solve_relaxation(p, sigma, cs, terms)
        if not res.feasible:
            continue
        if best is not None and res.bound >= best.bound - 1e-12 * abs(best.bound):
            continue
        frac = np.abs(res.sigma - np.rint(res.sigma))
        frac[~np.isnan(sigma)] = 0.0
        if frac.size == 0 or frac.max() <= INT_TOL:
            if np.isnan(sigma).any():
                # resolve the rounded leaf exactly so it matches enumeration
                sigma = np.rint(res.sigma)
                res = solve_relaxation(p, sigma, cs, terms)
                nodes += 1
                if not res.feasible:
                    continue
            if best is None or res.bound < best.bound:
                best = res
            continue
        k = np.unravel_index(np.argmin(np.abs(np.where(frac > INT_TOL, res.sigma, np.inf) - 0.5)),
                             shape)
        one, zero = sigma.copy(), sigma.copy()
        one[k], zero[k] = 1.0, 0.0
        stack.append(one)
        stack.append(zero)  # popped first
    if best is None:
        return MiqpSolution(status="infeasible", node_count=nodes, sigma0=p.sigma0.copy())
    return _finish(p, best, nodes)


def random_problem(rng: np.random.Generator, n_clusters: int, horizon: int, params=None,
                   window_len: float = 900.0, step_len: float = 60.0) -> MiqpProblem:
    """Physically plausible random snapshot for tests and benchmarks."""
    from .aggregate import lift_from_draws
    from .thermal import DeviceParams

    params = params or DeviceParams()
    K = int(round(window_len / step_len))
    sizes = rng.integers(1, 101, size=n_clusters)
    mean0 = rng.uniform(47.0, 70.0, size=n_clusters)
    models = []
    for i in range(n_clusters):
        row = []
        for _ in range(horizon):
            draws = np.where(rng.random(K) < 0.3, rng.uniform(0.0, 0.08, K), 0.0)
            row.append(lift_from_draws(params, draws, cluster_size=int(sizes[i]), step_len=step_len))
        models.append(row)
    cap = params.nominal_power * sizes.sum()
    baseline = rng.uniform(0.05, 0.5, horizon) * cap
    wind_da = rng.uniform(0.0, 1.0, horizon) * cap
    wind_st = wind_da + rng.normal(0.0, 0.25 * cap, horizon)
    return MiqpProblem.from_models(models, theta0=mean0 * sizes, baseline=baseline,
                                   wind_day_ahead=wind_da, wind_short_term=wind_st,
                                   p_max=params.nominal_power)
