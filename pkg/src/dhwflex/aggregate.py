"""Lifting one-minute tank dynamics to a cluster-level quarter-hour model.

Composing ``K`` steps ``T_{k+1} = a_k T_k + abar_k zeta_k + abar_k b_k g_k``
gives

    T_{k+K} = M T_k + row_C . zeta_hat + row_D . g_hat

with ``M = prod a``, ``row_C[j] = abar_j * prod_{i>j} a_i`` and
``row_D = row_C * b``. Summing over the ``n`` members of a cluster, each fed
the cluster-mean draw, gives the aggregate update used by the MPC.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .thermal import DeviceParams, coefficients


@dataclass(frozen=True)
class LiftedClusterModel:
    M: float
    row_C: np.ndarray
    row_D: np.ndarray
    cluster_size: int = 1
    step_count: int = 15
    window_len: float = 900.0
    zeta_hat: np.ndarray | None = None

    def __post_init__(self):
        if len(self.row_C) != self.step_count or len(self.row_D) != self.step_count:
            raise ValueError("row_C/row_D length must equal step_count")
        if self.cluster_size < 1:
            raise ValueError("cluster_size must be >= 1")

    @property
    def step_len(self) -> float:
        return self.window_len / self.step_count

    @property
    def gain(self) -> float:
        """Sensitivity of the aggregate end temperature to the energy setpoint, K/J."""
        return float(self.row_D.sum()) / self.window_len

    def drift(self, zeta_hat=None) -> float:
        """``row_C . zeta_hat`` for one device, in degC."""
        z = self.zeta_hat if zeta_hat is None else np.asarray(zeta_hat, dtype=float)
        if z is None:
            raise ValueError("no zeta_hat supplied or stored on the model")
        if len(z) != self.step_count:
            raise ValueError("zeta_hat length must equal step_count")
        return float(self.row_C @ z)

    def device_step(self, theta, zeta_hat, g_hat):
        """End-of-window temperature of one device with a per-minute power profile."""
        return self.M * theta + self.row_C @ np.asarray(zeta_hat, float) + self.row_D @ np.asarray(g_hat, float)


@dataclass(frozen=True)
class ClusterState:
    aggregate_temp: float  # sum over members, degC * count
    quarter_index: int = 0

    def mean_temp(self, cluster_size: int) -> float:
        return self.aggregate_temp / cluster_size


def lift(per_minute_coeffs, cluster_size: int = 1, window_len: float | None = None,
         step_len: float = 60.0) -> LiftedClusterModel:
    """Build the K-step model from a sequence of ``(a, abar, zeta, b)`` tuples."""
    coeffs = np.asarray(per_minute_coeffs, dtype=float)
    if coeffs.ndim != 2 or coeffs.shape[1] != 4 or coeffs.shape[0] == 0:
        raise ValueError("expected a non-empty sequence of (a, abar, zeta, b) tuples")
    K = coeffs.shape[0]
    if window_len is None:
        window_len = K * step_len
    elif not np.isclose(K * step_len, window_len):
        raise ValueError(f"sequence length {K} inconsistent with window {window_len}s / step {step_len}s")
    a, abar, zeta, b = coeffs.T
    # tail[j] = prod_{i > j} a_i
    tail = np.ones(K)
    for j in range(K - 2, -1, -1):
        tail[j] = tail[j + 1] * a[j + 1]
    M = float(tail[0] * a[0])
    row_C = tail * abar
    row_D = row_C * b
    return LiftedClusterModel(M=M, row_C=row_C, row_D=row_D, cluster_size=cluster_size,
                              step_count=K, window_len=float(window_len), zeta_hat=zeta.copy())


def lift_from_draws(params: DeviceParams, draw_rates, cluster_size: int = 1,
                    ambient_temp=20.0, inlet_temp=15.0, step_len: float = 60.0) -> LiftedClusterModel:
    a, abar, zeta, b = coefficients(params, draw_rates, ambient_temp, inlet_temp, step_len)
    a, abar, zeta, b = np.broadcast_arrays(a, abar, zeta, b)
    return lift(np.column_stack([a, abar, zeta, b]), cluster_size=cluster_size, step_len=step_len)


def cluster_step(model: LiftedClusterModel, state: ClusterState, zeta_hat, pi: float) -> ClusterState:
    if pi < 0:
        raise ValueError("energy setpoint must be >= 0")
    n = model.cluster_size
    theta = (model.M * state.aggregate_temp + n * model.drift(zeta_hat)
             + model.gain * pi)
    return ClusterState(aggregate_temp=float(theta), quarter_index=state.quarter_index + 1)


@dataclass(frozen=True)
class BlockModel:
    M_blk: np.ndarray
    C_blk: np.ndarray
    D_blk: np.ndarray
    cluster_sizes: np.ndarray
    window_len: float

    def step(self, theta, zeta_hat_stack, pi):
        return self.M_blk @ np.asarray(theta, float) + self.C_blk @ np.asarray(zeta_hat_stack, float) \
            + self.D_blk @ np.asarray(pi, float)


def build_block(models) -> BlockModel:
    models = list(models)
    if not models:
        raise ValueError("need at least one cluster model")
    n = len(models)
    K = models[0].step_count
    window = models[0].window_len
    if any(m.step_count != K or m.window_len != window for m in models):
        raise ValueError("all cluster models must share step_count and window_len")
    M_blk = np.diag([m.M for m in models])
    C_blk = np.zeros((n, n * K))
    for i, m in enumerate(models):
        C_blk[i, i * K:(i + 1) * K] = m.cluster_size * m.row_C
    D_blk = np.diag([m.gain for m in models])
    sizes = np.array([m.cluster_size for m in models])
    return BlockModel(M_blk=M_blk, C_blk=C_blk, D_blk=D_blk, cluster_sizes=sizes, window_len=window)


def cluster_power(pi, window_len: float = 900.0) -> float:
    """Constant fleet power equivalent to the per-cluster energy setpoints."""
    return float(np.sum(pi)) / window_len
