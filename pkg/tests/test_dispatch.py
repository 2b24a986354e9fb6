import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhwflex.dispatch import DispatchRequest, committed_energy, dispatch

W = 900.0


def req(temps, adv, target_w, p=2500.0, lo=50.0, hi=85.0):
    return DispatchRequest(setpoint=target_w * W, window_len=W, temps=np.asarray(temps, float),
                           nominal_power=p, t_lower=lo, t_upper=hi, adv_on=np.asarray(adv, float))


def pseudocode_oracle(temps, adv, p, target_w, lo, hi):
    """Line-by-line re-execution with plain Python lists."""
    n = len(temps)
    u = [0] * n
    p_d = 0.0
    for i in range(n):
        if temps[i] < lo:
            u[i] = 1
            p_d += p[i]
    rest = [i for i in range(n) if temps[i] >= lo and temps[i] <= hi]
    rest.sort(key=lambda i: (float("inf") if adv[i] != adv[i] else adv[i], i))
    for i in rest:
        if p_d < target_w:
            u[i] = 1
            p_d += p[i]
        else:
            u[i] = 0
    return u


def test_five_device_example():
    r = dispatch(req([60.0] * 5, [0.5, 0.1, 0.9, 0.2, 0.4], 6000.0))
    assert r.order.tolist() == [1, 3, 4, 0, 2]
    assert r.u.tolist() == [0, 1, 0, 1, 1]
    assert r.committed_power == 7500.0
    assert r.u.tolist() == pseudocode_oracle([60.0] * 5, [0.5, 0.1, 0.9, 0.2, 0.4], [2500.0] * 5, 6000.0,
                                             50.0, 85.0)


def test_all_below_lower_bound_all_on_regardless_of_setpoint():
    for target in (0.0, 1e3, 1e9):
        r = dispatch(req([40.0, 45.0, 49.9], [0.3, 0.1, 0.2], target))
        assert r.u.tolist() == [1, 1, 1] and r.forced.all()
        assert r.committed_power == 7500.0


def test_forced_count_against_setpoint():
    r = dispatch(req([40.0, 60.0, 60.0], [0.0, 0.1, 0.2], 2500.0))
    assert r.u.tolist() == [1, 0, 0]


def test_hot_devices_not_candidates():
    r = dispatch(req([86.0, 60.0], [0.0, 0.5], 1e9))
    assert r.u.tolist() == [0, 1]


def test_missing_model_ranks_last():
    r = dispatch(req([60.0] * 3, [np.nan, 0.3, np.nan], 5000.0))
    assert r.order.tolist() == [1, 0, 2]
    assert r.u.tolist() == [1, 1, 0]


def test_zero_setpoint_only_forced():
    r = dispatch(req([49.0, 60.0, 70.0], [0.1, 0.2, 0.3], 0.0))
    assert r.u.tolist() == [1, 0, 0]


def test_validation():
    with pytest.raises(ValueError):
        req([], [], 0.0)
    with pytest.raises(ValueError):
        DispatchRequest(-1.0, W, [60.0], 2500.0, 50.0, 85.0, [0.0])


def test_committed_energy():
    r = dispatch(req([60.0] * 3, [0.1, 0.2, 0.3], 5000.0))
    assert committed_energy(r, W) == 5000.0 * W


instances = st.integers(1, 30).flatmap(lambda n: st.tuples(
    st.lists(st.floats(40.0, 90.0), min_size=n, max_size=n),
    st.lists(st.one_of(st.floats(0.0, 1.0), st.just(float("nan"))), min_size=n, max_size=n),
    st.lists(st.sampled_from([1000.0, 2500.0, 3000.0]), min_size=n, max_size=n),
    st.floats(0.0, 1e5)))


@settings(max_examples=200, deadline=None)
@given(instances)
def test_matches_pseudocode_and_invariants(inst):
    temps, adv, p, target = inst
    r = dispatch(DispatchRequest(target * W, W, temps, p, 50.0, 85.0, adv))
    assert r.u.tolist() == pseudocode_oracle(temps, adv, p, target, 50.0, 85.0)
    temps, p = np.array(temps), np.array(p)
    # backup dominance and cap
    assert np.all(r.u[temps < 50.0] == 1)
    assert np.all(r.u[temps > 85.0] == 0)
    assert r.committed_power == pytest.approx(float((r.u * p).sum()))
    # prefix property: switched-on candidates form a prefix of the ranking
    on = r.u[r.order].astype(bool)
    assert not np.any(np.diff(on.astype(int)) > 0)
    # overshoot bounded by one device unless the forced set alone exceeds the target
    p_forced = p[temps < 50.0].sum()
    if on.any():
        assert r.committed_power - target < p[r.order][on][-1]
    else:
        assert p_forced >= target or len(r.order) == 0
    # shortfall only when every candidate is already on
    if r.committed_power < target:
        assert on.all()


def exhaustive_min(adv, p, target, forced_power):
    """Cheapest on-set meeting the committed-power constraint; all-on if none does."""
    n = len(adv)
    best, best_cost = None, np.inf
    for mask in itertools.product((0, 1), repeat=n):
        m = np.array(mask)
        if forced_power + (m * p).sum() >= target:
            c = float((m * adv).sum())
            if c < best_cost:
                best, best_cost = m, c
    return np.ones(n, int) if best is None else best


def test_greedy_equals_exhaustive_minimizer_equal_power():
    r = np.random.default_rng(2024)
    for _ in range(100):
        n = int(r.integers(1, 13))
        adv = r.uniform(0.01, 1.0, n)
        target = float(r.uniform(0, n * 2500.0 * 1.2))
        res = dispatch(req(np.full(n, 60.0), adv, target))
        np.testing.assert_array_equal(res.u, exhaustive_min(adv, np.full(n, 2500.0), target, 0.0))
