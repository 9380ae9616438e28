import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from evfdia.feeder import Feeder, ac_power_flow, build_linear_model
from evfdia.regulation import (
    RegulationConfig, VrRequest, ac_capacity, apply, capacity_metric, capacity_row, dispatch,
)
from conftest import nominal_injections


def state(feeder, p_up):
    n, E = feeder.n_bus - 1, len(feeder.evcs_buses)
    x = np.zeros(2 * n + 2 * E)
    x[2 * n + E:] = p_up
    return x


def small_feeder(n_bus=3, evcs=(3,), monitored=(3,)):
    k = n_bus - 1
    load = np.r_[0.0, np.full(k, 0.03)]
    return Feeder(n_bus=n_bus, from_bus=np.arange(1, n_bus), to_bus=np.arange(2, n_bus + 1),
                  r=np.full(k, 0.02), x=np.full(k, 0.015), base_kv=12.66, base_mva=10.0,
                  load_p=load, load_q=0.5 * load, evcs_buses=evcs, monitored_buses=monitored)


# --- capacity metric ------------------------------------------------------------------

def test_metric_zero_capacity(feeder33, lin33):
    assert capacity_metric(state(feeder33, [0.0, 0.0]), feeder33, lin33) == 0.0


def test_metric_single_station_single_bus():
    f = small_feeder()
    lin = build_linear_model(f)
    assert capacity_metric(state(f, [0.04]), f, lin) == pytest.approx(lin.Kvp[1, 1] * 0.04)


@given(a=st.floats(-5, 5), up=st.lists(st.floats(0, 0.1), min_size=2, max_size=2))
def test_metric_linear(feeder33, lin33, a, up):
    x = state(feeder33, up)
    assert capacity_metric(a * x, feeder33, lin33) == pytest.approx(a * capacity_metric(x, feeder33, lin33),
                                                                     rel=1e-12, abs=1e-15)
    assert capacity_metric(x, feeder33, lin33) == pytest.approx(capacity_row(feeder33, lin33) @ x)


def test_metric_against_ac(feeder33, lin33):
    p, q = nominal_injections(feeder33, 0.7)
    up = np.array([0.04, 0.04])
    mon = np.asarray(feeder33.monitored_buses) - 1
    before = ac_power_flow(feeder33, p, q).v[mon]
    p2 = p.copy()
    p2[np.asarray(feeder33.evcs_buses) - 2] += up
    after = ac_power_flow(feeder33, p2, q).v[mon]
    E = np.asarray(feeder33.evcs_buses) - 2
    lin_rise = lin33.Kvp[mon - 1][:, E] @ up
    assert np.all(np.abs(lin_rise - (after - before)) <= 0.01)
    assert ac_capacity(feeder33, p, q, up) == pytest.approx(np.sum(after - before))


# --- dispatch ---------------------------------------------------------------------------

def test_flat_profile_needs_nothing(feeder33, lin33):
    req = dispatch(np.ones(feeder33.n_bus), [0.05, 0.05], [0.05, 0.05], feeder33, lin33)
    np.testing.assert_allclose(req.adjust, 0.0, atol=1e-12)
    np.testing.assert_allclose(req.backup, 0.0)
    assert req.shortfall == 0


@pytest.mark.parametrize("cap", [0.5, 0.001])
def test_single_station_scalar(cap):
    f = small_feeder(n_bus=2, evcs=(2,), monitored=(2,))
    lin = build_linear_model(f)
    s = lin.Kvp[0, 0]
    req = dispatch(np.array([1.0, 0.97]), [0.0], [cap], f, lin, RegulationConfig(backup_capacity_pu=0.0))
    expected = min(0.03 / s, cap)
    assert req.adjust[0] == pytest.approx(expected, rel=1e-9)
    assert req.predicted_v[0] == pytest.approx(0.97 + s * expected, rel=1e-12)


def _pg_oracle(A, b, lo, hi, iters=200_000):
    """Projected gradient on 0.5 ||A u - b||^2 with box bounds."""
    L = np.linalg.norm(A, 2) ** 2
    u = np.clip(np.zeros(A.shape[1]), lo, hi)
    for _ in range(iters):
        u_new = np.clip(u - A.T @ (A @ u - b) / L, lo, hi)
        if np.max(np.abs(u_new - u)) < 1e-16:
            break
        u = u_new
    return u


def test_evening_peak_matches_qp_oracle(feeder33, lin33):
    p, q = nominal_injections(feeder33, 1.0)
    v = ac_power_flow(feeder33, p, q).v
    down, up = np.array([0.01, 0.02]), np.array([0.03, 0.015])
    req = dispatch(v, down, up, feeder33, lin33)
    A = lin33.Kvp[:, np.asarray(feeder33.evcs_buses) - 2]
    b = 1.0 - v[1:]
    u = _pg_oracle(A, b, -down, up)

    def obj(x):
        return np.mean((A @ x - b) ** 2)

    assert obj(req.adjust) == pytest.approx(obj(u), abs=1e-6)
    np.testing.assert_allclose(req.adjust, u, atol=1e-6)


def test_backup_only_after_ev_capacity(feeder33, lin33):
    p, q = nominal_injections(feeder33, 1.0)
    v = ac_power_flow(feeder33, p, q).v
    cfg = RegulationConfig()
    rich = dispatch(v, [0.2, 0.2], [0.2, 0.2], feeder33, lin33, cfg)
    assert rich.backup.sum() == 0
    assert rich.predicted_v.min() >= cfg.v_min
    poor = dispatch(v, [0.0, 0.0], [0.0, 0.0], feeder33, lin33, cfg)
    np.testing.assert_array_equal(poor.adjust, 0.0)
    assert poor.backup.sum() > 0
    assert poor.predicted_v.min() >= cfg.v_min + cfg.backup_margin - 1e-9


def test_backup_budget_shortfall(feeder33, lin33):
    p, q = nominal_injections(feeder33, 1.6)
    v = ac_power_flow(feeder33, p, q).v
    cfg = RegulationConfig(backup_capacity_pu=0.01)
    req = dispatch(v, [0.0, 0.0], [0.0, 0.0], feeder33, lin33, cfg)
    assert req.backup.sum() <= 0.01 * (1 + 1e-9)
    assert req.shortfall > 0


@given(scale=st.floats(0.3, 1.3), caps=st.lists(st.floats(0, 0.05), min_size=4, max_size=4))
def test_dispatch_respects_believed_capacity(feeder33, lin33, scale, caps):
    p, q = nominal_injections(feeder33, scale)
    v = ac_power_flow(feeder33, p, q).v
    down, up = np.array(caps[:2]), np.array(caps[2:])
    req = dispatch(v, down, up, feeder33, lin33)
    assert np.all(req.adjust >= -down - 1e-12)
    assert np.all(req.adjust <= up + 1e-12)
    assert np.all(req.backup >= -1e-12)


# --- delivery ---------------------------------------------------------------------------

def _request(feeder33, lin33, up):
    p, q = nominal_injections(feeder33, 1.0)
    v = ac_power_flow(feeder33, p, q).v
    return p, q, dispatch(v, [0.0, 0.0], up, feeder33, lin33, RegulationConfig(backup_capacity_pu=0.0))


def test_request_within_capacity_is_delivered(feeder33, lin33):
    p, q, req = _request(feeder33, lin33, [0.02, 0.02])
    out = apply(req, [0.0, 0.0], [0.05, 0.05], feeder33, p, q)
    np.testing.assert_allclose(out.delivered, req.adjust)
    assert out.undervoltage_buses == frozenset(int(i) + 1 for i in np.flatnonzero(out.voltages.v < 0.95))


def test_overstated_capacity_is_not_delivered(feeder33, lin33):
    p, q, req = _request(feeder33, lin33, [0.05, 0.05])
    assert np.all(req.adjust > 0)
    attacked = apply(req, [0.0, 0.0], [0.0, 0.0], feeder33, p, q)
    honest = apply(req, [0.0, 0.0], [0.05, 0.05], feeder33, p, q)
    np.testing.assert_array_equal(attacked.delivered, 0.0)
    assert attacked.min_voltage < honest.min_voltage
    assert attacked.undervoltage_buses and not honest.undervoltage_buses


@given(up=st.floats(0, 0.05), extra=st.floats(0, 0.05))
def test_more_true_capacity_never_lowers_voltage(feeder33, lin33, up, extra):
    p, q, req = _request(feeder33, lin33, [0.05, 0.05])
    a = apply(req, [0.0, 0.0], [up, up], feeder33, p, q)
    b = apply(req, [0.0, 0.0], [up + extra, up + extra], feeder33, p, q)
    assert np.all(np.abs(a.delivered) <= up + 1e-15)
    assert b.min_voltage >= a.min_voltage - 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        RegulationConfig(v_min=1.0)
    with pytest.raises(ValueError):
        RegulationConfig(backup_capacity_pu=-1)
    with pytest.raises(ValueError):
        RegulationConfig(backup_margin=0.06)
    assert RegulationConfig(backup_buses=[3]).backup_buses == (3,)
