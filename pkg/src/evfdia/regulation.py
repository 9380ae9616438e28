"""Voltage-regulation capacity metric, EV-first dispatch and delivery.

Sign convention: a positive station adjustment ``u_e`` is up-regulation
(net injection increases, i.e. charging is reduced or EVs discharge); a
negative one is down-regulation (more consumption). Up-regulation raises
voltages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, lsq_linear

from .feeder import Feeder, LinearPFModel, VoltageProfile, ac_power_flow


@dataclass(frozen=True)
class RegulationConfig:
    v_ref: float = 1.0
    v_min: float = 0.95
    v_max: float = 1.05
    backup_capacity_pu: float = 0.5
    backup_buses: tuple = ()  # defaults to the station buses
    backup_margin: float = 0.02  # backup keeps predicted voltages >= v_min + margin

    def __post_init__(self):
        if not 0 < self.v_min < self.v_ref < self.v_max:
            raise ValueError("need 0 < v_min < v_ref < v_max")
        if self.backup_capacity_pu < 0:
            raise ValueError("backup_capacity_pu must be non-negative")
        if not 0 <= self.backup_margin < self.v_ref - self.v_min:
            raise ValueError("backup_margin must lie in [0, v_ref - v_min)")
        object.__setattr__(self, "backup_buses", tuple(int(b) for b in self.backup_buses))

    def resolved_backup_buses(self, feeder: Feeder) -> tuple:
        return self.backup_buses or tuple(feeder.evcs_buses)


def capacity_row(feeder: Feeder, lin: LinearPFModel) -> np.ndarray:
    """Row vector V with ``V @ x`` = total voltage rise over the monitored
    buses when every station delivers its full up-regulation capacity."""
    n = feeder.n_bus - 1
    E = len(feeder.evcs_buses)
    V = np.zeros(2 * n + 2 * E)
    mon = [b - 2 for b in feeder.monitored_buses]
    for j, b in enumerate(feeder.evcs_buses):
        V[2 * n + E + j] = lin.Kvp[mon, b - 2].sum()
    return V


def capacity_metric(x_hat, feeder: Feeder, lin: LinearPFModel) -> float:
    x = x_hat.stack() if hasattr(x_hat, "stack") else np.asarray(x_hat, dtype=float)
    return float(capacity_row(feeder, lin) @ x)


def ac_capacity(feeder: Feeder, p, q, p_up) -> float:
    """Same quantity through the AC oracle: monitored voltage rise at the
    operating point (p, q) when full up-regulation ``p_up`` is injected."""
    mon = np.asarray(feeder.monitored_buses) - 1
    before = ac_power_flow(feeder, p, q).v[mon]
    p2 = np.array(p, dtype=float)
    p2[np.asarray(feeder.evcs_buses) - 2] += p_up
    after = ac_power_flow(feeder, p2, q).v[mon]
    return float(np.sum(after - before))


@dataclass
class VrRequest:
    adjust: np.ndarray  # per-station setpoint change u_e (pu)
    backup: np.ndarray  # non-EV injection per backup bus (pu)
    predicted_v: np.ndarray  # DSO's linear prediction after the request (non-slack buses)
    shortfall: float = 0.0  # pu below v_min still predicted (best effort)


@dataclass
class VrOutcome:
    voltages: VoltageProfile
    undervoltage_buses: frozenset
    min_voltage: float
    delivered: np.ndarray = field(default=None)


def _lsq(A, b, lo, hi):
    x = lo.copy()
    free = hi - lo > 1e-15
    if A.shape[1] and free.any():
        res = lsq_linear(A[:, free], b - A[:, ~free] @ lo[~free], bounds=(lo[free], hi[free]),
                         method="bvls", tol=1e-12)
        x[free] = res.x
    return x


def _backup(v_pred, A, cap, floor):
    """Cheapest non-negative backup lifting every predicted voltage to ``floor``."""
    k = A.shape[1]
    deficit = floor - v_pred
    if k == 0 or cap <= 0 or deficit.max() <= 0:
        return np.zeros(k)
    res = linprog(np.ones(k), A_ub=-A, b_ub=-deficit, bounds=[(0, None)] * k, method="highs")
    if res.status == 0 and res.x.sum() <= cap * (1 + 1e-12):
        return res.x
    # not enough backup: maximize the lowest predicted voltage within the budget
    n = len(v_pred)
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_ub = np.vstack([np.hstack([-A, np.ones((n, 1))]), np.append(np.ones(k), 0.0)])
    b_ub = np.append(v_pred, cap)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * k + [(None, None)], method="highs")
    return res.x[:k]


def dispatch(v_now, believed_down, believed_up, feeder: Feeder, lin: LinearPFModel,
             cfg: RegulationConfig = RegulationConfig()) -> VrRequest:
    """EV-first regulation.

    Stations minimize the squared deviation from ``v_ref`` within their
    believed capacities. The backup resource then only covers what is left
    below ``v_min + backup_margin``.
    """
    v_now = v_now.v if isinstance(v_now, VoltageProfile) else np.asarray(v_now, dtype=float)
    if len(v_now) == feeder.n_bus:
        v_now = v_now[1:]
    pd = np.maximum(np.asarray(believed_down, dtype=float), 0.0)
    pu = np.maximum(np.asarray(believed_up, dtype=float), 0.0)
    A = lin.Kvp[:, np.asarray(feeder.evcs_buses) - 2]
    u = _lsq(A, cfg.v_ref - v_now, -pd, pu)
    v_pred = v_now + A @ u
    Ab = lin.Kvp[:, np.asarray(cfg.resolved_backup_buses(feeder)) - 2]
    b = _backup(v_pred, Ab, cfg.backup_capacity_pu, cfg.v_min + cfg.backup_margin)
    v_pred = v_pred + Ab @ b
    return VrRequest(adjust=u, backup=b, predicted_v=v_pred,
                     shortfall=float(max(0.0, cfg.v_min - v_pred.min())))


def apply(request: VrRequest, true_down, true_up, feeder: Feeder, p, q,
          cfg: RegulationConfig = RegulationConfig()) -> VrOutcome:
    """Deliver the request against the stations' real capability and run the
    AC power flow. ``p``, ``q`` are the pre-regulation injections (pu)."""
    u = np.clip(request.adjust, -np.asarray(true_down, float), np.asarray(true_up, float))
    p2 = np.array(p, dtype=float)
    p2[np.asarray(feeder.evcs_buses) - 2] += u
    np.add.at(p2, np.asarray(cfg.resolved_backup_buses(feeder)) - 2, request.backup)
    prof = ac_power_flow(feeder, p2, q)
    under = frozenset(int(i) + 1 for i in np.flatnonzero(prof.v < cfg.v_min))
    return VrOutcome(voltages=prof, undervoltage_buses=under, min_voltage=prof.min_voltage, delivered=u)
