"""EV charging station model: EV-count chain, charging/VR times, per-EV
regulation capacity coefficients and a trace-level ground-truth simulator.

Powers are in kW, energies in kWh, times in slots of ``dt`` hours.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import comb

_EPS = 1e-9


@dataclass(frozen=True)
class Dist:
    """Small tagged continuous distribution: ``uniform(lo, hi)``, ``beta(a, b)``,
    ``lognormal(mu_log, sigma_log)`` or ``point(value)``."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        n = {"uniform": 2, "beta": 2, "lognormal": 2, "point": 1}.get(self.kind)
        if n is None:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if len(self.params) != n:
            raise ValueError(f"{self.kind} takes {n} parameters")
        if self.kind == "uniform" and not self.params[0] < self.params[1]:
            raise ValueError("uniform needs lo < hi")

    def sample(self, rng, size):
        a = self.params
        if self.kind == "uniform":
            return rng.uniform(a[0], a[1], size)
        if self.kind == "beta":
            return rng.beta(a[0], a[1], size)
        if self.kind == "lognormal":
            return rng.lognormal(a[0], a[1], size)
        return np.full(size, float(a[0]))

    def cdf(self, x):
        a = self.params
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return stats.uniform.cdf(x, a[0], a[1] - a[0])
        if self.kind == "beta":
            return stats.beta.cdf(x, a[0], a[1])
        if self.kind == "lognormal":
            return stats.lognorm.cdf(x, a[1], scale=math.exp(a[0]))
        return (x >= a[0]).astype(float)

    def mean(self) -> float:
        a = self.params
        return {
            "uniform": lambda: 0.5 * (a[0] + a[1]),
            "beta": lambda: a[0] / (a[0] + a[1]),
            "lognormal": lambda: math.exp(a[0] + 0.5 * a[1] ** 2),
            "point": lambda: a[0],
        }[self.kind]()

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}


def _check_pmf(name, levels, probs):
    levels = np.asarray(levels, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if levels.shape != probs.shape or levels.ndim != 1 or len(levels) == 0:
        raise ValueError(f"{name}: levels and probs must be equal-length 1-D")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name}: probabilities must be non-negative and sum to 1")
    if np.any(levels <= 0):
        raise ValueError(f"{name}: levels must be positive")
    return levels, probs


@dataclass(frozen=True)
class StationConfig:
    stalls: int = 50
    arrival_rate: float = 8.0  # EVs per hour
    service_rate: float = 0.33  # completions per hour per active charger
    power_levels: tuple = tuple(float(k) for k in range(1, 24))
    power_probs: tuple = tuple([1 / 23] * 23)
    battery_levels: tuple = (24.0, 40.0, 60.0, 75.0)
    battery_probs: tuple = (0.25, 0.25, 0.25, 0.25)
    soc: Dist = field(default_factory=lambda: Dist("uniform", (0.2, 0.8)))
    parking: Dist = field(default_factory=lambda: Dist("lognormal", (0.6848, 0.9353)))
    target_soc: float = 0.9
    mode: str = "strict"
    power_cap: float | None = None  # kW, carried through config only

    def __post_init__(self):
        _check_pmf("power", self.power_levels, self.power_probs)
        _check_pmf("battery", self.battery_levels, self.battery_probs)
        if not 0 < self.target_soc <= 1:
            raise ValueError("target_soc must lie in (0, 1]")
        if self.mode not in ("strict", "flexible"):
            raise ValueError("mode must be 'strict' or 'flexible'")
        if self.stalls < 1:
            raise ValueError("stalls must be positive")
        if self.arrival_rate < 0 or self.service_rate < 0:
            raise ValueError("rates must be non-negative")

    @property
    def mean_power(self) -> float:
        return float(np.dot(self.power_levels, self.power_probs))


# --- per-EV timing -----------------------------------------------------------

def charge_time(s_i, s_t, e_b, p_c, dt):
    """Slots needed to charge from ``s_i`` to ``s_t`` (ceiling), 0 if already there."""
    s_i = np.asarray(s_i, dtype=float)
    hours = (s_t - s_i) * e_b / p_c
    slots = np.ceil(hours / dt - _EPS)
    out = np.where(s_i < s_t, np.maximum(slots, 0), 0).astype(int)
    return out if out.ndim else int(out)


def vr_slots(t_p, t_c):
    t_p = np.asarray(t_p)
    t_c = np.asarray(t_c)
    out = np.where(t_c < t_p, (t_p - t_c) // 2, 0)
    return out if out.ndim else int(out)


def parking_slots(hours, dt):
    """Parking duration in whole slots; every admitted EV stays at least one slot."""
    return np.maximum(1, np.rint(np.asarray(hours) / dt)).astype(int)


def parking_pmf(cfg: StationConfig, dt: float, max_hours: float = 72.0):
    """pmf of :func:`parking_slots` on 1..T; the tail beyond ``max_hours`` is
    folded into the last slot."""
    T = int(round(max_hours / dt))
    edges = (np.arange(1, T + 1) + 0.5) * dt
    cdf = cfg.parking.cdf(edges)
    pmf = np.diff(np.concatenate([[0.0], cdf]))
    pmf[-1] += 1.0 - cdf[-1]
    return np.arange(1, T + 1), pmf


# --- EV-count birth-death chain ----------------------------------------------

def count_transition_pmf(n: int, q_a: float, q_d: float) -> np.ndarray:
    """One sub-slot transition of the EV count from ``n``; returns the pmf over
    0..n+1. At most one arrival and independent departures per charger, with
    ``q_a = lambda*tau`` and ``q_d = mu*tau``."""
    for name, q in (("arrival", q_a), ("departure", q_d)):
        if not 0 <= q <= 1:
            raise ValueError(f"{name} probability {q} outside [0, 1]")
    qa_, qd_ = 1 - q_a, 1 - q_d
    pmf = np.zeros(n + 2)
    pmf[n + 1] = q_a * qd_**n
    pmf[0] += qa_ * q_d**n
    for i in range(-n + 1, 1):
        k = -i
        pmf[n + i] = comb(n, k) * qa_ * q_d**k * qd_ ** (n - k) + comb(n, k + 1) * q_a * q_d ** (k + 1) * qd_ ** (n - k - 1)
    if n == 0:
        pmf[0] = qa_
    total = pmf.sum()
    return pmf / total


def transition_matrix(cfg: StationConfig, tau_hours: float) -> np.ndarray:
    """Sub-slot transition matrix on 0..stalls; arrivals to a full station are dropped."""
    L = cfg.stalls
    P = np.zeros((L + 1, L + 1))
    q_a, q_d = cfg.arrival_rate * tau_hours, cfg.service_rate * tau_hours
    for n in range(L + 1):
        row = count_transition_pmf(n, q_a, q_d)
        if n < L:
            P[n, : n + 2] = row
        else:
            P[n, :] = row[: L + 1]
            P[n, L] += row[L + 1]
    return P


def slot_matrix(cfg: StationConfig, dt: float, substeps: int = 10) -> np.ndarray:
    return np.linalg.matrix_power(transition_matrix(cfg, dt / substeps), substeps)


def pseudo_count(n_prev: int, cfg: StationConfig, slots_elapsed: int, dt: float,
                 substeps: int = 10, P_slot=None) -> int:
    """Most probable count ``slots_elapsed`` slots after a known count (ties go low)."""
    if slots_elapsed < 1:
        raise ValueError("slots_elapsed must be >= 1")
    P = slot_matrix(cfg, dt, substeps) if P_slot is None else P_slot
    dist = np.zeros(cfg.stalls + 1)
    dist[min(int(n_prev), cfg.stalls)] = 1.0
    for _ in range(slots_elapsed):
        dist = dist @ P
    return int(np.argmax(dist))


# --- charging-time distribution and capacity coefficients ---------------------

def _soc_grid(d: Dist, n: int = 4000):
    if d.kind == "point":
        return np.array([d.params[0]]), np.array([1.0])
    lo, hi = (d.params if d.kind == "uniform" else (0.0, 1.0))
    edges = np.linspace(lo, hi, n + 1)
    w = np.diff(d.cdf(edges))
    mid = 0.5 * (edges[1:] + edges[:-1])
    return mid, w / w.sum()


def _ev_table(cfg: StationConfig, dt: float, n_soc: int = 4000):
    """Flattened (power, down_flag, t_C, weight) over power x battery x SOC."""
    s, ws = _soc_grid(cfg.soc, n_soc)
    p = np.asarray(cfg.power_levels)[:, None, None]
    b = np.asarray(cfg.battery_levels)[None, :, None]
    w = (np.asarray(cfg.power_probs)[:, None, None] * np.asarray(cfg.battery_probs)[None, :, None]
         * ws[None, None, :])
    tc = charge_time(s[None, None, :], cfg.target_soc, b, p, dt)
    down = (s[None, None, :] + p * dt / b) <= cfg.target_soc + _EPS
    shape = w.shape
    P = np.broadcast_to(p, shape).ravel()
    return P, np.broadcast_to(down, shape).ravel(), np.broadcast_to(tc, shape).ravel(), w.ravel()


def charging_time_pdf(cfg: StationConfig, dt: float, parking: int | None = None):
    """pmf of the effective charging time (slots) on 0..T.

    Charging stops at departure, so mass of the raw pushforward beyond the
    parking time collapses onto an atom at the parking time. ``parking`` fixes
    the parking slots; by default it is integrated over the parking law.
    """
    _, _, tc, w = _ev_table(cfg, dt)
    if parking is not None:
        eff = np.minimum(tc, parking)
        return np.bincount(eff, weights=w)
    tp, pp = parking_pmf(cfg, dt)
    T = max(int(tc.max()), int(tp.max()))
    raw = np.bincount(tc, weights=w, minlength=T + 1)
    # P(min(tc, tp) = c) = P(tc = c) P(tp > c) + P(tp = c) P(tc >= c)
    surv_p = 1.0 - np.cumsum(np.bincount(tp, weights=pp, minlength=T + 1))
    tail_c = raw[::-1].cumsum()[::-1]  # P(tc >= c)
    p_tp = np.bincount(tp, weights=pp, minlength=T + 1)
    return raw * surv_p + p_tp * tail_c


@dataclass(frozen=True)
class CapacityCoefficients:
    """Expected per-EV down/up capacity (kW) of idle (I) and charging (C) EVs."""

    p_id: float
    p_cd: float
    p_iu: float
    p_cu: float

    def as_array(self):
        return np.array([self.p_id, self.p_cd, self.p_iu, self.p_cu])


def capacity_coefficients(cfg: StationConfig, dt: float) -> CapacityCoefficients:
    """Conditional expected capacities of idle and charging EVs.

    The elapsed time since arrival is marginalized over the stationary
    distribution of EVs present at a random slot: an EV with parking ``tp`` and
    charging time ``tc`` is seen charging for ``min(tc, tp)`` slots and idle for
    ``max(tp - tc, 0)`` slots.
    """
    p, down, tc, w = _ev_table(cfg, dt)
    tp, pp = parking_pmf(cfg, dt)
    C = int(tc.max()) + 1
    c = np.arange(C)[:, None]
    gap = tp[None, :] - c
    idle = (np.maximum(gap, 0) * pp).sum(axis=1)  # E[(tp - c)^+]
    idle_vr = (np.where(gap >= 2, gap, 0) * pp).sum(axis=1)  # idle slots of EVs with t_V > 0
    charging = (np.minimum(c, tp[None, :]) * pp).sum(axis=1)
    charging_vr = (c * (gap > 0) * pp).sum(axis=1)

    den_i = np.sum(w * idle[tc])
    den_c = np.sum(w * charging[tc])
    p_id = np.sum(w * p * down * idle[tc]) / den_i if den_i > 0 else 0.0
    p_iu = np.sum(w * p * idle_vr[tc]) / den_i if den_i > 0 else 0.0
    p_cu = 0.0
    if cfg.mode == "flexible" and den_c > 0:
        p_cu = np.sum(w * 2 * p * charging_vr[tc]) / den_c
    return CapacityCoefficients(float(p_id), 0.0, float(p_iu), float(p_cu))


def charging_mean_power(cfg: StationConfig, dt: float) -> float:
    """Time-weighted mean draw (kW) of the EVs that are charging at a random
    slot. Slow chargers stay in the charging state longer, so this is below
    the arrival-weighted mean power."""
    p, _, tc, w = _ev_table(cfg, dt)
    tp, pp = parking_pmf(cfg, dt)
    c = np.arange(int(tc.max()) + 1)[:, None]
    charging = (np.minimum(c, tp[None, :]) * pp).sum(axis=1)
    den = np.sum(w * charging[tc])
    return float(np.sum(w * p * charging[tc]) / den) if den > 0 else cfg.mean_power


def split_counts(station_load_kw: float, c_total: float, mean_power: float):
    """Expected (charging, idle) EV counts given station load and total count."""
    c_c = min(max(station_load_kw / mean_power, 0.0), c_total)
    return c_c, c_total - c_c


def station_capacity(coeff: CapacityCoefficients, c_charging, c_idle):
    """Station (down, up) regulation capacity, linear in the EV counts."""
    p_down = coeff.p_id * c_idle + coeff.p_cd * c_charging
    p_up = coeff.p_iu * c_idle + coeff.p_cu * c_charging
    return p_down, p_up


# --- trace-level ground truth -------------------------------------------------

@dataclass(frozen=True)
class EVRecord:
    t0: int
    t_p: int
    s_i: float
    e_b: float
    p_c: float
    t_c: int
    t_v: int

    def state_at(self, t: int) -> str | None:
        a = t - self.t0
        if a < 0 or a >= self.t_p:
            return None
        return "charging" if a < self.t_c else "idle"

    def capacity_at(self, t: int, mode: str, target_soc: float, dt: float):
        """(down, up) kW this EV offers in slot ``t``."""
        st = self.state_at(t)
        if st is None:
            return 0.0, 0.0
        if st == "charging":
            up = 2 * self.p_c if (mode == "flexible" and self.t_p > self.t_c) else 0.0
            return 0.0, up
        down = self.p_c if self.s_i + self.p_c * dt / self.e_b <= target_soc + _EPS else 0.0
        up = self.p_c if self.t_v > 0 else 0.0
        return down, up


@dataclass
class StationTrace:
    counts: np.ndarray  # EVs present per slot
    charging: np.ndarray  # EVs charging per slot
    load_kw: np.ndarray
    p_down_kw: np.ndarray
    p_up_kw: np.ndarray
    idle_down_kw: np.ndarray
    idle_up_kw: np.ndarray
    charging_up_kw: np.ndarray
    evs: dict  # column arrays: t0, t_p, s_i, e_b, p_c, t_c, t_v

    def records(self):
        ev = self.evs
        return [EVRecord(int(ev["t0"][i]), int(ev["t_p"][i]), float(ev["s_i"][i]), float(ev["e_b"][i]),
                         float(ev["p_c"][i]), int(ev["t_c"][i]), int(ev["t_v"][i]))
                for i in range(len(ev["t0"]))]


def sample_evs(cfg: StationConfig, n: int, dt: float, rng: np.random.Generator) -> dict:
    p_c = rng.choice(np.asarray(cfg.power_levels), size=n, p=np.asarray(cfg.power_probs))
    e_b = rng.choice(np.asarray(cfg.battery_levels), size=n, p=np.asarray(cfg.battery_probs))
    s_i = cfg.soc.sample(rng, n)
    t_p = parking_slots(cfg.parking.sample(rng, n), dt)
    t_c = charge_time(s_i, cfg.target_soc, e_b, p_c, dt)
    t_c = np.atleast_1d(t_c)
    return dict(p_c=p_c, e_b=e_b, s_i=s_i, t_p=t_p, t_c=t_c, t_v=np.atleast_1d(vr_slots(t_p, t_c)))


def _admit(t0, t_p, stalls):
    """Indices of EVs admitted when at most ``stalls`` can be present."""
    busy = []  # departure slots
    keep = []
    for i in range(len(t0)):
        while busy and busy[0] <= t0[i]:
            heapq.heappop(busy)
        if len(busy) < stalls:
            heapq.heappush(busy, t0[i] + t_p[i])
            keep.append(i)
    return np.asarray(keep, dtype=int)


def simulate_station(cfg: StationConfig, horizon: int, dt: float, seed=None,
                     warmup: int = 0, enforce_stalls: bool = True) -> StationTrace:
    """Event-level simulation of one station over ``warmup + horizon`` slots;
    the returned series cover the last ``horizon`` slots."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    total = warmup + horizon
    arrivals = rng.poisson(cfg.arrival_rate * dt, size=total)
    t0 = np.repeat(np.arange(total), arrivals)
    ev = sample_evs(cfg, len(t0), dt, rng)
    ev["t0"] = t0
    if enforce_stalls and len(t0):
        keep = _admit(t0, ev["t_p"], cfg.stalls)
        ev = {k: v[keep] for k, v in ev.items()}
    t0, t_p, t_c, p_c = ev["t0"], ev["t_p"], ev["t_c"], ev["p_c"]
    end = t0 + t_p
    end_c = t0 + np.minimum(t_c, t_p)
    flexible = cfg.mode == "flexible"
    down_ok = ev["s_i"] + p_c * dt / ev["e_b"] <= cfg.target_soc + _EPS

    def interval_sum(start, stop, weight):
        acc = np.zeros(total + 1)
        np.add.at(acc, np.minimum(start, total), weight)
        np.add.at(acc, np.minimum(stop, total), -weight)
        return np.cumsum(acc)[:total]

    ones = np.ones(len(t0))
    counts = interval_sum(t0, end, ones)
    charging = interval_sum(t0, end_c, ones)
    load = interval_sum(t0, end_c, p_c)
    idle_down = interval_sum(end_c, end, p_c * down_ok)
    idle_up = interval_sum(end_c, end, p_c * (ev["t_v"] > 0))
    ch_up = interval_sum(t0, end_c, 2 * p_c * (t_p > t_c)) if flexible else np.zeros(total)
    sl = slice(warmup, total)
    ev["t0"] = ev["t0"] - warmup
    return StationTrace(
        counts=np.rint(counts[sl]).astype(int),
        charging=np.rint(charging[sl]).astype(int),
        load_kw=load[sl],
        p_down_kw=idle_down[sl],
        p_up_kw=idle_up[sl] + ch_up[sl],
        idle_down_kw=idle_down[sl],
        idle_up_kw=idle_up[sl],
        charging_up_kw=ch_up[sl],
        evs=ev,
    )


def trace_coefficients(trace: StationTrace) -> CapacityCoefficients:
    """Time-averaged realized per-EV capacities of a long trace."""
    idle = (trace.counts - trace.charging).sum()
    ch = trace.charging.sum()
    return CapacityCoefficients(
        p_id=float(trace.idle_down_kw.sum() / idle) if idle else 0.0,
        p_cd=0.0,
        p_iu=float(trace.idle_up_kw.sum() / idle) if idle else 0.0,
        p_cu=float(trace.charging_up_kw.sum() / ch) if ch else 0.0,
    )
