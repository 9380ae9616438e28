"""Day-long closed-loop scenario: loads, stations, lossy channel, state
estimation with bad-data detection, optional attack, EV-first regulation and
AC ground truth."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import channel as ch
from .attack import (AttackVector, ImpactModel, OutcomeGeometry, construct_ic, construct_sc,
                     realized_measurement)
from .config import ScenarioConfig
from .estimation import SensorSpace, bdd_check, build_measurement_model, wls_estimate
from .evcs import (capacity_coefficients, charging_mean_power, pseudo_count, simulate_station,
                   slot_matrix, split_counts, station_capacity)
from .feeder import PowerFlowError, ac_power_flow, build_linear_model, linear_power_flow, load_feeder
from .regulation import apply, capacity_row, dispatch


@dataclass
class SlotRecord:
    slot: int
    phi: str
    z_true: np.ndarray  # sensor rows as measured
    z_pseudo: np.ndarray
    z_realized: np.ndarray
    x_hat: np.ndarray
    bdd_pass: bool
    bdd_norm: float
    alpha: np.ndarray
    believed_down: np.ndarray  # pu
    believed_up: np.ndarray
    true_down: np.ndarray  # model capacities from true counts and loads, pu
    true_up: np.ndarray
    physical_up: np.ndarray  # realized per-EV capacity, pu
    believed_dv: float
    true_dv: float
    capacity_error: float
    min_voltage: float
    undervoltage: int  # buses below v_min
    backup: float
    attack_psi: float = 0.0
    error: str = ""


@dataclass
class MetricsReport:
    mape_vr: float | None
    mape_slots: int
    undervoltage_incidents: int
    bdd_pass_rate: float
    min_voltage_cdf: list
    horizon: int
    believed_dv: list = field(default_factory=list)
    true_dv: list = field(default_factory=list)
    failed_slots: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


CSV_COLUMNS = ["slot", "phi", "bdd_pass", "bdd_norm", "believed_dv", "true_dv", "capacity_error",
               "min_voltage", "undervoltage", "backup", "attack_psi", "believed_down", "believed_up",
               "true_down", "true_up", "physical_up", "alpha", "z_true", "z_pseudo", "z_realized",
               "x_hat", "error"]


def _fmt(v):
    if isinstance(v, np.ndarray):
        return " ".join(f"{x:.12g}" for x in v.ravel())
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def compute_metrics(records, v_min: float = 0.95) -> MetricsReport:
    if not records:
        raise ValueError("need at least one record")
    ok = [r for r in records if not r.error]
    errs = [abs(r.capacity_error) / abs(r.true_dv) for r in ok if abs(r.true_dv) > 1e-12]
    return MetricsReport(
        mape_vr=float(np.mean(errs) * 100) if errs else None,
        mape_slots=len(errs),
        undervoltage_incidents=int(sum(1 for r in ok if r.min_voltage < v_min)),
        bdd_pass_rate=100.0 * sum(1 for r in records if r.bdd_pass) / len(records),
        min_voltage_cdf=sorted(float(r.min_voltage) for r in records),
        horizon=len(records),
        believed_dv=[float(r.believed_dv) for r in records],
        true_dv=[float(r.true_dv) for r in records],
        failed_slots=len(records) - len(ok),
    )


class Scenario:
    """Everything that is fixed for a run: models, traces and random streams."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.feeder = f = load_feeder(cfg.feeder_path())
        self.lin = build_linear_model(f)
        self.n = f.n_bus - 1
        self.E = len(f.evcs_buses)
        self.U = len(f.pmu_buses)
        dt = cfg.dt_hours
        self.stations = cfg.station_configs(self.E)
        self.coeffs = [capacity_coefficients(s, dt) for s in self.stations]
        self.mean_power = [charging_mean_power(s, dt) for s in self.stations]
        self.to_pu = 1.0 / (1000.0 * f.base_mva)
        ss = np.random.SeedSequence(cfg.seed)
        s_load, s_station, s_chan, s_noise, s_attack = ss.spawn(5)
        self.rng_noise = np.random.default_rng(s_noise)
        self.attack_seed = int(s_attack.generate_state(1)[0])
        H = cfg.horizon_slots
        # loads for slots -1 .. H-1 (slot -1 feeds the first pseudo values)
        hours = (np.arange(-1, H) * cfg.slot_minutes) / 60.0
        fac = cfg.load.factor(hours)
        lrng = np.random.default_rng(s_load)
        mult = fac[:, None] * (1 + cfg.load.noise * lrng.standard_normal((H + 1, self.n)))
        self.base_p = -f.load_p[1:][None, :] * mult
        self.base_q = -f.load_q[1:][None, :] * mult
        srngs = s_station.spawn(self.E)
        self.traces = [simulate_station(s, H + 1, dt, seed=r, warmup=cfg.warmup_slots)
                       for s, r in zip(self.stations, srngs)]
        self.P_slot = [slot_matrix(s, dt) for s in self.stations]
        k_gb, k_bg = cfg.channel.transition()
        self.chan = ch.ChannelParams.uniform(self.U + self.E, k_gb, k_bg)
        self.chan_rng = np.random.default_rng(s_chan)
        # pseudo-injection spread: nominal loads, and the typical station load at station buses
        scale = np.concatenate([f.load_p[1:], f.load_q[1:]]).astype(float)
        ev = np.asarray(f.evcs_buses) - 2
        for j, t in enumerate(self.traces):
            scale[ev[j]] = max(scale[ev[j]], float(np.mean(t.load_kw)) * self.to_pu)
        self.m = build_measurement_model(f, self.lin, self.coeffs, self.mean_power, cfg.noise,
                                         injection_scale=scale,
                                         stalls=np.array([s.stalls for s in self.stations], float))
        self.V = capacity_row(f, self.lin)
        self.space = None
        self.geo = None
        if cfg.attack.mode == "sc":
            outcomes = ch.all_outcomes(self.U + self.E)
            self.space = SensorSpace(self.m, self.V, outcomes)
            self.geo = OutcomeGeometry(self.space)

    # -- per-slot pieces ------------------------------------------------------

    def injections(self, t: int):
        """True (p, q) for slot t (t = -1 allowed), stations included."""
        p = self.base_p[t + 1].copy()
        q = self.base_q[t + 1].copy()
        ev = np.asarray(self.feeder.evcs_buses) - 2
        for j, tr in enumerate(self.traces):
            p[ev[j]] -= tr.load_kw[t + 1] * self.to_pu
        return p, q

    def counts(self, t: int):
        return np.array([tr.counts[t + 1] for tr in self.traces], dtype=float)

    def model_caps(self, t: int):
        """Capacities the station model assigns to the true count and load (pu)."""
        down, up = [], []
        for j, tr in enumerate(self.traces):
            cc, ci = split_counts(tr.load_kw[t + 1], tr.counts[t + 1], self.mean_power[j])
            d, u = station_capacity(self.coeffs[j], cc, ci)
            down.append(d * self.to_pu)
            up.append(u * self.to_pu)
        return np.array(down), np.array(up)

    def physical_caps(self, t: int):
        return (np.array([tr.p_down_kw[t + 1] for tr in self.traces]) * self.to_pu,
                np.array([tr.p_up_kw[t + 1] for tr in self.traces]) * self.to_pu)

    def measurements(self, t: int, p, q):
        """(z_true, z_pseudo) as full stacked vectors."""
        f, m = self.feeder, self.m
        k = m.n_sensor_rows
        prof = ac_power_flow(f, p, q)
        pmu = np.asarray(f.pmu_buses) - 1
        sens = np.concatenate([prof.v[pmu], prof.theta[pmu], self.counts(t)])
        sens = sens + self.rng_noise.standard_normal(k) * m.sigma_real[:k]
        pp, pq = self.injections(t - 1)  # smart-meter data arrives one slot late
        aux = np.concatenate([pp, pq, np.zeros(self.E)])
        lp = linear_power_flow(self.lin, pp, pq)
        pc = [pseudo_count(self.traces[j].counts[t], self.stations[j], 1, self.cfg.dt_hours,
                           P_slot=self.P_slot[j]) for j in range(self.E)]
        pseudo = np.concatenate([lp.v[pmu], lp.theta[pmu], np.asarray(pc, float)])
        return np.concatenate([sens, aux]), np.concatenate([pseudo, aux])

    def attack_box(self, z):
        m = self.m
        k, U = m.n_sensor_rows, self.U
        a = self.cfg.attack.alpha_max
        hi = a * m.sigma_real[:k].copy()
        lo = -hi
        stalls = np.array([s.stalls for s in self.stations], float)
        c = z[2 * U:k]
        lo[2 * U:] = -np.maximum(c, 0.0)  # reported counts stay within [0, stalls]
        hi[2 * U:] = np.maximum(stalls - c, 1e-9)
        lo[2 * U:] = np.minimum(lo[2 * U:], -1e-9)
        return lo, hi

    def voltage_view(self, x_hat):
        """The operator's voltage picture from the estimated injections."""
        p, q = x_hat[:self.n], x_hat[self.n:2 * self.n]
        try:
            return ac_power_flow(self.feeder, p, q)
        except PowerFlowError:
            return linear_power_flow(self.lin, p, q)

    def step(self, t: int, states) -> tuple[SlotRecord, np.ndarray]:
        cfg, m, f = self.cfg, self.m, self.feeder
        k = m.n_sensor_rows
        p, q = self.injections(t)
        z, zp = self.measurements(t, p, q)
        phi, states = ch.sample_outcome(self.chan, states, self.chan_rng)
        alpha = np.zeros(k)
        psi = 0.0
        mode = cfg.attack.mode
        if mode != "none":
            lo, hi = self.attack_box(z)
            im = ImpactModel(m, self.V, z, zp, lo=lo, hi=hi, space=self.space)
            if mode == "ic":
                av, sol = construct_ic(im)
                alpha = av.stack()
                psi = float(sol.objective) if sol.status == "optimal" else 0.0
            else:
                res = construct_sc(im, self.chan, cfg.attack.strategy(self.attack_seed + t), geo=self.geo)
                alpha = res.alpha.stack()
                psi = res.psi
        zr = realized_measurement(z, zp, alpha, phi)
        ok, _, norm = bdd_check(m, zr, phi)
        if ok:
            x_hat = wls_estimate(m, zr, phi)
        else:
            x_hat = wls_estimate(m, zp, np.zeros_like(phi))
        n, E = self.n, self.E
        bd, bu = x_hat[2 * n:2 * n + E], x_hat[2 * n + E:]
        td, tu = self.model_caps(t)
        pd_true, pu_true = self.physical_caps(t)
        x_true = np.concatenate([p, q, td, tu])
        believed_dv = float(self.V @ x_hat)
        true_dv = float(self.V @ x_true)
        req = dispatch(self.voltage_view(x_hat), bd, bu, f, self.lin, cfg.regulation)
        out = apply(req, pd_true, pu_true, f, p, q, cfg.regulation)
        rec = SlotRecord(
            slot=t, phi="".join(str(int(b)) for b in phi), z_true=z[:k], z_pseudo=zp[:k],
            z_realized=zr[:k], x_hat=x_hat, bdd_pass=bool(ok), bdd_norm=float(norm), alpha=alpha,
            believed_down=bd, believed_up=bu, true_down=td, true_up=tu, physical_up=pu_true,
            believed_dv=believed_dv, true_dv=true_dv, capacity_error=believed_dv - true_dv,
            min_voltage=out.min_voltage, undervoltage=len(out.undervoltage_buses),
            backup=float(np.sum(req.backup)), attack_psi=float(psi))
        return rec, states


def _failed_record(t, k, nx, E, err):
    z = np.full(k, np.nan)
    e = np.full(E, np.nan)
    return SlotRecord(slot=t, phi="", z_true=z, z_pseudo=z, z_realized=z, x_hat=np.full(nx, np.nan),
                      bdd_pass=False, bdd_norm=math.nan, alpha=z, believed_down=e, believed_up=e,
                      true_down=e, true_up=e, physical_up=e, believed_dv=math.nan, true_dv=math.nan,
                      capacity_error=math.nan, min_voltage=math.nan, undervoltage=0, backup=0.0,
                      error=err)


def run_scenario(cfg: ScenarioConfig, progress=None):
    """Run every slot; returns (records, metrics). A slot that raises is
    recorded with its error message and the run continues."""
    sc = Scenario(cfg)
    states = ch.initial_states(sc.chan, sc.chan_rng)
    records = []
    for t in range(cfg.horizon_slots):
        try:
            rec, states = sc.step(t, states)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
            rec = _failed_record(t, sc.m.n_sensor_rows, sc.m.H.shape[1], sc.E, f"{type(e).__name__}: {e}")
        records.append(rec)
        if progress:
            progress(t, rec)
    return records, compute_metrics(records, cfg.regulation.v_min)
