"""False data injection against the station-aware state estimator.

Two attacker models:

* idealized communication: every packet arrives, so the attacker maximizes the
  capacity overstatement subject to a single residual constraint;
* stochastic communication: each packet may be lost and replaced by a pseudo
  value. The attacker picks a set of outcomes that must pass bad-data
  detection, maximizes the probability-weighted impact over that set, and
  keeps the candidate whose verified expected impact over *all* outcomes is
  largest.

Attack vectors only touch the transmitted sensor rows (PMU magnitudes, PMU
angles, EV counts).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel
from .estimation import MeasurementModel, MeasurementVector, SensorSpace
from .qclp import QclpProblem, solve


@dataclass(frozen=True)
class AttackVector:
    alpha_u: np.ndarray  # 2U entries: PMU magnitudes then angles
    alpha_e: np.ndarray  # E entries: EV counts

    def stack(self) -> np.ndarray:
        return np.concatenate([self.alpha_u, self.alpha_e])

    @classmethod
    def from_array(cls, a, n_pmu: int) -> "AttackVector":
        a = np.asarray(a, dtype=float)
        return cls(a[:2 * n_pmu].copy(), a[2 * n_pmu:].copy())

    @classmethod
    def zeros(cls, n_pmu: int, n_evcs: int) -> "AttackVector":
        return cls(np.zeros(2 * n_pmu), np.zeros(n_evcs))


@dataclass(frozen=True)
class EtaStrategy:
    mode: str = "all_pass"  # all_pass | sampled | exhaustive
    phi_budget: int = 64
    mc_samples: int = 20000
    n_candidates: int = 8  # candidate sets drawn in sampled mode
    enum_limit: int = 4096  # enumerate outcomes exactly up to this many
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("all_pass", "sampled", "exhaustive"):
            raise ValueError(f"unknown eta mode {self.mode!r}")
        if self.phi_budget < 1 or self.mc_samples < 1 or self.n_candidates < 1:
            raise ValueError("phi_budget, mc_samples and n_candidates must be positive")


@dataclass
class ImpactModel:
    """Everything the attacker knows in one slot.

    ``z`` and ``z_pseudo`` are full stacked measurement vectors (sensor rows
    followed by the auxiliary rows, which are identical in both). ``lo``/``hi``
    bound the attack entries.
    """

    m: MeasurementModel
    V: np.ndarray
    z: np.ndarray
    z_pseudo: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    space: SensorSpace | None = field(default=None, repr=False)

    def __post_init__(self):
        self.z = self.z.stack() if isinstance(self.z, MeasurementVector) else np.asarray(self.z, float)
        self.z_pseudo = (self.z_pseudo.stack() if isinstance(self.z_pseudo, MeasurementVector)
                         else np.asarray(self.z_pseudo, float))
        self.V = np.asarray(self.V, dtype=float)
        if self.V.shape != (self.m.H.shape[1],):
            raise ValueError("V must have one entry per state")
        if self.z.shape != (self.m.H.shape[0],) or self.z_pseudo.shape != self.z.shape:
            raise ValueError("measurement vectors do not match the model")
        k = self.k
        self.lo = np.full(k, -np.inf) if self.lo is None else np.asarray(self.lo, float)
        self.hi = np.full(k, np.inf) if self.hi is None else np.asarray(self.hi, float)
        self._slot = None

    @property
    def k(self) -> int:
        return self.m.n_sensor_rows

    def omega(self, phi=None):
        return self.m.omega(phi)

    def delta_v(self, z=None, phi=None) -> float:
        """Capacity metric of the estimate from a full measurement vector."""
        z = self.z if z is None else z
        return float(self.V @ self.omega(phi) @ (z - self.m.h0))

    # reduced (per-outcome) quantities
    def slot(self):
        if self._slot is None:
            if self.space is None:
                raise ValueError("no SensorSpace attached")
            k = self.k
            self._slot = self.space.slot(self.z[k:] - self.m.h0[k:])
        return self._slot

    def y_base(self, idx=slice(None)):
        """Realized sensor deviations with no attack, per outcome (F, k)."""
        k = self.k
        D = self.space.D[idx]
        yt = self.z[:k] - self.m.h0[:k]
        yp = self.z_pseudo[:k] - self.m.h0[:k]
        return D * yt + (1 - D) * yp


def row_phi(phi, m: MeasurementModel) -> np.ndarray:
    """Per-sensor-row delivery flags from per-sensor flags."""
    return np.asarray(phi, dtype=bool)[m.row_sensor]


def realized_measurement(z, z_pseudo, alpha, phi):
    """Received entries carry ``z + alpha``; lost entries fall back to the pseudo value."""
    phi = np.asarray(phi, dtype=bool)
    if isinstance(z, MeasurementVector):
        U = len(z.v)
        a = alpha.stack() if isinstance(alpha, AttackVector) else np.asarray(alpha, float)
        rows = np.concatenate([phi[:U], phi[:U], phi[U:]])
        y = np.where(rows, z.sensors + a, z_pseudo.sensors)
        return z.with_sensors(y, provenance=phi)
    z = np.asarray(z, float)
    zp = np.asarray(z_pseudo, float)
    av = alpha.stack() if isinstance(alpha, AttackVector) else np.asarray(alpha, float)
    U = len(av) - len(phi)  # alpha covers 2U + E rows, phi covers U + E sensors
    if U < 0:
        raise ValueError("alpha must cover every sensor row")
    a = np.zeros_like(z)
    a[:len(av)] = av
    rows = np.ones_like(z, dtype=bool)
    rows[:len(av)] = np.concatenate([phi[:U], phi[:U], phi[U:]])
    return np.where(rows, z + a, zp)


def impact_ic(alpha, im: ImpactModel) -> float:
    """Capacity overstatement when every packet arrives: V Omega alpha."""
    a = alpha.stack() if isinstance(alpha, AttackVector) else np.asarray(alpha, float)
    return float(im.V @ (im.omega()[:, :im.k] @ a))


def ic_problem(im: ImpactModel) -> QclpProblem:
    m = im.m
    Om = m.omega()
    R = np.eye(m.H.shape[0]) - m.H @ Om
    sw = 1.0 / m.sigma()
    S = (sw[:, None] * R)[:, :im.k]
    d = sw * (R @ (im.z - m.h0))
    c = im.V @ Om[:, :im.k]
    return QclpProblem(c, [S], [d], [m.eps], lo=im.lo, hi=im.hi)


def construct_ic(im: ImpactModel, tol: float = 1e-8):
    """Best attack assuming all packets arrive. Returns (AttackVector, QclpSolution).

    If even the clean measurement fails detection the problem is infeasible
    and a zero vector is returned with the solver status.
    """
    sol = solve(ic_problem(im), tol=tol)
    x = sol.x if sol.status == "optimal" else np.zeros(im.k)
    return AttackVector.from_array(x, im.m.n_pmu), sol


# --- stochastic communication -------------------------------------------------

class OutcomeGeometry:
    """Per-outcome factorization of the quadratic part of the BDD statistic in
    the attack vector: ``D Q D = R' R``. Depends only on the model, so it is
    shared across slots."""

    def __init__(self, space: SensorSpace, rtol: float = 1e-12):
        D = space.D
        DQD = D[:, :, None] * space.Q * D[:, None, :]
        lam, U = np.linalg.eigh(DQD)
        scale = np.maximum(lam.max(axis=1, keepdims=True), 1e-300)
        keep = lam > rtol * scale
        lam = np.where(keep, lam, 0.0)
        self.R = np.sqrt(lam)[:, :, None] * np.transpose(U, (0, 2, 1))  # (F, k, k)
        self.inv_sqrt = np.where(keep, 1.0 / np.sqrt(np.where(keep, lam, 1.0)), 0.0)
        self.U = U
        self.space = space


def outcome_terms(im: ImpactModel, idx):
    """Per outcome in ``idx``: (J at alpha=0, linear term of J, impact gradient)."""
    sp = im.space
    sc = im.slot()
    y0 = im.y_base(idx)
    J0 = sp.j_stat(sc, y0, idx)
    q = sp.WIPM[idx] @ sc.u
    D = sp.D[idx]
    lin = D * (np.einsum("fij,fj->fi", sp.Q[idx], y0) - q)  # J = J0 + 2 a'lin + a' DQD a
    grad = D * sp.h[idx]  # psi_f(a) = grad_f . a
    return J0, lin, grad


def expected_impact(alpha, im: ImpactModel, params: channel.ChannelParams,
                    strategy: EtaStrategy = EtaStrategy(), rng=None):
    """Sum over outcomes of P(phi) * [passes BDD] * impact_phi(alpha).

    Outcomes are enumerated when there are at most ``enum_limit`` of them
    (standard error 0), otherwise ``mc_samples`` outcomes are drawn.
    Returns (value, standard error, pass probability).
    """
    a = alpha.stack() if isinstance(alpha, AttackVector) else np.asarray(alpha, float)
    sp = im.space
    F = sp.outcomes.shape[0]
    n = sp.outcomes.shape[1]
    if F == 2 ** n and F <= strategy.enum_limit:
        probs = channel.outcome_probs(sp.outcomes, params)
        J, psi = _j_and_psi(im, a, slice(None))
        ok = J <= im.m.eps ** 2 * (1 + 1e-9)
        return float(np.sum(probs * ok * psi)), 0.0, float(np.sum(probs * ok))
    rng = np.random.default_rng(strategy.seed) if rng is None else rng
    draws = rng.random((strategy.mc_samples, n)) < params.pi_good
    idx = _outcome_index(draws, sp)
    J, psi = _j_and_psi(im, a, idx)
    ok = J <= im.m.eps ** 2 * (1 + 1e-9)
    vals = ok * psi
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals))), float(ok.mean())


def _outcome_index(draws, sp: SensorSpace):
    n = draws.shape[1]
    if sp.outcomes.shape[0] != 2 ** n:
        raise ValueError("Monte-Carlo evaluation needs the full outcome table")
    weights = 2 ** np.arange(n - 1, -1, -1)
    return draws.astype(int) @ weights


def _j_and_psi(im, a, idx):
    J0, lin, grad = outcome_terms(im, idx)
    sp = im.space
    Da = sp.D[idx] * a
    quad = np.einsum("fi,fij,fj->f", Da, sp.Q[idx], Da)
    return J0 + 2 * (lin @ a) + quad, grad @ a


def pass_constraints(im: ImpactModel, geo: OutcomeGeometry, idx):
    """Ellipsoids ||R a + d|| <= r for each outcome in ``idx``; returns
    (S list, d list, radius array, feasible mask)."""
    idx = np.asarray(idx)
    J0, lin, _ = outcome_terms(im, idx)
    R = geo.R[idx]
    d = geo.inv_sqrt[idx] * np.einsum("fji,fj->fi", geo.U[idx], lin)
    r2 = im.m.eps ** 2 - J0 + np.sum(d * d, axis=1)
    return list(R), list(d), r2


def _candidate_sets(probs, strategy: EtaStrategy, rng):
    order = np.argsort(-probs, kind="stable")
    F = len(probs)
    if strategy.mode == "all_pass":
        top = min(strategy.phi_budget, F)
        sizes = sorted({min(2 ** i, top) for i in range(top.bit_length() + 1)} | {top})
        return [order[:s] for s in sizes]
    if strategy.mode == "sampled":
        size = min(strategy.phi_budget, F)
        sets = []
        for _ in range(strategy.n_candidates):
            pick = rng.choice(F, size=size, replace=False, p=probs / probs.sum())
            sets.append(np.sort(pick))
        return sets
    if F > 12:
        raise ValueError("exhaustive eta search is limited to 12 outcomes")
    return [np.flatnonzero([(mask >> i) & 1 for i in range(F)]) for mask in range(1, 2 ** F)]


@dataclass
class ScResult:
    alpha: AttackVector
    psi: float
    pass_prob: float
    candidates: int
    feasible: int
    best_set_size: int


def construct_sc(im: ImpactModel, params: channel.ChannelParams,
                 strategy: EtaStrategy = EtaStrategy(), geo: OutcomeGeometry | None = None,
                 tol: float = 1e-8) -> ScResult:
    """Candidate-eta search: impose BDD passing on a set of outcomes, maximize
    the probability-weighted impact over that set, keep the candidate with
    the largest verified expected impact (ties: smallest norm)."""
    sp = im.space
    geo = OutcomeGeometry(sp) if geo is None else geo
    probs = channel.outcome_probs(sp.outcomes, params)
    rng = np.random.default_rng(strategy.seed)
    sets = _candidate_sets(probs, strategy, rng)
    zero = np.zeros(im.k)
    psi0, _, pp0 = expected_impact(zero, im, params, strategy)
    best = (psi0, pp0, zero)
    n_feasible = 0
    best_size = 0
    _, _, grad_all = outcome_terms(im, slice(None))
    for S in sets:
        Sm, dm, r2 = pass_constraints(im, geo, S)
        if np.any(r2 <= 0):
            continue
        c = (probs[S, None] * grad_all[S]).sum(axis=0)
        sol = solve(QclpProblem(c, Sm, dm, np.sqrt(r2), lo=im.lo, hi=im.hi), tol=tol)
        if sol.status != "optimal":
            continue
        n_feasible += 1
        psi, _, pp = expected_impact(sol.x, im, params, strategy)
        better = psi > best[0] + 1e-12 * max(1.0, abs(best[0]))
        tie = abs(psi - best[0]) <= 1e-12 * max(1.0, abs(best[0]))
        if better or (tie and np.linalg.norm(sol.x) < np.linalg.norm(best[2])):
            best = (psi, pp, sol.x)
            best_size = len(S)
    return ScResult(AttackVector.from_array(best[2], im.m.n_pmu), best[0], best[1],
                    len(sets), n_feasible, best_size)
