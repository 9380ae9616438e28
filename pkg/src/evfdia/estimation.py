"""Linear WLS state estimation with EV-station capacities and residual bad-data detection.

State ``x = [p (N-1), q (N-1), p_down (E), p_up (E)]`` in pu.

Measurement rows, in order:

* sensor rows (transmitted, attackable, may be lost): PMU magnitudes, PMU
  angles, EV counts; ``2U + E`` rows, each tied to one entry of the
  communication outcome vector ``phi = [phi_pmu, phi_evcs]``;
* auxiliary rows (always available to the operator): pseudo injections for
  every non-slack bus, plus one zero-valued coupling row per station.

The count and coupling rows invert the station capacity map: with idle and
charging per-EV coefficients ``(a, c_d)`` for down and ``(b, c_u)`` for up,
and charging count ``cc = -p_bus / mean_power``, the idle count is the
least-squares solution of ``p_down = a*ci + c_d*cc``, ``p_up = b*ci + c_u*cc``.
The count row is ``ci + cc``; the coupling row is the orthogonal combination
that must vanish.

The BDD statistic is the weighted residual norm ``||W^(1/2) r||_2`` compared
against ``eps = sqrt(chi2_{1-tau}(m - n))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .evcs import CapacityCoefficients
from .feeder import Feeder, LinearPFModel


@dataclass(frozen=True)
class NoiseConfig:
    pmu_v_sigma: float = 0.01
    pmu_theta_sigma: float = 0.005
    pseudo_sigma: float = 0.3
    count_sigma: float = 0.05
    tau: float = 0.05

    def __post_init__(self):
        for name in ("pmu_v_sigma", "pmu_theta_sigma", "pseudo_sigma", "count_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")


class ObservabilityError(ValueError):
    pass


@dataclass(frozen=True)
class StateVector:
    p: np.ndarray
    q: np.ndarray
    p_down: np.ndarray
    p_up: np.ndarray

    def stack(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.p_down, self.p_up])

    @classmethod
    def unstack(cls, x, n_bus: int, n_evcs: int) -> "StateVector":
        n = n_bus - 1
        return cls(x[:n], x[n:2 * n], x[2 * n:2 * n + n_evcs], x[2 * n + n_evcs:])


@dataclass(frozen=True)
class MeasurementVector:
    v: np.ndarray  # PMU magnitudes, length U
    theta: np.ndarray  # PMU angles, length U
    counts: np.ndarray  # EV counts, length E
    pseudo_p: np.ndarray  # pseudo injections, length N-1
    pseudo_q: np.ndarray
    provenance: np.ndarray = None  # per sensor (U+E), True = real-time

    def __post_init__(self):
        if self.provenance is None:
            object.__setattr__(self, "provenance", np.ones(len(self.v) + len(self.counts), dtype=bool))

    @property
    def sensors(self) -> np.ndarray:
        return np.concatenate([self.v, self.theta, self.counts])

    def stack(self) -> np.ndarray:
        return np.concatenate([self.v, self.theta, self.counts, self.pseudo_p, self.pseudo_q,
                               np.zeros(len(self.counts))])

    def with_sensors(self, y, provenance=None) -> "MeasurementVector":
        U = len(self.v)
        return MeasurementVector(y[:U], y[U:2 * U], y[2 * U:], self.pseudo_p, self.pseudo_q,
                                 self.provenance if provenance is None else np.asarray(provenance, bool))


@dataclass(frozen=True)
class MeasurementModel:
    H: np.ndarray
    h0: np.ndarray  # constant part of the measurement function
    sigma_real: np.ndarray
    sigma_pseudo: np.ndarray
    n_pmu: int
    n_evcs: int
    eps: float
    tau: float
    row_sensor: np.ndarray = field(repr=False)  # sensor index per sensor row

    @property
    def n_sensor_rows(self) -> int:
        return 2 * self.n_pmu + self.n_evcs

    @property
    def n_sensors(self) -> int:
        return self.n_pmu + self.n_evcs

    @property
    def dof(self) -> int:
        return self.H.shape[0] - self.H.shape[1]

    def row_mask(self, phi=None) -> np.ndarray:
        """Per-row True where the row carries a real-time value."""
        k = self.n_sensor_rows
        mask = np.ones(self.H.shape[0], dtype=bool)
        if phi is not None:
            mask[:k] = np.asarray(phi, dtype=bool)[self.row_sensor]
        return mask

    def sigma(self, phi=None) -> np.ndarray:
        return np.where(self.row_mask(phi), self.sigma_real, self.sigma_pseudo)

    def weights(self, phi=None) -> np.ndarray:
        return self.sigma(phi) ** -2

    def omega(self, phi=None) -> np.ndarray:
        """Estimation matrix (H'WH)^-1 H'W."""
        w = self.weights(phi)
        HtW = self.H.T * w
        return np.linalg.solve(HtW @ self.H, HtW)


def _as_z(m: MeasurementModel, z):
    z = z.stack() if isinstance(z, MeasurementVector) else np.asarray(z, dtype=float)
    if z.shape != (m.H.shape[0],):
        raise ValueError(f"measurement length {z.shape} does not match model rows {m.H.shape[0]}")
    return z


def _phi_of(z, phi):
    if phi is None and isinstance(z, MeasurementVector):
        return z.provenance
    return phi


def build_measurement_model(feeder: Feeder, lin: LinearPFModel, coeffs, mean_power_kw,
                            noise: NoiseConfig = NoiseConfig(), injection_scale=None,
                            stalls=None) -> MeasurementModel:
    """Assemble H, the noise model and the BDD threshold.

    ``coeffs`` and ``mean_power_kw`` are per station, in kW. ``injection_scale``
    (pu, length N-1) scales the pseudo-injection standard deviations; it
    defaults to the feeder's nominal loads. ``stalls`` scales pseudo counts.
    """
    N = feeder.n_bus
    n = N - 1
    pmu = [b - 2 for b in feeder.pmu_buses]
    evcs = [b - 2 for b in feeder.evcs_buses]
    U, E = len(pmu), len(evcs)
    if len(coeffs) != E or len(mean_power_kw) != E:
        raise ValueError("need one coefficient set and mean power per station")
    ns = 2 * n + 2 * E
    k = 2 * U + E
    H = np.zeros((k + 2 * n + E, ns))
    h0 = np.zeros(H.shape[0])
    to_pu = 1.0 / (1000.0 * feeder.base_mva)

    for i, b in enumerate(pmu):
        H[i, :n], H[i, n:2 * n] = lin.Kvp[b], lin.Kvq[b]
        H[U + i, :n], H[U + i, n:2 * n] = lin.Ktp[b], lin.Ktq[b]
        h0[i], h0[U + i] = lin.m_v[b], lin.m_theta[b]

    for j, (b, cf, mp) in enumerate(zip(evcs, coeffs, mean_power_kw)):
        a, cd, bu, cu = (np.asarray(cf.as_array() if isinstance(cf, CapacityCoefficients) else cf) * to_pu)
        s2 = a * a + bu * bu
        if s2 <= 0:
            raise ValueError(f"station {j}: idle-EV capacity coefficients are both zero")
        mp = mp * to_pu
        # cc = -p_bus / mp
        ci_down, ci_up = a / s2, bu / s2
        ci_pbus = -(1.0 / mp) * -(a * cd + bu * cu) / s2  # d ci / d p_bus
        row = 2 * U + j
        H[row, 2 * n + j] = ci_down
        H[row, 2 * n + E + j] = ci_up
        H[row, b] = ci_pbus - 1.0 / mp
        vrow = k + 2 * n + j
        H[vrow, 2 * n + j] = bu / s2
        H[vrow, 2 * n + E + j] = -a / s2
        H[vrow, b] = -(1.0 / mp) * -(bu * cd - a * cu) / s2

    H[k:k + n, :n] = np.eye(n)
    H[k + n:k + 2 * n, n:2 * n] = np.eye(n)

    if injection_scale is None:
        injection_scale = np.concatenate([feeder.load_p[1:], feeder.load_q[1:]])
    injection_scale = np.asarray(injection_scale, dtype=float)
    if injection_scale.shape == (n,):
        injection_scale = np.concatenate([injection_scale, injection_scale])
    floor = 1e-4
    inj_sigma = np.maximum(noise.pseudo_sigma * np.abs(injection_scale), floor)
    stalls = np.ones(E) if stalls is None else np.asarray(stalls, dtype=float)

    sig_real = np.concatenate([
        np.full(U, noise.pmu_v_sigma), np.full(U, noise.pmu_theta_sigma), np.full(E, noise.count_sigma),
        inj_sigma, np.full(E, noise.count_sigma)])
    sig_pseudo = sig_real.copy()
    # historian forecasts of PMU quantities err by a fraction of the
    # load-driven deviation at nominal load, never less than the sensor itself
    nom = np.concatenate([feeder.load_p[1:], feeder.load_q[1:]])
    dev_v = np.abs(lin.Kvp[pmu] @ nom[:n] + lin.Kvq[pmu] @ nom[n:])
    dev_t = np.abs(lin.Ktp[pmu] @ nom[:n] + lin.Ktq[pmu] @ nom[n:])
    sig_pseudo[:U] = np.maximum(noise.pseudo_sigma * dev_v, noise.pmu_v_sigma)
    sig_pseudo[U:2 * U] = np.maximum(noise.pseudo_sigma * dev_t, noise.pmu_theta_sigma)
    sig_pseudo[2 * U:k] = noise.pseudo_sigma * stalls

    Hw = H / sig_real[:, None]
    rank = np.linalg.matrix_rank(Hw)
    if rank < ns:
        raise ObservabilityError(f"measurement matrix has rank {rank} < {ns} states")
    dof = H.shape[0] - ns
    eps = float(np.sqrt(stats.chi2.ppf(1 - noise.tau, dof)))
    row_sensor = np.concatenate([np.arange(U), np.arange(U), U + np.arange(E)])
    return MeasurementModel(H=H, h0=h0, sigma_real=sig_real, sigma_pseudo=sig_pseudo,
                            n_pmu=U, n_evcs=E, eps=eps, tau=noise.tau, row_sensor=row_sensor)


def wls_estimate(m: MeasurementModel, z, phi=None) -> np.ndarray:
    """Weighted least-squares state estimate (stacked state vector).

    ``phi`` selects real-time vs pseudo weights per sensor; a
    :class:`MeasurementVector` carries its own provenance.
    """
    phi = _phi_of(z, phi)
    zt = _as_z(m, z) - m.h0
    sw = 1.0 / m.sigma(phi)
    x, *_ = np.linalg.lstsq(m.H * sw[:, None], zt * sw, rcond=None)
    return x


def residual(m: MeasurementModel, z, phi=None) -> np.ndarray:
    phi = _phi_of(z, phi)
    return _as_z(m, z) - m.h0 - m.H @ wls_estimate(m, z, phi)


def bdd_check(m: MeasurementModel, z, phi=None):
    """Return (passed, residual, weighted residual norm)."""
    phi = _phi_of(z, phi)
    r = residual(m, z, phi)
    norm = float(np.linalg.norm(r / m.sigma(phi)))
    return norm <= m.eps, r, norm


def sample_noise(m: MeasurementModel, rng, phi=None, size=None):
    s = m.sigma(phi)
    shape = s.shape if size is None else (size,) + s.shape
    return rng.standard_normal(shape) * s


class SensorSpace:
    """Closed-form WLS estimate and BDD statistic as functions of the sensor
    block, for every communication outcome.

    With ``y`` the sensor rows minus their constant part, and the auxiliary
    rows fixed for the slot, the estimate's capacity metric is
    ``c_phi + h_phi @ y`` and the weighted residual norm squared is
    ``J0 + u' M_phi u + y' Q_phi y - 2 y' q_phi``. Outcome-dependent matrices
    are obtained from the all-pseudo information matrix by a low-rank update,
    so nothing of state dimension is factorized per outcome.
    """

    def __init__(self, m: MeasurementModel, capacity_row, outcomes):
        self.m = m
        k = m.n_sensor_rows
        Hs, Ha = m.H[:k], m.H[k:]
        wa = m.sigma_real[k:] ** -2
        wp = m.sigma_pseudo[:k] ** -2
        wr = m.sigma_real[:k] ** -2
        self.Ha, self.wa, self.Hs = Ha, wa, Hs
        Ab = (Ha.T * wa) @ Ha + (Hs.T * wp) @ Hs
        self.Ab_chol = np.linalg.cholesky(Ab)
        self.T = self._solve_Ab(Hs.T).T  # k x n
        self.Pb = self.T @ Hs.T
        self.V = np.asarray(capacity_row, dtype=float)
        self.VAinv = self._solve_Ab(self.V)
        self.g = self.T @ self.V  # V Ab^-1 Hs'
        self.outcomes = np.asarray(outcomes, dtype=np.int8)
        D = self.outcomes[:, m.row_sensor].astype(float)  # (F, k)
        self.D = D
        self.w = np.where(D > 0, wr, wp)  # (F, k)
        delta = (self.w - wp)  # zero on lost rows
        eye = np.eye(k)
        A = eye[None] + delta[:, :, None] * self.Pb[None]
        self.M = np.linalg.solve(A, delta[:, :, None] * eye[None])  # (I + Delta Pb)^-1 Delta
        IPM = eye[None] - self.Pb[None] @ self.M  # I - Pb M
        G = IPM @ self.Pb[None]
        Wd = self.w[:, :, None] * eye[None]
        self.Q = Wd - Wd @ G @ Wd
        self.Q = 0.5 * (self.Q + np.transpose(self.Q, (0, 2, 1)))
        self.WIPM = Wd @ IPM  # q = WIPM u
        self.h = (self.g[None, None, :] @ np.transpose(IPM, (0, 2, 1)) @ Wd)[:, 0, :]
        # (I - M Pb)' = I - Pb M since both symmetric; h = g (I - M Pb) W
        self.gM = (self.g[None, None, :] @ self.M)[:, 0, :]

    def _solve_Ab(self, B):
        from scipy.linalg import cho_solve
        return cho_solve((self.Ab_chol, True), B)

    def slot(self, aux):
        """Slot constants from the auxiliary rows (values minus constant part)."""
        aux = np.asarray(aux, dtype=float)
        b0 = (self.Ha.T * self.wa) @ aux
        xb = self._solve_Ab(b0)
        u = self.T @ b0
        J0 = float(aux @ (self.wa * aux) - b0 @ xb)
        return SlotConstants(u=u, J0=J0, Vxb=float(self.V @ xb), xb=xb)

    def capacity(self, sc: "SlotConstants", y, idx=None):
        """Capacity metric of the estimate for outcome rows ``idx`` and sensor deviations ``y``."""
        idx = slice(None) if idx is None else idx
        y = np.asarray(y)
        c = sc.Vxb - self.gM[idx] @ sc.u
        return c + np.einsum("fk,...fk->...f", self.h[idx], y) if y.ndim > 1 else c + self.h[idx] @ y

    def j_stat(self, sc: "SlotConstants", y, idx=None):
        """Weighted residual norm squared per outcome; ``y`` has shape (F, k)."""
        idx = slice(None) if idx is None else idx
        M, Q, WIPM = self.M[idx], self.Q[idx], self.WIPM[idx]
        uMu = np.einsum("i,fij,j->f", sc.u, M, sc.u)
        q = WIPM @ sc.u
        yQy = np.einsum("fi,fij,fj->f", y, Q, y)
        return sc.J0 + uMu + yQy - 2 * np.einsum("fi,fi->f", y, q)

    def estimate(self, sc: "SlotConstants", y, f: int):
        """Full state estimate for outcome row ``f``."""
        M = self.M[f]
        ipm = np.eye(len(y)) - M @ self.Pb
        return sc.xb - self.T.T @ (M @ sc.u) + self.T.T @ (ipm @ (self.w[f] * y))


@dataclass(frozen=True)
class SlotConstants:
    u: np.ndarray
    J0: float
    Vxb: float
    xb: np.ndarray
