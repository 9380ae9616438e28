"""Radial distribution feeder: data model, linearized power flow, AC oracle.

Bus numbers in files and in the public fields of :class:`Feeder` are 1-based,
the slack bus is bus 1. Arrays that carry one entry per bus are indexed by
``bus - 1``; arrays that skip the slack bus (injections, sensitivities) are
indexed by ``bus - 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FeederError(ValueError):
    pass


class FeederParseError(FeederError):
    pass


class TopologyError(FeederError):
    pass


class PlacementError(FeederError):
    pass


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class Feeder:
    n_bus: int
    from_bus: np.ndarray
    to_bus: np.ndarray
    r: np.ndarray  # pu
    x: np.ndarray  # pu
    base_kv: float
    base_mva: float
    load_p: np.ndarray  # pu consumption at nominal level, length N
    load_q: np.ndarray
    pmu_buses: tuple[int, ...] = ()
    evcs_buses: tuple[int, ...] = ()
    monitored_buses: tuple[int, ...] = ()
    slack_bus: int = 1
    slack_v: float = 1.0
    slack_theta: float = 0.0
    name: str = ""
    # derived tree structure, filled in __post_init__
    parent: np.ndarray = field(init=False, repr=False, compare=False)
    branch_of: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        parent, branch_of = _radial_structure(self.n_bus, self.from_bus, self.to_bus)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "branch_of", branch_of)
        if np.any(self.r <= 0) or np.any(self.x <= 0):
            raise FeederParseError("line resistance and reactance must be positive")
        for kind, buses in (("PMU", self.pmu_buses), ("EVCS", self.evcs_buses),
                            ("MONITOR", self.monitored_buses)):
            for b in buses:
                if not 1 <= b <= self.n_bus:
                    raise PlacementError(f"{kind} bus {b} out of range 1..{self.n_bus}")
            if len(set(buses)) != len(buses):
                raise PlacementError(f"duplicate {kind} bus")
        for b in self.pmu_buses + self.evcs_buses:
            if b == self.slack_bus:
                raise PlacementError(f"sensor at slack bus {b} carries no state information")
        if set(self.pmu_buses) & set(self.evcs_buses):
            raise PlacementError("PMU and EVCS buses must be disjoint")

    @property
    def n_lines(self) -> int:
        return len(self.from_bus)

    @property
    def z_base(self) -> float:
        return self.base_kv**2 / self.base_mva

    def kw_to_pu(self, kw):
        return np.asarray(kw, dtype=float) / (1000.0 * self.base_mva)

    def path_matrix(self) -> np.ndarray:
        """T[b, k] = 1 when the branch feeding non-slack bus b+2 lies on the
        path from the slack bus to bus k+2."""
        n = self.n_bus - 1
        T = np.zeros((n, n))
        for k in range(2, self.n_bus + 1):
            b = k
            while b != self.slack_bus:
                T[b - 2, k - 2] = 1.0
                b = int(self.parent[b - 1])
        return T

    def branch_impedance(self) -> np.ndarray:
        """Impedance of the branch feeding each non-slack bus (length N-1)."""
        z = np.zeros(self.n_bus - 1, dtype=complex)
        for b in range(2, self.n_bus + 1):
            i = self.branch_of[b - 1]
            z[b - 2] = self.r[i] + 1j * self.x[i]
        return z

    def ybus(self) -> np.ndarray:
        Y = np.zeros((self.n_bus, self.n_bus), dtype=complex)
        y = 1.0 / (self.r + 1j * self.x)
        for i, (a, b) in enumerate(zip(self.from_bus - 1, self.to_bus - 1)):
            Y[a, a] += y[i]
            Y[b, b] += y[i]
            Y[a, b] -= y[i]
            Y[b, a] -= y[i]
        return Y


def _radial_structure(n_bus, from_bus, to_bus):
    if n_bus < 2:
        raise TopologyError("feeder needs at least two buses")
    if len(from_bus) != n_bus - 1:
        raise TopologyError(f"radial feeder with {n_bus} buses needs {n_bus - 1} lines, got {len(from_bus)}")
    adj = [[] for _ in range(n_bus + 1)]
    for i, (a, b) in enumerate(zip(from_bus, to_bus)):
        if a == b:
            raise TopologyError(f"self loop at bus {a}")
        for bus in (a, b):
            if not 1 <= bus <= n_bus:
                raise TopologyError(f"line endpoint {bus} out of range")
        adj[a].append((b, i))
        adj[b].append((a, i))
    parent = np.zeros(n_bus, dtype=int)
    branch_of = -np.ones(n_bus, dtype=int)
    seen = {1}
    stack = [1]
    while stack:
        u = stack.pop()
        for v, i in adj[u]:
            if i == branch_of[u - 1]:
                continue
            if v in seen:
                raise TopologyError(f"cycle through bus {v}")
            seen.add(v)
            parent[v - 1] = u
            branch_of[v - 1] = i
            stack.append(v)
    if len(seen) != n_bus:
        missing = sorted(set(range(1, n_bus + 1)) - seen)
        raise TopologyError(f"disconnected buses: {missing[:5]}")
    return parent, branch_of


def load_feeder(path) -> Feeder:
    """Parse a feeder file (see README for the format)."""
    path = Path(path)
    header = None
    lines, loads = [], {}
    pmu, evcs, mon = [], [], []
    try:
        text = path.read_text()
    except OSError as exc:
        raise FeederParseError(f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        tok = s.split()
        key = tok[0].upper()
        try:
            if key == "N":
                kv = dict(zip(tok[::2], tok[1::2]))
                header = dict(n=int(kv["N"]), slack=int(kv.get("SLACK", 1)),
                              kv=float(kv["BASEKV"]), mva=float(kv["BASEMVA"]))
            elif key == "LINE":
                if len(tok) != 5:
                    raise ValueError("LINE needs 4 fields")
                lines.append((int(tok[1]), int(tok[2]), float(tok[3]), float(tok[4])))
            elif key == "LOAD":
                if len(tok) != 4:
                    raise ValueError("LOAD needs 3 fields")
                loads[int(tok[1])] = (float(tok[2]), float(tok[3]))
            elif key in ("PMU", "EVCS", "MONITOR"):
                target = {"PMU": pmu, "EVCS": evcs, "MONITOR": mon}[key]
                target.extend(int(t) for t in tok[1:])
            else:
                raise ValueError(f"unknown keyword {tok[0]!r}")
        except (ValueError, KeyError) as exc:
            raise FeederParseError(f"{path.name}:{lineno}: {exc}") from exc
    if header is None:
        raise FeederParseError(f"{path.name}: missing header line")
    if header["slack"] != 1:
        raise FeederParseError("slack bus must be bus 1")
    n = header["n"]
    for b in loads:
        if not 1 <= b <= n:
            raise PlacementError(f"LOAD bus {b} out of range 1..{n}")
    zb = header["kv"] ** 2 / header["mva"]
    arr = np.array(lines, dtype=float).reshape(-1, 4)
    load_p = np.zeros(n)
    load_q = np.zeros(n)
    for b, (p, q) in loads.items():
        load_p[b - 1] = p / (1000.0 * header["mva"])
        load_q[b - 1] = q / (1000.0 * header["mva"])
    return Feeder(
        n_bus=n,
        from_bus=arr[:, 0].astype(int),
        to_bus=arr[:, 1].astype(int),
        r=arr[:, 2] / zb,
        x=arr[:, 3] / zb,
        base_kv=header["kv"],
        base_mva=header["mva"],
        load_p=load_p,
        load_q=load_q,
        pmu_buses=tuple(pmu),
        evcs_buses=tuple(evcs),
        monitored_buses=tuple(mon),
        name=path.stem,
    )


@dataclass(frozen=True)
class VoltageProfile:
    v: np.ndarray
    theta: np.ndarray

    @property
    def min_voltage(self) -> float:
        return float(self.v.min())


@dataclass(frozen=True)
class LinearPFModel:
    """Linearized power flow around the flat profile.

    ``M1``/``M2`` hold the line conductance-like and susceptance-like weights
    r/(r^2+x^2) and x/(r^2+x^2) on adjacent off-diagonal entries and their row
    sums on the diagonal. In the linear system the off-diagonal entries enter
    with a negative sign, as in an admittance matrix.

    Sensitivities map non-slack injections (length N-1) to non-slack voltage
    magnitudes and angles: ``v = Kvp @ p + Kvq @ q + m_v``.
    """

    M1: np.ndarray
    M2: np.ndarray
    M1p: np.ndarray
    M2p: np.ndarray
    m_v: np.ndarray
    m_theta: np.ndarray
    slack_v: float
    slack_theta: float
    Kvp: np.ndarray
    Kvq: np.ndarray
    Ktp: np.ndarray
    Ktq: np.ndarray

    @property
    def n_bus(self) -> int:
        return self.M1.shape[0]


def _weight_matrices(f: Feeder):
    N = f.n_bus
    M1 = np.zeros((N, N))
    M2 = np.zeros((N, N))
    d = f.r**2 + f.x**2
    for i, (a, b) in enumerate(zip(f.from_bus - 1, f.to_bus - 1)):
        M1[a, b] = M1[b, a] = f.r[i] / d[i]
        M2[a, b] = M2[b, a] = f.x[i] / d[i]
    np.fill_diagonal(M1, M1.sum(axis=1))
    np.fill_diagonal(M2, M2.sum(axis=1))
    return M1, M2


def block_matrix(M1, M2) -> np.ndarray:
    """The 2(N-1) square system matrix mapping [theta'; v'] to [p'; q']."""
    L1 = 2 * np.diag(np.diag(M1)) - M1
    L2 = 2 * np.diag(np.diag(M2)) - M2
    L1p, L2p = L1[1:, 1:], L2[1:, 1:]
    return np.block([[L2p, L1p], [-L1p, L2p]])


def build_linear_model(f: Feeder) -> LinearPFModel:
    M1, M2 = _weight_matrices(f)
    L1 = 2 * np.diag(np.diag(M1)) - M1
    L2 = 2 * np.diag(np.diag(M2)) - M2
    B = block_matrix(M1, M2)
    if np.linalg.cond(B) > 1e14:
        raise FeederError("linear power flow block matrix is singular")
    Binv = np.linalg.inv(B)
    l1c, l2c = L1[1:, 0], L2[1:, 0]
    th1, v1 = f.slack_theta, f.slack_v
    offset = -Binv @ (np.concatenate([l2c, -l1c]) * th1 + np.concatenate([l1c, l2c]) * v1)
    n = f.n_bus - 1
    return LinearPFModel(
        M1=M1, M2=M2, M1p=M1[1:, 1:].copy(), M2p=M2[1:, 1:].copy(),
        m_theta=offset[:n], m_v=offset[n:],
        slack_v=v1, slack_theta=th1,
        Ktp=Binv[:n, :n], Ktq=Binv[:n, n:], Kvp=Binv[n:, :n], Kvq=Binv[n:, n:],
    )


def linear_power_flow(m: LinearPFModel, p, q) -> VoltageProfile:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = m.n_bus - 1
    if p.shape != (n,) or q.shape != (n,):
        raise ValueError(f"injections must have length {n}")
    v = m.Kvp @ p + m.Kvq @ q + m.m_v
    th = m.Ktp @ p + m.Ktq @ q + m.m_theta
    return VoltageProfile(np.concatenate([[m.slack_v], v]), np.concatenate([[m.slack_theta], th]))


def ac_power_flow(f: Feeder, p, q, tol: float = 1e-8, max_iter: int = 100) -> VoltageProfile:
    """Backward/forward sweep on the radial feeder with constant-power injections."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = f.n_bus - 1
    if p.shape != (n,) or q.shape != (n,):
        raise ValueError(f"injections must have length {n}")
    T = f.path_matrix()
    Zp = T.T @ (f.branch_impedance()[:, None] * T)
    Y = f.ybus()
    s = p + 1j * q
    v1 = f.slack_v * np.exp(1j * f.slack_theta)
    V = np.full(n, v1, dtype=complex)
    for _ in range(max_iter):
        V = v1 + Zp @ np.conj(s / V)
        Vfull = np.concatenate([[v1], V])
        mismatch = Vfull[1:] * np.conj(Y[1:] @ Vfull) - s
        if np.max(np.abs(mismatch)) < tol:
            return VoltageProfile(np.abs(Vfull), np.angle(Vfull))
        if not np.all(np.isfinite(V)) or np.min(np.abs(V)) < 0.3:
            break
    raise PowerFlowError("backward/forward sweep did not converge")
