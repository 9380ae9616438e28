"""Maximize a linear objective over an intersection of ellipsoids and a box.

    maximize    c'x
    subject to  ||S_i x + d_i||_2 <= eps_i     i = 1..m
                lo <= x <= hi                  (optional, entries may be infinite)

Primal log-barrier interior point method on the squared, radius-normalized
constraints ``||(S_i x + d_i)/eps_i||^2 - 1 <= 0``, Newton steps with
backtracking. A phase-I problem (minimize the largest constraint value)
either produces a strictly feasible start or certifies infeasibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class QclpProblem:
    c: np.ndarray
    S: list  # matrices (r_i x n)
    d: list  # vectors (r_i)
    eps: list
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.eps = np.asarray(self.eps, dtype=float).reshape(-1)
        if len(self.S) != len(self.d) or len(self.S) != len(self.eps):
            raise ValueError("S, d and eps must have one entry per constraint")
        if np.any(self.eps <= 0):
            raise ValueError("constraint radii must be positive")
        for S, d in zip(self.S, self.d):
            S = np.asarray(S)
            if S.ndim != 2 or S.shape[1] != n or np.asarray(d).shape != (S.shape[0],):
                raise ValueError("inconsistent constraint dimensions")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.broadcast_to(np.asarray(self.lo, float), (n,)).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.broadcast_to(np.asarray(self.hi, float), (n,)).copy()
        if np.any(self.lo >= self.hi):
            raise ValueError("box bounds must satisfy lo < hi")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def stacked(self):
        """Constraints scaled by 1/eps and zero-padded to a common row count."""
        m, n = len(self.S), self.n
        r = max((np.asarray(S).shape[0] for S in self.S), default=0)
        St = np.zeros((m, r, n))
        dt = np.zeros((m, r))
        for i, (S, d) in enumerate(zip(self.S, self.d)):
            S = np.asarray(S, float)
            St[i, : S.shape[0]] = S / self.eps[i]
            dt[i, : S.shape[0]] = np.asarray(d, float) / self.eps[i]
        return St, dt

    def violation(self, x) -> float:
        """Largest amount by which x violates a constraint (0 when feasible)."""
        v = 0.0
        for S, d, e in zip(self.S, self.d, self.eps):
            v = max(v, float(np.linalg.norm(np.asarray(S) @ x + d) - e))
        v = max(v, float(np.max(self.lo - x, initial=0.0)), float(np.max(x - self.hi, initial=0.0)))
        return v


@dataclass
class QclpSolution:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray
    objective: float
    max_violation: float
    certificate: float = 0.0  # phase-I optimum when infeasible
    iterations: int = 0


class _Barrier:
    def __init__(self, p: QclpProblem):
        self.St, self.dt = p.stacked()
        self.StS = 2.0 * np.einsum("mri,mrj->mij", self.St, self.St)
        self.lo, self.hi = p.lo, p.hi
        self.has_lo = np.isfinite(p.lo)
        self.has_hi = np.isfinite(p.hi)
        self.m = len(self.St) + int(self.has_lo.sum() + self.has_hi.sum())

    def f(self, x):
        r = np.einsum("mri,i->mr", self.St, x) + self.dt
        return np.sum(r * r, axis=1) - 1.0, r

    def inside(self, x, s=0.0):
        f, _ = self.f(x)
        return (np.all(f < s) and np.all(x[self.has_lo] > self.lo[self.has_lo])
                and np.all(x[self.has_hi] < self.hi[self.has_hi]))

    def value(self, x, s=0.0):
        f, _ = self.f(x)
        if not self.inside(x, s):
            return np.inf
        return (-np.sum(np.log(s - f)) - np.sum(np.log(x[self.has_lo] - self.lo[self.has_lo]))
                - np.sum(np.log(self.hi[self.has_hi] - x[self.has_hi])))

    def derivs(self, x, s=0.0):
        """Gradient/Hessian in x of the barrier, plus pieces needed for the slack s."""
        f, r = self.f(x)
        gap = s - f
        G = 2.0 * np.einsum("mri,mr->mi", self.St, r)  # grad f_i
        grad = (G / gap[:, None]).sum(axis=0)
        Gs = G / gap[:, None]
        hess = np.tensordot(1.0 / gap, self.StS, axes=1) + Gs.T @ Gs
        dl = x[self.has_lo] - self.lo[self.has_lo]
        dh = self.hi[self.has_hi] - x[self.has_hi]
        grad[self.has_lo] -= 1.0 / dl
        grad[self.has_hi] += 1.0 / dh
        diag = np.zeros_like(x)
        diag[self.has_lo] += dl**-2
        diag[self.has_hi] += dh**-2
        hess[np.diag_indices_from(hess)] += diag
        return grad, hess, gap, Gs


def _newton_solve(Hm, g):
    try:
        return np.linalg.solve(Hm, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(Hm, g, rcond=None)[0]


def _start_point(p: QclpProblem):
    x = np.zeros(p.n)
    both = np.isfinite(p.lo) & np.isfinite(p.hi)
    x[both] = 0.5 * (p.lo[both] + p.hi[both])
    only_lo = np.isfinite(p.lo) & ~both
    only_hi = np.isfinite(p.hi) & ~both
    x[only_lo] = np.maximum(x[only_lo], p.lo[only_lo] + 1.0)
    x[only_hi] = np.minimum(x[only_hi], p.hi[only_hi] - 1.0)
    # prefer the origin when it is interior to the box
    inner = (p.lo < 0) & (p.hi > 0)
    x[inner] = 0.0
    return x


def _phase_one(p: QclpProblem, bar: _Barrier, tol: float, max_iter: int):
    """Minimize s subject to f_i(x) <= s over the box interior.

    Returns (x, s, iterations). Stops early once s < 0.
    """
    x = _start_point(p)
    if len(bar.St) == 0:
        return x, -1.0, 0
    f, _ = bar.f(x)
    s = float(max(f.max(), 0.0) + 1.0)
    if f.max() < -1e-3:
        return x, float(f.max()), 0
    t, it = 1.0, 0
    n = p.n
    while it < max_iter:
        for _ in range(50):
            it += 1
            grad, hess, gap, Gs = bar.derivs(x, s)
            # variables (x, s): objective t*s + barrier
            gs = t - np.sum(1.0 / gap)
            H = np.zeros((n + 1, n + 1))
            H[:n, :n] = hess
            H[:n, n] = H[n, :n] = -Gs.T @ (1.0 / gap)
            H[n, n] = np.sum(gap**-2)
            g = np.concatenate([grad, [gs]])
            step = -_newton_solve(H, g)
            lam2 = -g @ step
            obj = t * s + bar.value(x, s)
            a = 1.0
            while a > 1e-14:
                xn, sn = x + a * step[:n], s + a * step[n]
                val = bar.value(xn, sn)
                if np.isfinite(val) and t * sn + val <= obj - 0.25 * a * lam2:
                    break
                a *= 0.5
            x, s = xn, sn
            f, _ = bar.f(x)
            if f.max() < 0 and bar.inside(x):
                return x, float(f.max()), it
            if lam2 / 2 < 1e-12 or a <= 1e-14:
                break
        if bar.m / t < tol:
            break
        t *= 10.0
    f, _ = bar.f(x)
    return x, float(f.max()), it


def feasible(p: QclpProblem, tol: float = 1e-9, max_iter: int = 500):
    """(True, witness) if the constraints have a strictly feasible point,
    otherwise (False, certificate) with the phase-I optimum (> 0)."""
    bar = _Barrier(p)
    x, s, _ = _phase_one(p, bar, tol, max_iter)
    if s < 0 and bar.inside(x):
        return True, x
    return False, s


def solve(p: QclpProblem, tol: float = 1e-8, max_iter: int = 500, unbounded_norm: float = 1e10) -> QclpSolution:
    """Barrier path following; stops once the duality-gap bound is below
    ``tol * max(1, |objective|)`` in units of the normalized objective."""
    bar = _Barrier(p)
    x, s, it = _phase_one(p, bar, 1e-9, max_iter)
    if not (s < 0 and bar.inside(x)):
        return QclpSolution("infeasible", x, float(p.c @ x), p.violation(x), certificate=s, iterations=it)
    cn = np.linalg.norm(p.c)
    if cn == 0:
        x0 = np.zeros(p.n)
        x = x0 if bar.inside(x0) else x
        return QclpSolution("optimal", x, 0.0, p.violation(x), iterations=it)
    c = p.c / cn
    # scale the first barrier weight so the initial Newton decrement is O(1);
    # a fixed t = 1 crawls through damped steps on long, thin feasible sets
    _, hess, _, _ = bar.derivs(x)
    curv = float(c @ _newton_solve(hess, c))
    t = float(np.clip(1.0 / np.sqrt(curv), 1e-8, 1e8)) if np.isfinite(curv) and curv > 0 else 1.0
    status = "iteration_limit"
    while it < max_iter:
        for _ in range(100):
            it += 1
            grad, hess, _, _ = bar.derivs(x)
            g = -t * c + grad
            step = -_newton_solve(hess, g)
            if np.linalg.norm(hess @ step + g) > 1e-6 * max(1.0, np.linalg.norm(g)):
                # the objective increases along a direction of zero barrier curvature
                return QclpSolution("unbounded", x, np.inf, p.violation(x), iterations=it)
            lam2 = -g @ step
            if lam2 / 2 < 1e-12:
                break
            obj = -t * (c @ x) + bar.value(x)
            a = 1.0
            while a > 1e-14:
                xn = x + a * step
                val = bar.value(xn)
                if np.isfinite(val) and -t * (c @ xn) + val <= obj - 0.25 * a * lam2:
                    break
                a *= 0.5
            if a <= 1e-14:
                break
            x = xn
            if np.linalg.norm(x) > unbounded_norm:
                return QclpSolution("unbounded", x, float(p.c @ x), p.violation(x), iterations=it)
            if it >= max_iter:
                break
        if bar.m / t < tol * max(1.0, abs(c @ x)):  # duality gap, relative for large objectives
            status = "optimal"
            break
        t *= 10.0
    return QclpSolution(status, x, float(p.c @ x), p.violation(x), iterations=it)
