"""Nonlinear DistFlow power flow for radial networks.

This is the ground-truth oracle used to verify every dispatch produced by the
convex machinery.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from windcap._kernels import bfs_sweep
from windcap.netmodel import RadialNetwork

CONV_TOL = 1e-10
MAX_ITER = 100
ADMISSIBILITY_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    v: np.ndarray
    l: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    q_head: float
    p_head: float
    converged: bool
    iterations: int
    residual: float
    v0: float
    p: np.ndarray
    q: np.ndarray


def branch_state(net: RadialNetwork, p, q, l, v0):
    """Flows and voltages implied by given branch currents (one backward/forward pass)."""
    parent = net.parent
    r, x = net.r, net.x
    P = np.array(p, dtype=float)
    Q = np.array(q, dtype=float)
    for k in range(net.n - 1, -1, -1):
        j = parent[k]
        if j >= 0:
            P[j] += P[k] - r[k] * l[k]
            Q[j] += Q[k] - x[k] * l[k]
    v = np.empty(net.n)
    for k in range(net.n):
        vp = v0 if parent[k] < 0 else v[parent[k]]
        v[k] = vp + 2.0 * (r[k] * P[k] + x[k] * Q[k]) - (r[k] ** 2 + x[k] ** 2) * l[k]
    return P, Q, v


def residuals(net: RadialNetwork, p, q, v0, v, l, P, Q) -> np.ndarray:
    """Per-equation mismatch of the DistFlow equations, stacked (voltage, P, Q, current)."""
    parent = net.parent
    r, x = net.r, net.x
    vpar = np.where(parent < 0, v0, v[np.maximum(parent, 0)])
    res_v = v - (vpar + 2 * r * P + 2 * x * Q - (r**2 + x**2) * l)
    child_P = np.zeros(net.n)
    child_Q = np.zeros(net.n)
    has = parent >= 0
    np.add.at(child_P, parent[has], (P - r * l)[has])
    np.add.at(child_Q, parent[has], (Q - x * l)[has])
    res_P = P - (np.asarray(p) + child_P)
    res_Q = Q - (np.asarray(q) + child_Q)
    res_l = l * v - (P**2 + Q**2)
    return np.concatenate([res_v, res_P, res_Q, res_l])


def solve(net: RadialNetwork, p=None, q=None, v0=None, l_init=None,
          tol: float = CONV_TOL, max_iter: int = MAX_ITER) -> PowerFlowSolution:
    """Solve the DistFlow equations by backward/forward sweep.

    Defaults: ``p`` from the network, ``q = 0``, ``v0`` from the network and a
    flat start ``l = 0``.  Non-convergence is reported, not raised.
    """
    n = net.n
    p = net.p if p is None else np.asarray(p, dtype=float)
    q = np.zeros(n) if q is None else np.asarray(q, dtype=float)
    v0 = net.v0 if v0 is None else float(v0)
    if p.shape != (n,) or q.shape != (n,):
        raise ValueError(f"injection vectors must have length {n}")
    if v0 <= 0:
        raise ValueError("v0 must be positive")
    l0 = np.zeros(n) if l_init is None else np.asarray(l_init, dtype=float)
    v, l, P, Q, iters, ok = bfs_sweep(net.parent, net.r, net.x, p, q, v0, l0, tol, max_iter)
    if ok:
        # refresh flows/voltages so that the linear equations hold exactly at the returned l
        P, Q, v = branch_state(net, p, q, l, v0)
        ok = bool(np.all(v > 0))
    if ok:
        res = float(np.max(np.abs(residuals(net, p, q, v0, v, l, P, Q)))) if n else 0.0
    else:
        res = float("inf")
    head = net.head_branches
    return PowerFlowSolution(
        v=v, l=l, P=P, Q=Q,
        q_head=float(np.sum(Q[head])) if ok else float("nan"),
        p_head=float(np.sum(P[head])) if ok else float("nan"),
        converged=bool(ok), iterations=int(iters), residual=res, v0=v0,
        p=p.copy(), q=q.copy(),
    )


@dataclass(frozen=True)
class Violation:
    kind: str  # v_low, v_high, l_high, non_convergence
    element: int
    magnitude: float


@dataclass(frozen=True, eq=False)
class AdmissibilityVerdict:
    admissible: bool
    violations: tuple[Violation, ...] = ()
    solution: PowerFlowSolution | None = field(default=None, repr=False)

    @property
    def worst(self) -> Violation | None:
        if not self.violations:
            return None
        return max(self.violations, key=lambda w: w.magnitude)


def verdict_of(net: RadialNetwork, sol: PowerFlowSolution, eps: float = ADMISSIBILITY_EPS) -> AdmissibilityVerdict:
    if not sol.converged:
        return AdmissibilityVerdict(False, (Violation("non_convergence", -1, float("inf")),), sol)
    out = []
    ids = net.ids
    lo = net.v_min - sol.v
    hi = sol.v - net.v_max
    lh = sol.l - net.l_max
    for k in np.flatnonzero(lo > eps):
        out.append(Violation("v_low", int(ids[k]), float(lo[k])))
    for k in np.flatnonzero(hi > eps):
        out.append(Violation("v_high", int(ids[k]), float(hi[k])))
    for k in np.flatnonzero(lh > eps):
        out.append(Violation("l_high", int(ids[k]), float(lh[k])))
    return AdmissibilityVerdict(not out, tuple(out), sol)


def check_admissible(net: RadialNetwork, p=None, q=None, v0=None, eps: float = ADMISSIBILITY_EPS) -> AdmissibilityVerdict:
    """Run the oracle and test voltage and current limits with slack ``eps``."""
    return verdict_of(net, solve(net, p, q, v0), eps)


@dataclass(frozen=True, eq=False)
class SweepResult:
    node_a: int
    node_b: int
    qa: np.ndarray
    qb: np.ndarray
    admissible: np.ndarray  # shape (len(qa), len(qb))
    worst_kind: np.ndarray
    worst_magnitude: np.ndarray

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["q_a_pu", "q_b_pu", "admissible", "worst_kind", "worst_magnitude"])
            for i, a in enumerate(self.qa):
                for j, b in enumerate(self.qb):
                    w.writerow([f"{a:.9g}", f"{b:.9g}", int(self.admissible[i, j]),
                                self.worst_kind[i, j], f"{self.worst_magnitude[i, j]:.9g}"])

    def contains_box(self, lo_a, hi_a, lo_b, hi_b) -> bool:
        """True when every grid point inside the rectangle is admissible."""
        ia = (self.qa >= lo_a - 1e-12) & (self.qa <= hi_a + 1e-12)
        ib = (self.qb >= lo_b - 1e-12) & (self.qb <= hi_b + 1e-12)
        return bool(np.all(self.admissible[np.ix_(ia, ib)]))

    def nonconvex_witness(self):
        """Admissible grid points ``a``, ``b`` whose midpoint (a grid point) is inadmissible."""
        adm = self.admissible
        na, nb = adm.shape
        for da in range(0, (na - 1) // 2 + 1):
            for db in range(-((nb - 1) // 2), (nb - 1) // 2 + 1):
                if da == 0 and db <= 0:
                    continue
                ia = slice(da, na - da)
                jb = slice(abs(db), nb - abs(db))
                mid = adm[ia, jb]
                lo = adm[0:na - 2 * da, (abs(db) - db):(nb - abs(db) - db)]
                hi = adm[2 * da:na, (abs(db) + db):(nb - abs(db) + db)]
                hit = lo & hi & ~mid
                if hit.any():
                    i, j = (int(v) for v in np.argwhere(hit)[0])
                    m = (i + da, j + abs(db))
                    return (m[0] - da, m[1] - db), (m[0] + da, m[1] + db), m
        return None


def _grid(lo, hi, steps):
    if lo == hi:
        return np.array([float(lo)])
    return np.linspace(lo, hi, steps)


def sweep_2d(net: RadialNetwork, node_a: int, node_b: int, q_range_a: Sequence[float],
             q_range_b: Sequence[float], steps: int = 81, q_base=None, p=None) -> SweepResult:
    """Dense admissibility grid over the reactive injections of two nodes."""
    if steps < 2:
        raise ValueError("steps must be at least 2")
    ia, ib = net.index_of(node_a), net.index_of(node_b)
    if ia == ib:
        raise ValueError("node_a and node_b must differ")
    qa = _grid(*q_range_a, steps)
    qb = _grid(*q_range_b, steps)
    base = np.zeros(net.n) if q_base is None else np.asarray(q_base, dtype=float)
    adm = np.zeros((len(qa), len(qb)), dtype=bool)
    kind = np.full((len(qa), len(qb)), "", dtype=object)
    mag = np.zeros((len(qa), len(qb)))
    for i, a in enumerate(qa):
        for j, b in enumerate(qb):
            q = base.copy()
            q[ia] = a
            q[ib] = b
            verdict = check_admissible(net, p, q)
            adm[i, j] = verdict.admissible
            worst = verdict.worst
            if worst is not None:
                kind[i, j] = worst.kind
                mag[i, j] = worst.magnitude
    return SweepResult(node_a, node_b, qa, qb, adm, kind, mag)
