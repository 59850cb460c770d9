"""Convex inner approximation of the DistFlow equations.

Branch currents are replaced by an envelope ``[l_lb, l_ub]`` built from a
second-order expansion of ``l = (P^2 + Q^2) / v`` around an operating point.
Interval bounds on flows and voltages are affine in the injections and in the
envelope, so the whole block is a second-order cone representable set.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from windcap.conic import Affine, ConicProgram
from windcap.netmodel import NetworkMatrices, RadialNetwork, build_matrices
from windcap.powerflow import PowerFlowSolution

CORNERS = tuple(itertools.product((0, 1), repeat=3))


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    P: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    l: np.ndarray
    q: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.v <= 0):
            raise ValueError("operating point voltages must be positive")


def operating_point_from_pf(sol: PowerFlowSolution) -> OperatingPoint:
    if not sol.converged:
        raise ValueError("operating point requires a converged power flow")
    # recompute l from the flows so the point is exactly on the current equation
    l = (sol.P**2 + sol.Q**2) / sol.v
    return OperatingPoint(P=sol.P.copy(), Q=sol.Q.copy(), v=sol.v.copy(), l=l, q=sol.q.copy())


@dataclass(frozen=True, eq=False)
class QuadraticModel:
    l0: np.ndarray    # (N,)
    x0: np.ndarray    # (N, 3) expansion point (P, Q, v)
    J: np.ndarray     # (N, 3)
    He: np.ndarray    # (N, 3, 3)
    L: np.ndarray     # (N, 3, 2) with He = L L^T

    @property
    def J_pos(self) -> np.ndarray:
        return np.where(self.J >= 0, self.J, 0.0)

    @property
    def J_neg(self) -> np.ndarray:
        return self.J - self.J_pos


def build_quadratic_model(op: OperatingPoint) -> QuadraticModel:
    """Closed-form gradient and Hessian of ``(P^2 + Q^2) / v`` at each branch.

    The Hessian is ``(2 / v) (a1 a1^T + a2 a2^T)`` with ``a1 = (1, 0, -P/v)`` and
    ``a2 = (0, 1, -Q/v)``, which gives the rank-2 factor directly.
    """
    P, Q, v = op.P, op.Q, op.v
    n = P.shape[0]
    s = P**2 + Q**2
    J = np.column_stack([2 * P / v, 2 * Q / v, -s / v**2])
    He = np.zeros((n, 3, 3))
    He[:, 0, 0] = 2 / v
    He[:, 1, 1] = 2 / v
    He[:, 0, 2] = He[:, 2, 0] = -2 * P / v**2
    He[:, 1, 2] = He[:, 2, 1] = -2 * Q / v**2
    He[:, 2, 2] = 2 * s / v**3
    scale = np.sqrt(2 / v)
    L = np.zeros((n, 3, 2))
    L[:, 0, 0] = scale
    L[:, 1, 1] = scale
    L[:, 2, 0] = -scale * P / v
    L[:, 2, 1] = -scale * Q / v
    return QuadraticModel(l0=s / v, x0=np.column_stack([P, Q, v]), J=J, He=He, L=L)


def quad_current(model: QuadraticModel, branch: int, P, Q, v):
    """Second-order approximation of the squared current on one branch."""
    d = np.stack(np.broadcast_arrays(np.asarray(P, float), np.asarray(Q, float), np.asarray(v, float)), axis=-1)
    d = d - model.x0[branch]
    lin = d @ model.J[branch]
    quad = np.einsum("...i,ij,...j->...", d, model.He[branch], d)
    return model.l0[branch] + lin + 0.5 * quad


def exact_current(P, Q, v):
    return (np.asarray(P) ** 2 + np.asarray(Q) ** 2) / np.asarray(v)


@dataclass
class CiaBlock:
    """Symbolic interval bounds and envelope constraints over a conic program."""

    mode: str
    n: int
    q_up: Affine
    q_lo: Affine
    l_lb: Affine
    l_ub: Affine
    P_p: Affine
    P_m: Affine
    Q_p: Affine
    Q_m: Affine
    V_p: Affine
    V_m: Affine
    prog: ConicProgram
    model: QuadraticModel
    mats: NetworkMatrices

    def q_head_low(self, head_mask) -> Affine:
        """Guaranteed lower bound of the head reactive flow at the upper dispatch."""
        rows = np.flatnonzero(head_mask)
        m = self.mats
        e = m.C @ self.q_up - m.D_Xp @ self.l_ub - m.D_Xm @ self.l_lb
        return e[rows].sum()

    def q_head_high(self, head_mask) -> Affine:
        """Guaranteed upper bound of the head reactive flow at the lower dispatch."""
        rows = np.flatnonzero(head_mask)
        m = self.mats
        e = m.C @ self.q_lo - m.D_Xp @ self.l_lb - m.D_Xm @ self.l_ub
        return e[rows].sum()

    def dump(self) -> str:
        return f"CiaBlock(mode={self.mode}, n={self.n})\n" + self.prog.describe()


def box_mode_admissible(mats: NetworkMatrices) -> bool:
    """Box coupling is sound when the injection-to-bound maps are entrywise monotone."""
    return bool(np.all(mats.M_q >= -1e-14) and np.all(mats.C >= 0))


def assemble_bounds(mats: NetworkMatrices, model: QuadraticModel, p, v0: float,
                    mode: str = "box", prog: ConicProgram | None = None) -> CiaBlock:
    """Create decision variables and the envelope/bound rows.

    In ``single_dispatch`` mode a single injection vector ``q`` drives both the
    upper and the lower bounds.  In ``box`` mode upper bounds are driven by
    ``q_plus`` and lower bounds by ``q_minus``, so any dispatch between the two
    stays inside the bounds.
    """
    n = mats.C.shape[0]
    p = np.asarray(p, dtype=float)
    if p.shape != (n,) or model.l0.shape != (n,):
        raise ValueError("dimension mismatch between matrices, model and injections")
    if mode not in ("box", "single_dispatch"):
        raise ValueError(f"unknown mode {mode}")
    if mode == "box" and not box_mode_admissible(mats):
        raise ValueError("box mode requires a monotone reactive sensitivity matrix (inductive network)")
    prog = ConicProgram() if prog is None else prog
    if mode == "box":
        q_lo = prog.add_var("q_minus", n)
        q_up = prog.add_var("q_plus", n)
    else:
        q_up = q_lo = prog.add_var("q", n)
    llb = prog.add_var("l_lb", n)
    lub = prog.add_var("l_ub", n)
    Pp, Pm = prog.add_var("P_plus", n), prog.add_var("P_minus", n)
    Qp, Qm = prog.add_var("Q_plus", n), prog.add_var("Q_minus", n)
    Vp, Vm = prog.add_var("V_plus", n), prog.add_var("V_minus", n)

    m = mats
    Cp = m.C @ p
    Vbase = v0 + m.M_p @ p
    prog.add_eq("P_plus", Pp - (Cp - m.D_R @ llb))
    prog.add_eq("P_minus", Pm - (Cp - m.D_R @ lub))
    prog.add_eq("Q_plus", Qp - (m.C @ q_up - m.D_Xp @ llb - m.D_Xm @ lub))
    prog.add_eq("Q_minus", Qm - (m.C @ q_lo - m.D_Xp @ lub - m.D_Xm @ llb))
    prog.add_eq("V_plus", Vp - (Vbase + m.M_q @ q_up - m.H_p @ llb - m.H_m @ lub))
    prog.add_eq("V_minus", Vm - (Vbase + m.M_q @ q_lo - m.H_p @ lub - m.H_m @ llb))

    x0 = model.x0
    d_plus = (Pp - x0[:, 0], Qp - x0[:, 1], Vp - x0[:, 2])
    d_minus = (Pm - x0[:, 0], Qm - x0[:, 1], Vm - x0[:, 2])
    Jp, Jm = model.J_pos, model.J_neg

    def lin(J, d):
        return d[0].scale_rows(J[:, 0]) + d[1].scale_rows(J[:, 1]) + d[2].scale_rows(J[:, 2])

    # lower envelope: first-order underestimator minimised over the interval box
    prog.add_eq("l_lb", llb - (model.l0 + lin(Jp, d_minus) + lin(Jm, d_plus)))
    # upper envelope: max{2 |J' delta|, psi} with the linear term at its box maximum
    jmax = lin(Jp, d_plus) + lin(Jm, d_minus)
    prog.add_le("l_ub:lin+", model.l0 + 2.0 * jmax - lub)
    prog.add_le("l_ub:lin-", model.l0 - 2.0 * jmax - lub)
    half = Affine.constant([0.5])
    for k in range(n):
        Lk = model.L[k]
        for corner in CORNERS:
            parts = [(d_plus if c == 0 else d_minus)[i][[k]] for i, c in enumerate(corner)]
            delta = Affine.stack(parts)
            prog.add_rotated_cone(lub[[k]] - model.l0[k], half, Lk.T @ delta,
                                  label=f"psi[{k}]{corner}")
    return CiaBlock(mode, n, q_up, q_lo, llb, lub, Pp, Pm, Qp, Qm, Vp, Vm, prog, model, mats)


def add_network_limits(block: CiaBlock, net: RadialNetwork):
    """Voltage, current and device limits on the bound expressions."""
    prog = block.prog
    prog.add_le("v_min", net.v_min - block.V_m)
    prog.add_le("v_max", block.V_p - net.v_max)
    prog.add_le("l_max", block.l_ub - net.l_max)


def block_for(net: RadialNetwork, op: OperatingPoint, mode: str = "box", p=None) -> CiaBlock:
    mats = build_matrices(net)
    model = build_quadratic_model(op)
    block = assemble_bounds(mats, model, net.p if p is None else p, net.v0, mode)
    add_network_limits(block, net)
    return block
