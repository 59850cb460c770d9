"""Quasi-static PCC voltage control of a wind farm behind a Thevenin grid.

Each time step solves the algebraic power flow of the farm extended by the
grid impedance; there are no electromechanical dynamics.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from windcap.capacity import NodalCapacity
from windcap.netmodel import BranchSpec, NodeSpec, RadialNetwork, build_matrices
from windcap.powerflow import ADMISSIBILITY_EPS, solve

log = logging.getLogger(__name__)

SETTLE_TOL = 1e-6
SETTLE_STEPS = 10


class ControlError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 5.0
    ki: float = 25.0
    dt: float = 0.1
    v_ref: float = 1.06
    sat_lo: float = -np.inf
    sat_hi: float = np.inf
    anti_windup: float = 5.0
    mode: str = "cia"
    saturation: str = "nodal_sum"   # or "head_range"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.sat_lo > self.sat_hi:
            raise ValueError("sat_lo must not exceed sat_hi")
        if min(self.kp, self.ki, self.anti_windup) < 0:
            raise ValueError("gains must be nonnegative")
        if self.mode not in ("cia", "grid_agnostic"):
            raise ValueError(f"unknown mode {self.mode}")
        if self.saturation not in ("nodal_sum", "head_range"):
            raise ValueError(f"unknown saturation rule {self.saturation}")

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown controller fields: {sorted(unknown)}")
        kw = dict(d)
        for k in ("sat_lo", "sat_hi"):
            if kw.get(k) is None and k in kw:
                kw.pop(k)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ControllerConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("sat_lo", "sat_hi"):
            if not np.isfinite(d[k]):
                d[k] = None
        return d


@dataclass(frozen=True)
class TheveninGrid:
    """Source magnitude schedule (piecewise linear, pu) behind ``r_th + j x_th``."""

    times: tuple[float, ...] = (0.0, 4.95, 5.0, 10.0, 70.0, 100.0)
    values: tuple[float, ...] = (1.0, 1.0, 0.94, 0.94, 1.0, 1.0)
    r_th: float = 0.01
    x_th: float = 0.05

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.values) or len(t) == 0:
            raise ValueError("times and values must be nonempty and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("profile times must be strictly increasing")
        if np.any(np.asarray(self.values) <= 0):
            raise ValueError("grid voltage must stay positive")
        if self.r_th < 0 or (self.r_th == 0 and self.x_th == 0):
            raise ValueError("invalid Thevenin impedance")

    @classmethod
    def constant(cls, value: float, r_th: float = 0.01, x_th: float = 0.05) -> "TheveninGrid":
        return cls((0.0,), (float(value),), r_th, x_th)

    def v_grid(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))


@dataclass
class PIState:
    integ: float = 0.0


def pi_step(state: PIState, v_pcc_meas: float, cfg: ControllerConfig) -> tuple[float, PIState, bool]:
    """One discrete PI update with clamping and back-calculation anti-windup.

    Returns ``(q_tg_ref, new_state, saturated)``.
    """
    e = cfg.v_ref - v_pcc_meas
    u = cfg.kp * e + state.integ
    q_ref = min(max(u, cfg.sat_lo), cfg.sat_hi)
    integ = state.integ + cfg.dt * (cfg.ki * e + cfg.anti_windup * (q_ref - u))
    return q_ref, PIState(integ), q_ref != u


def disaggregate(q_tg_ref: float, caps: NodalCapacity) -> np.ndarray:
    """Split a total reference across nodes in proportion to their capacities."""
    if q_tg_ref == 0:
        return np.zeros_like(caps.q_plus)
    side = caps.q_plus if q_tg_ref > 0 else caps.q_minus
    total = side.sum()
    if total == 0:
        raise ControlError("no headroom: zero capacity on the requested side")
    return side / total * q_tg_ref


def device_capacity(net: RadialNetwork) -> NodalCapacity:
    n = net.n
    return NodalCapacity(net.ids, net.q_min.copy(), net.q_max.copy(), ["device"] * n, ["device"] * n)


def augment(net: RadialNetwork, grid: TheveninGrid) -> tuple[RadialNetwork, np.ndarray, int]:
    """Farm network with the grid impedance inserted above its head.

    The old head becomes an ordinary node (the PCC); the new head is the grid
    source.  Returns the augmented network, the positions of the farm nodes in
    it and the position of the PCC.
    """
    src = min(min(int(i) for i in net.ids), net.head) - 1
    pcc = NodeSpec(net.head, 0.0, 0.0, 0.0, 1e-6, 1e6)
    nodes = (pcc,) + tuple(net.nodes)
    branches = (BranchSpec(src, net.head, grid.r_th, grid.x_th),) + tuple(net.branches)
    aug = RadialNetwork.from_specs(nodes, branches, v0=1.0, base_mva=net.base_mva, head=src, name=net.name)
    pos = np.array([aug.index_of(int(i)) for i in net.ids], dtype=int)
    return aug, pos, aug.index_of(net.head)


@dataclass
class SimTrace:
    ids: np.ndarray
    t: list = field(default_factory=list)
    v_grid: list = field(default_factory=list)
    v_pcc: list = field(default_factory=list)
    q_tg_ref: list = field(default_factory=list)
    q_head: list = field(default_factory=list)
    q: list = field(default_factory=list)
    v_nodes: list = field(default_factory=list)
    integ: list = field(default_factory=list)
    saturated: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    truncated: bool = False
    diagnostic: str = ""

    def __len__(self):
        return len(self.t)

    @property
    def settled(self) -> np.ndarray:
        """Steps preceded by ``SETTLE_STEPS`` steps with PCC movement below ``SETTLE_TOL``."""
        v = np.asarray(self.v_pcc)
        out = np.zeros(len(v), dtype=bool)
        if len(v) <= SETTLE_STEPS:
            return out
        small = np.abs(np.diff(v)) < SETTLE_TOL
        for k in range(SETTLE_STEPS, len(v)):
            out[k] = bool(small[k - SETTLE_STEPS:k].all())
        return out

    @property
    def steady_violations(self) -> int:
        return int(np.sum(np.asarray(self.violation, dtype=bool) & self.settled))

    @property
    def transient_violations(self) -> int:
        return int(np.sum(np.asarray(self.violation, dtype=bool) & ~self.settled))

    def write_csv(self, path, base_mva: float = 1.0):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "v_grid_pu", "v_pcc_pu", "q_tg_ref_mvar", "q_head_mvar", "min_node_v_pu",
                        "max_node_v_pu", "saturated", "violation"] + [f"q_{int(i)}_mvar" for i in self.ids])
            for k in range(len(self.t)):
                vn = self.v_nodes[k]
                row = [self.t[k], self.v_grid[k], self.v_pcc[k], self.q_tg_ref[k] * base_mva,
                       self.q_head[k] * base_mva, vn.min(), vn.max()]
                w.writerow([f"{x:.9g}" for x in row] + [int(self.saturated[k]), int(self.violation[k])]
                           + [f"{x * base_mva:.9g}" for x in self.q[k]])


def saturation_bounds(caps: NodalCapacity, cfg: ControllerConfig, q_head_range=None) -> tuple[float, float]:
    if cfg.saturation == "head_range" and q_head_range is not None:
        return float(q_head_range[0]), float(q_head_range[1])
    return float(caps.q_minus.sum()), float(caps.q_plus.sum())


def simulate(net: RadialNetwork, p, caps: NodalCapacity | None, grid: TheveninGrid,
             cfg: ControllerConfig, t_end: float = 100.0, q_head_range=None) -> SimTrace:
    """Closed-loop quasi-static simulation.

    In ``cia`` mode ``caps`` are the certified nodal capacities; in
    ``grid_agnostic`` mode the device limits are used (``caps`` is ignored).
    Saturation bounds follow ``cfg.saturation`` unless ``cfg`` sets finite ones.
    """
    p = net.p if p is None else np.asarray(p, dtype=float)
    if cfg.mode == "grid_agnostic" or caps is None:
        caps = device_capacity(net)
    lo, hi = saturation_bounds(caps, cfg, q_head_range)
    lo = cfg.sat_lo if np.isfinite(cfg.sat_lo) else lo
    hi = cfg.sat_hi if np.isfinite(cfg.sat_hi) else hi
    cfg = replace(cfg, sat_lo=lo, sat_hi=hi)

    aug, pos, ipcc = augment(net, grid)
    head_rows = np.flatnonzero(aug.parent == ipcc)
    p_aug = np.zeros(aug.n)
    p_aug[pos] = p
    vmin, vmax = net.v_min, net.v_max
    steps = int(round(t_end / cfg.dt))
    trace = SimTrace(ids=net.ids.copy())
    state = PIState()
    v_meas = None
    l_prev = None
    for k in range(steps + 1):
        t = k * cfg.dt
        vg = grid.v_grid(t)
        if v_meas is None:
            q_ref, sat = 0.0, False
            q = np.zeros(net.n)
        else:
            q_ref, state, sat = pi_step(state, v_meas, cfg)
            q = disaggregate(q_ref, caps)
            if cfg.mode == "cia" and (np.any(q > caps.q_plus + 1e-12) or np.any(q < caps.q_minus - 1e-12)):
                raise ControlError("disaggregated command left the nodal capacity box")
        q_aug = np.zeros(aug.n)
        q_aug[pos] = q
        sol = solve(aug, p_aug, q_aug, v0=vg**2, l_init=l_prev)
        if not sol.converged:
            trace.truncated = True
            trace.diagnostic = f"power flow did not converge at t={t:.3f} s"
            log.warning(trace.diagnostic)
            break
        l_prev = sol.l
        v_far = sol.v[pos]
        viol = bool(np.any(v_far < vmin - ADMISSIBILITY_EPS) or np.any(v_far > vmax + ADMISSIBILITY_EPS))
        v_pcc = float(np.sqrt(sol.v[ipcc]))
        trace.t.append(t)
        trace.v_grid.append(vg)
        trace.v_pcc.append(v_pcc)
        trace.q_tg_ref.append(q_ref)
        trace.q_head.append(float(sol.Q[head_rows].sum()))
        trace.q.append(q.copy())
        trace.v_nodes.append(np.sqrt(v_far))
        trace.integ.append(state.integ)
        trace.saturated.append(sat)
        trace.violation.append(viol)
        v_meas = v_pcc
    return trace


def rmse(trace: SimTrace, v_ref: float) -> float:
    if len(trace) == 0:
        raise ValueError("empty trace")
    d = np.asarray(trace.v_pcc) - v_ref
    return float(np.sqrt(np.mean(d * d)))


# --- decentralized baseline ----------------------------------------------------

@dataclass
class DecentralizedState:
    q: np.ndarray
    q_head: float
    v: np.ndarray
    overridden: np.ndarray
    converged: bool
    iterations: int


def decentralized_steady_state(net: RadialNetwork, p, q_broadcast, tol: float = 1e-8,
                               max_iter: int = 200, v0=None) -> DecentralizedState:
    """Fixed point of broadcast tracking with a local proportional voltage clamp.

    Every node follows its broadcast reference; a node whose terminal voltage
    leaves its limits moves its own injection by a gain times the excursion.
    The gain is the inverse of the node's own voltage sensitivity, a quantity
    each turbine can estimate locally.
    """
    p = net.p if p is None else np.asarray(p, dtype=float)
    b = np.clip(np.broadcast_to(np.asarray(q_broadcast, dtype=float), (net.n,)), net.q_min, net.q_max)
    mq = build_matrices(net).M_q
    gain = 1.0 / np.maximum(mq.sum(axis=1), 1e-12)
    up = b >= 0
    hi = np.where(up, b, net.q_max)
    lo = np.where(up, net.q_min, b)
    q = b.copy()
    converged = False
    it = 0
    sol = solve(net, p, q, v0)
    for it in range(1, max_iter + 1):
        if not sol.converged:
            break
        v = sol.v
        move = np.where(up, net.v_max - v, net.v_min - v)
        q_new = np.clip(q + gain * move, lo, hi)
        dq = float(np.max(np.abs(q_new - q))) if net.n else 0.0
        q = q_new
        sol = solve(net, p, q, v0, l_init=sol.l)
        if dq < tol:
            converged = True
            break
    if not sol.converged:
        return DecentralizedState(q, float("nan"), sol.v, q != b, False, it)
    return DecentralizedState(q, sol.q_head, sol.v, np.abs(q - b) > 1e-9, converged, it)


def decentralized_sim(net: RadialNetwork, p, q_broadcast_profile, dt: float = 1.0) -> SimTrace:
    """Quasi-static run of the decentralized scheme over a broadcast schedule (pu per node)."""
    p = net.p if p is None else np.asarray(p, dtype=float)
    trace = SimTrace(ids=net.ids.copy())
    vg = float(np.sqrt(net.v0))
    for k, qb in enumerate(q_broadcast_profile):
        st = decentralized_steady_state(net, p, qb)
        if not np.isfinite(st.q_head):
            trace.truncated = True
            trace.diagnostic = f"power flow did not converge at step {k}"
            break
        vm = np.sqrt(st.v)
        trace.t.append(k * dt)
        trace.v_grid.append(vg)
        trace.v_pcc.append(vg)
        trace.q_tg_ref.append(float(np.sum(np.broadcast_to(qb, (net.n,)))))
        trace.q_head.append(st.q_head)
        trace.q.append(st.q)
        trace.v_nodes.append(vm)
        trace.integ.append(0.0)
        trace.saturated.append(bool(st.overridden.any()))
        trace.violation.append(not st.converged)
    return trace
