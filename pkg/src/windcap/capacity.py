"""Nodal reactive capacities, the relaxation baseline and derived studies."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from windcap.cia import CiaBlock, OperatingPoint, block_for, operating_point_from_pf
from windcap.conic import Affine, ConicProgram, solve_conic
from windcap.netmodel import RadialNetwork, build_matrices
from windcap.powerflow import check_admissible, solve

log = logging.getLogger(__name__)

DEVICE_TOL = 1e-6
BIND_TOL = 1e-6


class CapacityError(RuntimeError):
    """Raised when a capacity program is infeasible or the solver fails."""

    def __init__(self, message: str, kind: str = "infeasible"):
        super().__init__(message)
        self.kind = kind


@dataclass
class NodalCapacity:
    ids: np.ndarray
    q_minus: np.ndarray
    q_plus: np.ndarray
    tags_minus: list[str]
    tags_plus: list[str]

    def __post_init__(self):
        if np.any(self.q_minus > 1e-9) or np.any(self.q_plus < -1e-9):
            raise ValueError("nodal capacity must satisfy q_minus <= 0 <= q_plus")

    @property
    def binding(self) -> str:
        """Dominant limit of the upper capacity: 'voltage', 'current' or 'device'."""
        for kind in ("voltage", "current"):
            if kind in self.tags_plus:
                return kind
        return "device"


@dataclass
class IterationRecord:
    iteration: int
    q_head_range: tuple[float, float]
    q_minus: np.ndarray
    q_plus: np.ndarray
    admissible: bool


@dataclass
class CapacityReport:
    nodal: NodalCapacity
    q_head_range: tuple[float, float]
    q_head_bound: tuple[float, float]
    iterations: list[IterationRecord] = field(default_factory=list)
    method: str = "cia_box"
    converged: bool = True
    warnings: list[str] = field(default_factory=list)
    envelope: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def to_dict(self, base_mva: float = 1.0) -> dict:
        nd = self.nodal
        return {
            "method": self.method,
            "converged": self.converged,
            "warnings": list(self.warnings),
            "q_head_range_mvar": [_r(v * base_mva) for v in self.q_head_range],
            "q_head_bound_mvar": [_r(v * base_mva) for v in self.q_head_bound],
            "nodes": [
                {
                    "node": int(i),
                    "q_minus_mvar": _r(a * base_mva),
                    "q_plus_mvar": _r(b * base_mva),
                    "binding_minus": tm,
                    "binding_plus": tp,
                }
                for i, a, b, tm, tp in zip(nd.ids, nd.q_minus, nd.q_plus, nd.tags_minus, nd.tags_plus)
            ],
            "iterations": [
                {
                    "iteration": it.iteration,
                    "q_head_range_mvar": [_r(v * base_mva) for v in it.q_head_range],
                    "q_minus_mvar": [_r(v * base_mva) for v in it.q_minus],
                    "q_plus_mvar": [_r(v * base_mva) for v in it.q_plus],
                    "admissible": it.admissible,
                }
                for it in self.iterations
            ],
        }

    def write(self, json_path, csv_path, base_mva: float = 1.0):
        Path(json_path).write_text(json.dumps(self.to_dict(base_mva), indent=2, sort_keys=True) + "\n")
        nd = self.nodal
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "q_minus_mvar", "q_plus_mvar", "binding_tag"])
            for i, a, b, tm, tp in zip(nd.ids, nd.q_minus, nd.q_plus, nd.tags_minus, nd.tags_plus):
                w.writerow([int(i), _fmt(a * base_mva), _fmt(b * base_mva), f"{tm}|{tp}"])


def _r(x: float) -> float:
    return float(f"{x:.9g}")


def _fmt(x: float) -> str:
    return f"{x:.9g}"


@dataclass
class DispatchResult:
    q: np.ndarray
    q_head_bound: float
    tags: list[str]
    block: CiaBlock = field(repr=False)
    objective: float = 0.0


def _default_op(net: RadialNetwork, p, q=None) -> OperatingPoint:
    sol = solve(net, p, q)
    if not sol.converged:
        raise CapacityError("power flow at the expansion point did not converge", "infeasible")
    return operating_point_from_pf(sol)


def _solve_block(block: CiaBlock):
    sol = solve_conic(block.prog)
    if sol.status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        raise CapacityError("capacity program is infeasible at this operating point", "infeasible")
    if sol.status not in ("Solved", "AlmostSolved"):
        raise CapacityError(f"conic solver failed: {sol.status}", "solver")
    return sol


def _tags(net: RadialNetwork, block: CiaBlock, sol, q, side: str) -> list[str]:
    """Per-node binding classification for one side of the capacity."""
    limit = net.q_max if side == "plus" else net.q_min
    slack = sol.slacks
    v_tight = any(np.any(slack.get(k, np.ones(1)) < BIND_TOL) for k in ("v_max", "v_min"))
    l_tight = bool(np.any(slack.get("l_max", np.ones(1)) < BIND_TOL))
    tags = []
    for k in range(net.n):
        if limit[k] == 0.0 or abs(q[k] - limit[k]) <= DEVICE_TOL:
            tags.append("device")
        elif v_tight:
            tags.append("voltage")
        elif l_tight:
            tags.append("current")
        else:
            tags.append("objective")
    return tags


def _alpha(net: RadialNetwork, alpha):
    return net.alpha if alpha is None else np.broadcast_to(np.asarray(alpha, dtype=float), (net.n,))


def solve_p1(net: RadialNetwork, p=None, op: OperatingPoint | None = None, alpha=None,
             mode: str = "single_dispatch", q_floor=None) -> DispatchResult:
    """Upper capacity: maximise the guaranteed head export plus weighted injections.

    ``q_floor`` (optional) forces the dispatch to dominate a previous iterate.
    In ``box`` mode the lower corner is pinned at zero so the whole box
    ``[0, q]`` is certified.
    """
    p = net.p if p is None else np.asarray(p, dtype=float)
    op = _default_op(net, p) if op is None else op
    a = _alpha(net, alpha)
    block = block_for(net, op, mode, p)
    lo = np.zeros(net.n) if q_floor is None else np.maximum(q_floor, 0.0)
    block.prog.add_bounds("q_plus", block.q_up, lo, net.q_max)
    if mode == "box":
        block.prog.add_bounds("q_minus", block.q_lo, 0.0, 0.0)
    head = block.q_head_low(net.head_branches)
    block.prog.objective = -head - (block.q_up.scale_rows(a)).sum()
    sol = _solve_block(block)
    q = np.clip(block.q_up.value(sol.x), 0.0, net.q_max)
    return DispatchResult(q, float(head.value(sol.x)[0]), _tags(net, block, sol, q, "plus"), block, sol.objective)


def solve_p2(net: RadialNetwork, p=None, op: OperatingPoint | None = None, alpha=None,
             mode: str = "single_dispatch", q_ceil=None) -> DispatchResult:
    """Lower capacity: minimise the guaranteed head flow plus weighted injections."""
    p = net.p if p is None else np.asarray(p, dtype=float)
    op = _default_op(net, p) if op is None else op
    a = _alpha(net, alpha)
    block = block_for(net, op, mode, p)
    hi = np.zeros(net.n) if q_ceil is None else np.minimum(q_ceil, 0.0)
    block.prog.add_bounds("q_minus", block.q_lo, net.q_min, hi)
    if mode == "box":
        block.prog.add_bounds("q_plus", block.q_up, 0.0, 0.0)
    head = block.q_head_high(net.head_branches)
    block.prog.objective = head + (block.q_lo.scale_rows(a)).sum()
    sol = _solve_block(block)
    q = np.clip(block.q_lo.value(sol.x), net.q_min, 0.0)
    return DispatchResult(q, float(head.value(sol.x)[0]), _tags(net, block, sol, q, "minus"), block, sol.objective)


@dataclass
class BoxResult:
    nodal: NodalCapacity
    q_head_bound: tuple[float, float]
    block: CiaBlock = field(repr=False)
    envelope: tuple[np.ndarray, np.ndarray] | None = None


def solve_box(net: RadialNetwork, p=None, op: OperatingPoint | None = None, alpha=None,
              contain: tuple[np.ndarray, np.ndarray] | None = None) -> BoxResult:
    """Largest weighted box ``[q_minus, q_plus]`` certified by one convex program.

    ``contain`` = ``(q_minus_prev, q_plus_prev)`` forces the new box to contain
    a previous one.
    """
    p = net.p if p is None else np.asarray(p, dtype=float)
    op = _default_op(net, p) if op is None else op
    a = _alpha(net, alpha)
    block = block_for(net, op, "box", p)
    if contain is None:
        lo_hi, up_lo = np.zeros(net.n), np.zeros(net.n)
    else:
        lo_hi, up_lo = np.minimum(contain[0], 0.0), np.maximum(contain[1], 0.0)
    block.prog.add_bounds("q_minus", block.q_lo, net.q_min, lo_hi)
    block.prog.add_bounds("q_plus", block.q_up, up_lo, net.q_max)
    block.prog.objective = ((block.q_lo - block.q_up).scale_rows(a)).sum()
    sol = _solve_block(block)
    qm = np.clip(block.q_lo.value(sol.x), net.q_min, 0.0)
    qp = np.clip(block.q_up.value(sol.x), 0.0, net.q_max)
    nodal = NodalCapacity(net.ids, qm, qp, _tags(net, block, sol, qm, "minus"), _tags(net, block, sol, qp, "plus"))
    head = net.head_branches
    bound = (float(block.q_head_high(head).value(sol.x)[0]), float(block.q_head_low(head).value(sol.x)[0]))
    env = (block.l_lb.value(sol.x), block.l_ub.value(sol.x))
    return BoxResult(nodal, bound, block, env)


def _corner_check(net: RadialNetwork, p, qm, qp):
    lo = check_admissible(net, p, qm)
    hi = check_admissible(net, p, qp)
    ok = lo.admissible and hi.admissible
    rng = (lo.solution.q_head if lo.solution.converged else float("nan"),
           hi.solution.q_head if hi.solution.converged else float("nan"))
    return ok, rng


def iterate_expand(net: RadialNetwork, p=None, mode: str = "box", tol: float = 1e-4,
                   k_max: int = 20, alpha=None) -> CapacityReport:
    """Expand nodal capacities by re-expanding around the previous iterate.

    Each iterate must contain the previous one and is checked against the
    power-flow oracle at its corners; the loop stops when corners move less
    than ``tol`` (inf-norm, pu), when every node sits at its device limit, when
    the program can no longer contain the previous box, or after ``k_max``
    iterations.
    """
    p = net.p if p is None else np.asarray(p, dtype=float)
    n = net.n
    history: list[IterationRecord] = []
    warnings: list[str] = []
    best = None  # (qm, qp, tags_m, tags_p, bound)
    qm_prev, qp_prev = np.zeros(n), np.zeros(n)
    op_m = op_p = _default_op(net, p)
    moves: list[float] = []
    converged = False
    for k in range(1, k_max + 1):
        try:
            if mode == "box":
                res = solve_box(net, p, op_m, alpha, contain=(qm_prev, qp_prev) if best else None)
                qm, qp = res.nodal.q_minus, res.nodal.q_plus
                tm, tp = res.nodal.tags_minus, res.nodal.tags_plus
                bound = res.q_head_bound
                env = res.envelope
            else:
                r1 = solve_p1(net, p, op_p, alpha, "single_dispatch", q_floor=qp_prev if best else None)
                r2 = solve_p2(net, p, op_m, alpha, "single_dispatch", q_ceil=qm_prev if best else None)
                qm, qp, tm, tp = r2.q, r1.q, r2.tags, r1.tags
                bound = (r2.q_head_bound, r1.q_head_bound)
                env = None
        except CapacityError as exc:
            if best is None:
                raise
            log.info("expansion stopped at iteration %d: %s", k, exc)
            converged = True
            break
        ok, rng = _corner_check(net, p, qm, qp)
        history.append(IterationRecord(k, rng, qm.copy(), qp.copy(), ok))
        if not ok:
            warnings.append(f"iteration {k} failed the oracle check; keeping previous iterate")
            if best is None:
                raise CapacityError("first iterate is not AC admissible", "infeasible")
            history.pop()
            break
        move = float(np.max(np.abs(np.r_[qm - qm_prev, qp - qp_prev]))) if n else 0.0
        best = (qm, qp, tm, tp, bound, rng, env)
        qm_prev, qp_prev = qm, qp
        at_limits = np.allclose(qm, net.q_min, atol=DEVICE_TOL) and np.allclose(qp, net.q_max, atol=DEVICE_TOL)
        if at_limits or (k > 1 and move < tol):
            converged = True
            break
        moves.append(move)
        if len(moves) >= 4 and moves[-1] >= moves[-2] >= moves[-3] >= moves[-4]:
            warnings.append("oscillation detected; returning best verified iterate")
            break
        if mode == "box":
            op_m = _default_op(net, p, 0.5 * (qm + qp))
        else:
            op_m = _default_op(net, p, qm)
            op_p = _default_op(net, p, qp)
    qm, qp, tm, tp, bound, rng, env = best
    nodal = NodalCapacity(net.ids, qm, qp, tm, tp)
    method = "cia_box" if mode == "box" else "cia"
    for w in warnings:
        log.warning(w)
    return CapacityReport(nodal, rng, bound, history, method, converged, warnings, env)


@dataclass
class RelaxationResult:
    q_head: float
    q: np.ndarray
    v: np.ndarray
    l: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    gap: float          # max |l v - P^2 - Q^2| (0 when the relaxation is exact)
    certified: bool     # oracle replay of the relaxed dispatch is admissible and matches
    voltage_binding: bool


def solve_relaxation(net: RadialNetwork, p=None, direction: str = "max") -> RelaxationResult:
    """Second-order cone relaxation of DistFlow; returns an outer bound on the head flow."""
    if direction not in ("max", "min"):
        raise ValueError("direction must be 'max' or 'min'")
    p = net.p if p is None else np.asarray(p, dtype=float)
    n = net.n
    m = build_matrices(net)
    prog = ConicProgram()
    q = prog.add_var("q", n)
    P = prog.add_var("P", n)
    Q = prog.add_var("Q", n)
    v = prog.add_var("v", n)
    l = prog.add_var("l", n)
    prog.add_eq("P", P - (m.C @ p - m.D_R @ l))
    prog.add_eq("Q", Q - (m.C @ q - m.D_X @ l))
    prog.add_eq("v", v - (net.v0 + m.M_p @ p + m.M_q @ q - m.H @ l))
    for k in range(n):
        prog.add_rotated_cone(l[[k]], v[[k]] * 0.5, Affine.stack([P[[k]], Q[[k]]]), f"soc[{k}]")
    prog.add_bounds("q", q, net.q_min, net.q_max)
    prog.add_le("v_min", net.v_min - v)
    prog.add_le("v_max", v - net.v_max)
    prog.add_le("l_max", l - net.l_max)
    head = Q[np.flatnonzero(net.head_branches)].sum()
    prog.objective = -head if direction == "max" else head
    sol = solve_conic(prog)
    if sol.status not in ("Solved", "AlmostSolved"):
        kind = "infeasible" if "Infeasible" in sol.status else "solver"
        raise CapacityError(f"relaxation failed: {sol.status}", kind)
    x = sol.x
    gap = float(np.max(np.abs(x["l"] * x["v"] - x["P"] ** 2 - x["Q"] ** 2))) if n else 0.0
    qv = np.clip(x["q"], net.q_min, net.q_max)
    verdict = check_admissible(net, p, qv)
    qh = float(head.value(x)[0])
    certified = bool(verdict.admissible and abs(verdict.solution.q_head - qh) < 1e-5)
    vb = any(np.any(sol.slacks.get(k, np.ones(1)) < BIND_TOL) for k in ("v_max", "v_min"))
    return RelaxationResult(qh, qv, x["v"], x["l"], x["P"], x["Q"], gap, certified, vb)


@dataclass
class BoxVerification:
    samples: int
    admissible: int
    worst_kind: str = ""
    worst_magnitude: float = 0.0

    @property
    def pass_rate(self) -> float:
        return self.admissible / self.samples if self.samples else 1.0


def sample_box(nodal: NodalCapacity, samples: int, seed: int = 42) -> np.ndarray:
    """Uniform samples from the nodal box, one row per sample."""
    rng = np.random.default_rng(seed)
    u = rng.random((samples, nodal.q_minus.shape[0]))
    return nodal.q_minus + u * (nodal.q_plus - nodal.q_minus)


def verify_box(net: RadialNetwork, p, nodal: NodalCapacity, samples: int = 1000, seed: int = 42) -> BoxVerification:
    """Monte Carlo oracle check of a nodal box (corners included)."""
    p = net.p if p is None else np.asarray(p, dtype=float)
    pts = np.vstack([nodal.q_minus, nodal.q_plus, sample_box(nodal, samples, seed)])
    ok, worst = 0, None
    for q in pts:
        verdict = check_admissible(net, p, q)
        ok += verdict.admissible
        w = verdict.worst
        if w is not None and (worst is None or w.magnitude > worst.magnitude):
            worst = w
    return BoxVerification(len(pts), ok, worst.kind if worst else "", worst.magnitude if worst else 0.0)


# --- scenarios and studies ---------------------------------------------------

def turbine_mask(net: RadialNetwork) -> np.ndarray:
    """Nodes carrying a generator (positive rated active power)."""
    return net.p > 0


def feeder_ends(net: RadialNetwork) -> np.ndarray:
    """Turbines in the distal half of their feeder.

    A turbine is an end turbine when fewer turbines hang below it than lie on
    its path from the head (itself included).
    """
    tur = turbine_mask(net)
    n = net.n
    depth = np.zeros(n, dtype=int)
    for k in range(n):
        par = net.parent[k]
        depth[k] = (depth[par] if par >= 0 else 0) + int(tur[k])
    height = np.zeros(n, dtype=int)
    for k in range(n - 1, -1, -1):
        par = net.parent[k]
        if par >= 0:
            height[par] = max(height[par], height[k] + int(tur[k]))
    return tur & (height < depth)


@dataclass
class Scenario:
    name: str
    p_pattern: object = "all_rated"
    alpha: list | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(name=str(d["name"]), p_pattern=d.get("p_pattern", "all_rated"), alpha=d.get("alpha"))

    def injections(self, net: RadialNetwork) -> np.ndarray:
        """Active injections (pu) for a network whose ``p`` holds rated values."""
        rated = net.p
        pat = self.p_pattern
        if isinstance(pat, str):
            ends = feeder_ends(net)
            if pat == "all_rated":
                return rated.copy()
            if pat == "leaves_rated":
                return np.where(ends, rated, 0.0)
            if pat == "inner_rated":
                return np.where(ends, 0.0, rated)
            raise ValueError(f"unknown p_pattern {pat}")
        vec = np.asarray(pat, dtype=float) / net.base_mva
        if vec.shape != (net.n,):
            raise ValueError("explicit p_pattern must list one MW value per node")
        return vec

    def apply(self, net: RadialNetwork) -> RadialNetwork:
        out = net.with_injections(self.injections(net))
        if self.alpha is not None:
            from dataclasses import replace
            a = np.broadcast_to(np.asarray(self.alpha, dtype=float), (net.n,))
            out = replace(out, nodes=tuple(replace(nd, alpha=float(ak)) for nd, ak in zip(out.nodes, a)))
        return out


def load_scenarios(path) -> list[Scenario]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and "scenarios" in data:
        data = data["scenarios"]
    if isinstance(data, dict):
        data = [data]
    return [Scenario.from_dict(d) for d in data]


def capacity(net: RadialNetwork, mode: str = "box", tol: float = 1e-4, k_max: int = 20) -> CapacityReport:
    return iterate_expand(net, net.p, mode, tol, k_max)


@dataclass
class PQPoint:
    p_turbine: float
    q_head_plus: float
    q_head_minus: float
    binding: str


def pq_curve(net: RadialNetwork, p_levels, mode: str = "box") -> list[PQPoint]:
    """Head reactive capacity versus uniform turbine active power (pu levels)."""
    tur = turbine_mask(net)
    if not tur.any():
        tur = net.q_max > 0
    out = []
    for level in p_levels:
        pv = np.where(tur, float(level), 0.0)
        rep = iterate_expand(net.with_injections(pv), pv, mode)
        out.append(PQPoint(float(level), rep.q_head_range[1], rep.q_head_range[0], rep.nodal.binding))
    return out


def write_pq_csv(points: list[PQPoint], path, base_mva: float):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_turbine_mw", "q_head_plus_mvar", "q_head_minus_mvar", "binding_tag"])
        for pt in points:
            w.writerow([_fmt(pt.p_turbine * base_mva), _fmt(pt.q_head_plus * base_mva),
                        _fmt(pt.q_head_minus * base_mva), pt.binding])


@dataclass
class CompareRow:
    scheme: str
    cells: list[tuple[float, float]]


def compare(net: RadialNetwork, scenarios: list[Scenario], mode: str = "box") -> tuple[list[str], list[CompareRow]]:
    """Head reactive ranges per scheme (rows) and scenario (columns), in pu."""
    from windcap.control import decentralized_steady_state

    names = [s.name for s in scenarios]
    cia, relax, dec = [], [], []
    for sc in scenarios:
        snet = sc.apply(net)
        rep = iterate_expand(snet, snet.p, mode)
        cia.append(rep.q_head_range)
        lo = solve_relaxation(snet, snet.p, "min").q_head
        hi = solve_relaxation(snet, snet.p, "max").q_head
        relax.append((lo, hi))
        ds = decentralized_steady_state(snet, snet.p, snet.q_max)
        dec.append((float("nan"), ds.q_head))
    return names, [CompareRow("cia", cia), CompareRow("relaxation", relax), CompareRow("decentralized", dec)]


def write_compare_csv(names, rows: list[CompareRow], path, base_mva: float):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme"] + [f"{n}_{side}_mvar" for n in names for side in ("min", "max")])
        for row in rows:
            cells = []
            for lo, hi in row.cells:
                cells += ["" if np.isnan(lo) else _fmt(lo * base_mva), "" if np.isnan(hi) else _fmt(hi * base_mva)]
            w.writerow([row.scheme] + cells)
