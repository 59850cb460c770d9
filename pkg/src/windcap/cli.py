"""Command-line entry point: ``windcap <command> [options]``.

Every command writes CSV/JSON data into ``--out`` together with a
``manifest.json`` listing inputs, seed, tool version and output hashes.
Exit codes: 0 success, 1 infeasible, 2 input/output error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from windcap import __version__
from windcap.capacity import (
    CapacityError,
    Scenario,
    compare,
    iterate_expand,
    load_scenarios,
    pq_curve,
    turbine_mask,
    verify_box,
    write_compare_csv,
    write_pq_csv,
)
from windcap.conic import SolverError
from windcap.control import ControlError, ControllerConfig, TheveninGrid, rmse, simulate
from windcap.netmodel import NetworkError, load_network
from windcap.powerflow import check_admissible, residuals, solve, sweep_2d

log = logging.getLogger("windcap")

EXIT_OK, EXIT_INFEASIBLE, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def use(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"input file not found: {p}")
        self.inputs.append(p)
        return p

    def file(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def manifest(self):
        a = self.args
        data = {
            "command": a.command,
            "tool_version": __version__,
            "seed": a.seed,
            "tol": a.tol,
            "mode": getattr(a, "mode", None),
            "inputs": {str(p): _sha(p) for p in self.inputs},
            "outputs": {p.name: _sha(p) for p in self.outputs},
        }
        _dump(self.out / "manifest.json", data)


def _network(run: Run, scenario: Scenario | None = None):
    net = load_network(run.use(run.args.network))
    if scenario is not None:
        net = scenario.apply(net)
    return net


def _scenario(run: Run) -> Scenario | None:
    if not getattr(run.args, "scenario", None):
        return None
    scs = load_scenarios(run.use(run.args.scenario))
    if len(scs) != 1:
        raise ValueError("capacity expects a single scenario")
    return scs[0]


def cmd_capacity(args) -> int:
    run = Run(args)
    net = _network(run, _scenario(run))
    mode = args.mode or "box"
    rep = iterate_expand(net, net.p, mode, tol=args.tol)
    rep.write(run.file("capacity.json"), run.file("capacity.csv"), net.base_mva)
    check = verify_box(net, net.p, rep.nodal, args.samples, args.seed)
    _dump(run.file("verification.json"), {
        "samples": check.samples,
        "admissible": check.admissible,
        "pass_rate": float(_fmt(check.pass_rate)),
        "worst_kind": check.worst_kind,
    })
    run.manifest()
    print(f"Q_head range [{_fmt(rep.q_head_range[0] * net.base_mva)}, {_fmt(rep.q_head_range[1] * net.base_mva)}] MVAr;"
          f" verification {check.admissible}/{check.samples}")
    return EXIT_OK if check.admissible == check.samples else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    run = Run(args)
    net = _network(run, _scenario(run))
    a, b = args.nodes if args.nodes else (int(net.ids[0]), int(net.ids[1]))
    ia, ib = net.index_of(a), net.index_of(b)
    ra = args.range_a or (net.q_min[ia], net.q_max[ia])
    rb = args.range_b or (net.q_min[ib], net.q_max[ib])
    res = sweep_2d(net, a, b, ra, rb, args.steps)
    res.write_csv(run.file("sweep.csv"))
    w = res.nonconvex_witness()
    summary = {
        "nodes": [a, b],
        "steps": args.steps,
        "admissible_points": int(res.admissible.sum()),
        "nonconvex": w is not None,
        "witness": None if w is None else {
            "a": [_fmt(res.qa[w[0][0]]), _fmt(res.qb[w[0][1]])],
            "b": [_fmt(res.qa[w[1][0]]), _fmt(res.qb[w[1][1]])],
            "midpoint": [_fmt(res.qa[w[2][0]]), _fmt(res.qb[w[2][1]])],
        },
    }
    _dump(run.file("sweep_summary.json"), summary)
    run.manifest()
    print(f"{summary['admissible_points']} admissible grid points; non-convex: {summary['nonconvex']}")
    return EXIT_OK


def cmd_pqcurve(args) -> int:
    run = Run(args)
    net = _network(run)
    tur = turbine_mask(net)
    p_top = float(net.p[tur].max()) if tur.any() else 0.0
    if args.p_max is not None:
        p_top = args.p_max / net.base_mva
    levels = np.linspace(0.0, p_top, args.levels)
    pts = pq_curve(net, levels, args.mode or "box")
    write_pq_csv(pts, run.file("pq_curve.csv"), net.base_mva)
    run.manifest()
    for pt in pts:
        print(f"p={_fmt(pt.p_turbine * net.base_mva)} MW  Q_head+={_fmt(pt.q_head_plus * net.base_mva)} MVAr  {pt.binding}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    run = Run(args)
    net = _network(run)
    cfg = ControllerConfig.load(run.use(args.config)) if args.config else ControllerConfig()
    mode = args.mode or cfg.mode
    from dataclasses import replace

    cfg = replace(cfg, mode=mode)
    grid = TheveninGrid()
    caps, head_range = None, None
    if mode == "cia":
        rep = iterate_expand(net.with_v0(cfg.v_ref**2), net.p, "box", tol=args.tol)
        caps, head_range = rep.nodal, rep.q_head_range
    trace = simulate(net, net.p, caps, grid, cfg, args.t_end, head_range)
    trace.write_csv(run.file(f"trace_{mode}.csv"), net.base_mva)
    summary = {
        "mode": mode,
        "steps": len(trace),
        "rmse_pu": float(_fmt(rmse(trace, cfg.v_ref))),
        "steady_state_violation_steps": trace.steady_violations,
        "transient_violation_steps": trace.transient_violations,
        "truncated": trace.truncated,
        "diagnostic": trace.diagnostic,
    }
    _dump(run.file(f"summary_{mode}.json"), summary)
    run.manifest()
    print(f"{mode}: rmse {summary['rmse_pu']} pu, steady-state violations {trace.steady_violations},"
          f" transient {trace.transient_violations}")
    return EXIT_INFEASIBLE if trace.truncated else EXIT_OK


def cmd_compare(args) -> int:
    run = Run(args)
    net = _network(run)
    scs = load_scenarios(run.use(args.scenario))
    names, rows = compare(net, scs, args.mode or "box")
    write_compare_csv(names, rows, run.file("compare.csv"), net.base_mva)
    run.manifest()
    for row in rows:
        cells = ", ".join(f"[{_fmt(lo * net.base_mva)}, {_fmt(hi * net.base_mva)}]" for lo, hi in row.cells)
        print(f"{row.scheme:>13s}: {cells}")
    return EXIT_OK


def cmd_verify(args) -> int:
    """Oracle self-check at the network's base point plus a Monte Carlo box check."""
    run = Run(args)
    net = _network(run, _scenario(run))
    sol = solve(net)
    res = residuals(net, sol.p, sol.q, sol.v0, sol.v, sol.l, sol.P, sol.Q) if sol.converged else None
    rep = iterate_expand(net, net.p, args.mode or "box", tol=args.tol)
    check = verify_box(net, net.p, rep.nodal, args.samples, args.seed)
    summary = {
        "power_flow_converged": sol.converged,
        "max_residual": None if res is None else float(_fmt(float(np.max(np.abs(res))))),
        "base_point_admissible": check_admissible(net).admissible,
        "samples": check.samples,
        "admissible": check.admissible,
    }
    _dump(run.file("verify.json"), summary)
    run.manifest()
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if check.admissible == check.samples and sol.converged else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="windcap", description="Wind farm nodal reactive capacity tools")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--network", required=True, help="network JSON file")
        if scenario:
            p.add_argument("--scenario", help="scenario JSON file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--tol", type=float, default=1e-4, help="expansion stopping tolerance (pu)")
        p.add_argument("--mode", default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common(sub.add_parser("capacity", help="nodal reactive capacities"))
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_capacity)

    p = common(sub.add_parser("sweep", help="2-D admissibility grid"))
    p.add_argument("--nodes", type=int, nargs=2)
    p.add_argument("--range-a", type=float, nargs=2)
    p.add_argument("--range-b", type=float, nargs=2)
    p.add_argument("--steps", type=int, default=81)
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("pq-curve", help="head capacity versus turbine active power"), scenario=False)
    p.add_argument("--levels", type=int, default=12)
    p.add_argument("--p-max", type=float, default=None, help="top level in MW (default: rated)")
    p.set_defaults(func=cmd_pqcurve)

    p = common(sub.add_parser("simulate", help="closed-loop PCC voltage control"), scenario=False)
    p.add_argument("--config", help="controller JSON")
    p.add_argument("--t-end", type=float, default=100.0)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("compare", help="head capacity per scheme and scenario"), scenario=False)
    p.add_argument("--scenario", required=True, help="scenario list JSON")
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("verify", help="oracle self-check and Monte Carlo verification"))
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, NetworkError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER if exc.kind == "solver" else EXIT_INFEASIBLE
    except (SolverError, ControlError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
