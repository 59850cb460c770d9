"""Solver-agnostic convex programs with affine and rotated second-order cone rows.

Expressions are kept symbolic (per-variable-block coefficient matrices) so that
constraint blocks can be assembled before the full variable layout is known.
The interior-point backend is Clarabel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse


class SolverError(RuntimeError):
    pass


class Affine:
    """Vector-valued affine expression ``sum_b M_b x_b + c`` over named variable blocks."""

    __slots__ = ("terms", "const")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, terms: dict[str, np.ndarray] | None, const):
        self.const = np.atleast_1d(np.asarray(const, dtype=float))
        self.terms = {} if terms is None else {k: np.atleast_2d(v) for k, v in terms.items()}

    @property
    def size(self) -> int:
        return self.const.shape[0]

    @classmethod
    def var(cls, name: str, size: int) -> "Affine":
        return cls({name: np.eye(size)}, np.zeros(size))

    @classmethod
    def constant(cls, value) -> "Affine":
        return cls(None, value)

    def _lift(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        return Affine(None, np.broadcast_to(np.asarray(other, dtype=float), (self.size,)))

    def __add__(self, other):
        other = self._lift(other)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v
        return Affine(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        s = float(scalar)
        return Affine({k: s * v for k, v in self.terms.items()}, s * self.const)

    __rmul__ = __mul__

    def __rmatmul__(self, mat):
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return Affine({k: mat @ v for k, v in self.terms.items()}, mat @ self.const)

    def scale_rows(self, w) -> "Affine":
        w = np.asarray(w, dtype=float)
        return Affine({k: w[:, None] * v for k, v in self.terms.items()}, w * self.const)

    def __getitem__(self, idx):
        return Affine({k: v[idx] for k, v in self.terms.items()}, self.const[idx])

    def sum(self) -> "Affine":
        return Affine({k: v.sum(axis=0, keepdims=True) for k, v in self.terms.items()}, [self.const.sum()])

    def value(self, x: dict[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for k, v in self.terms.items():
            out = out + v @ x[k]
        return out

    @staticmethod
    def stack(items) -> "Affine":
        items = list(items)
        names = sorted({k for it in items for k in it.terms})
        terms = {}
        for k in names:
            blocks = []
            width = next(it.terms[k].shape[1] for it in items if k in it.terms)
            for it in items:
                blocks.append(it.terms[k] if k in it.terms else np.zeros((it.size, width)))
            terms[k] = np.vstack(blocks)
        return Affine(terms, np.concatenate([it.const for it in items]))


@dataclass
class RotatedCone:
    """``2 u w >= ||z||^2`` with ``u, w >= 0``."""

    u: Affine
    w: Affine
    z: Affine
    label: str = ""


@dataclass
class ConicProgram:
    """minimize ``objective`` subject to ``eq == 0``, ``ineq <= 0`` and rotated cones."""

    variables: dict[str, int] = field(default_factory=dict)
    objective: Affine | None = None
    eq: list[tuple[str, Affine]] = field(default_factory=list)
    ineq: list[tuple[str, Affine]] = field(default_factory=list)
    cones: list[RotatedCone] = field(default_factory=list)

    def add_var(self, name: str, size: int) -> Affine:
        if name in self.variables:
            raise ValueError(f"duplicate variable block {name}")
        self.variables[name] = size
        return Affine.var(name, size)

    def add_eq(self, label: str, expr: Affine):
        self.eq.append((label, expr))

    def add_le(self, label: str, expr: Affine):
        """Add ``expr <= 0`` (rows with non-finite constants are dropped)."""
        keep = np.isfinite(expr.const)
        if not keep.all():
            expr = expr[np.flatnonzero(keep)]
        if expr.size:
            self.ineq.append((label, expr))

    def add_bounds(self, label: str, x: Affine, lo=None, hi=None):
        if hi is not None:
            self.add_le(label + ":hi", x - hi)
        if lo is not None:
            self.add_le(label + ":lo", lo - x)

    def add_rotated_cone(self, u: Affine, w: Affine, z: Affine, label: str = ""):
        self.cones.append(RotatedCone(u, w, z, label))

    @property
    def n_vars(self) -> int:
        return sum(self.variables.values())

    def offsets(self) -> dict[str, slice]:
        out, pos = {}, 0
        for name, size in self.variables.items():
            out[name] = slice(pos, pos + size)
            pos += size
        return out

    def dense(self, expr: Affine) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient matrix over the stacked variable vector, plus constant."""
        off = self.offsets()
        G = np.zeros((expr.size, self.n_vars))
        for k, v in expr.terms.items():
            if k not in off:
                raise KeyError(f"expression references unknown variable block {k}")
            if v.shape[1] != off[k].stop - off[k].start:
                raise ValueError(f"dimension mismatch for block {k}")
            G[:, off[k]] = v
        return G, expr.const

    def split(self, xvec: np.ndarray) -> dict[str, np.ndarray]:
        return {k: xvec[s].copy() for k, s in self.offsets().items()}

    def describe(self) -> str:
        """Human-readable listing of rows (for debugging)."""
        lines = [f"variables: {self.variables}"]
        for label, e in self.eq:
            lines.append(f"eq   {label:<24s} rows={e.size}")
        for label, e in self.ineq:
            lines.append(f"le   {label:<24s} rows={e.size}")
        for c in self.cones:
            lines.append(f"rsoc {c.label:<24s} dim={c.z.size + 2}")
        return "\n".join(lines)


@dataclass
class ConicSolution:
    status: str
    x: dict[str, np.ndarray]
    objective: float
    iterations: int
    slacks: dict[str, np.ndarray]

    @property
    def ok(self) -> bool:
        return self.status == "Solved"


def solve_conic(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve with Clarabel; rotated cones are mapped to standard second-order cones."""
    if prog.objective is None:
        raise ValueError("program has no objective")
    n = prog.n_vars
    c, c0 = prog.dense(prog.objective)
    c = c.ravel()
    blocks_A, blocks_b, cones = [], [], []
    if prog.eq:
        G, g = prog.dense(Affine.stack([e for _, e in prog.eq]))
        blocks_A.append(G)
        blocks_b.append(-g)
        cones.append(clarabel.ZeroConeT(G.shape[0]))
    if prog.ineq:
        G, g = prog.dense(Affine.stack([e for _, e in prog.ineq]))
        blocks_A.append(G)
        blocks_b.append(-g)
        cones.append(clarabel.NonnegativeConeT(G.shape[0]))
    for rc in prog.cones:
        # (u + w, u - w, sqrt(2) z) in the standard cone  <=>  2uw >= ||z||^2
        s = Affine.stack([rc.u + rc.w, rc.u - rc.w, rc.z * np.sqrt(2.0)])
        G, g = prog.dense(s)
        blocks_A.append(-G)
        blocks_b.append(g)
        cones.append(clarabel.SecondOrderConeT(G.shape[0]))
    A = sparse.csc_matrix(np.vstack(blocks_A)) if blocks_A else sparse.csc_matrix((0, n))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.max_iter = max_iter
    solver = clarabel.DefaultSolver(sparse.csc_matrix((n, n)), c, A, b, cones, settings)
    res = solver.solve()
    status = str(res.status)
    status = status.split(".")[-1]
    xvec = np.asarray(res.x)
    x = prog.split(xvec)
    slacks = {}
    for label, e in prog.ineq:
        slacks[label] = -e.value(x)
    return ConicSolution(status, x, float(res.obj_val) + float(c0[0]), int(res.iterations), slacks)
