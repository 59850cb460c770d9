"""Radial collector network data model and the DistFlow matrix model.

Nodes are stored in breadth-first order from the head node, so that every
branch is indexed by its receiving (downstream) node and parents always
precede children.  All powers are per unit on ``base_mva``; voltages and
currents are kept as squared magnitudes (pu^2).
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular


class NetworkError(ValueError):
    """Raised for malformed or non-radial network data."""


@dataclass(frozen=True)
class NodeSpec:
    id: int
    p: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0
    v_min: float = 0.81
    v_max: float = 1.21
    alpha: float = 1.0


@dataclass(frozen=True)
class BranchSpec:
    from_node: int
    to_node: int
    r: float
    x: float
    l_max: float = np.inf


@dataclass(frozen=True, eq=False)
class RadialNetwork:
    """Validated radial network.

    ``nodes`` and ``branches`` are stored in topological order: ``branches[k]``
    feeds ``nodes[k]``.  Use :meth:`from_specs` to build one from unordered
    input.
    """

    nodes: tuple[NodeSpec, ...]
    branches: tuple[BranchSpec, ...]
    v0: float = 1.0
    base_mva: float = 1.0
    head: int = 0
    name: str = ""
    parent: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        index = {n.id: k for k, n in enumerate(self.nodes)}
        parent = np.array(
            [index.get(b.from_node, -1) if b.from_node != self.head else -1 for b in self.branches],
            dtype=np.int64,
        )
        parent.setflags(write=False)
        object.__setattr__(self, "parent", parent)

    @classmethod
    def from_specs(cls, nodes, branches, v0=1.0, base_mva=1.0, head=0, name=""):
        nodes = list(nodes)
        branches = list(branches)
        _validate(nodes, branches, v0, base_mva, head)
        by_id = {n.id: n for n in nodes}
        feeding = {b.to_node: b for b in branches}
        children: dict[int, list[int]] = {}
        for b in branches:
            children.setdefault(b.from_node, []).append(b.to_node)
        order = []
        queue = deque([head])
        while queue:
            u = queue.popleft()
            for c in sorted(children.get(u, [])):
                order.append(c)
                queue.append(c)
        if len(order) != len(nodes):
            raise NetworkError("non-radial: network is not connected to the head node")
        return cls(
            nodes=tuple(by_id[i] for i in order),
            branches=tuple(feeding[i] for i in order),
            v0=float(v0),
            base_mva=float(base_mva),
            head=head,
            name=name,
        )

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def ids(self) -> np.ndarray:
        return np.array([nd.id for nd in self.nodes])

    def _col(self, seq, attr) -> np.ndarray:
        return np.array([getattr(s, attr) for s in seq], dtype=float)

    @property
    def p(self) -> np.ndarray:
        return self._col(self.nodes, "p")

    @property
    def q_min(self) -> np.ndarray:
        return self._col(self.nodes, "q_min")

    @property
    def q_max(self) -> np.ndarray:
        return self._col(self.nodes, "q_max")

    @property
    def v_min(self) -> np.ndarray:
        return self._col(self.nodes, "v_min")

    @property
    def v_max(self) -> np.ndarray:
        return self._col(self.nodes, "v_max")

    @property
    def alpha(self) -> np.ndarray:
        return self._col(self.nodes, "alpha")

    @property
    def r(self) -> np.ndarray:
        return self._col(self.branches, "r")

    @property
    def x(self) -> np.ndarray:
        return self._col(self.branches, "x")

    @property
    def l_max(self) -> np.ndarray:
        return self._col(self.branches, "l_max")

    @property
    def head_branches(self) -> np.ndarray:
        """Boolean mask of branches leaving the head node."""
        return self.parent < 0

    @property
    def leaves(self) -> np.ndarray:
        """Boolean mask of nodes without children."""
        mask = np.ones(self.n, dtype=bool)
        mask[self.parent[self.parent >= 0]] = False
        return mask

    def index_of(self, node_id: int) -> int:
        for k, nd in enumerate(self.nodes):
            if nd.id == node_id:
                return k
        raise NetworkError(f"node {node_id} not in network")

    def with_injections(self, p=None) -> "RadialNetwork":
        """Copy with a new active injection vector (topological order)."""
        if p is None:
            return self
        p = np.broadcast_to(np.asarray(p, dtype=float), (self.n,))
        nodes = tuple(replace(nd, p=float(pk)) for nd, pk in zip(self.nodes, p))
        return replace(self, nodes=nodes)

    def with_voltage_limits(self, v_min_pu: float, v_max_pu: float) -> "RadialNetwork":
        """Copy with uniform voltage magnitude limits (given in pu, not squared)."""
        nodes = tuple(replace(nd, v_min=v_min_pu**2, v_max=v_max_pu**2) for nd in self.nodes)
        return replace(self, nodes=nodes)

    def with_v0(self, v0: float) -> "RadialNetwork":
        return replace(self, v0=float(v0))


def _validate(nodes, branches, v0, base_mva, head):
    if v0 <= 0 or base_mva <= 0:
        raise NetworkError("v0 and base_mva must be positive")
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate node ids")
    if head in ids:
        raise NetworkError("head node must not be listed among the nodes")
    if len(branches) != len(nodes):
        raise NetworkError(f"non-radial: {len(branches)} branches for {len(nodes)} nodes")
    known = set(ids) | {head}
    seen_to = set()
    for b in branches:
        if b.from_node not in known or b.to_node not in known:
            raise NetworkError(f"branch {b.from_node}->{b.to_node} references unknown node")
        if b.to_node == head or b.to_node in seen_to:
            raise NetworkError(f"non-radial: node {b.to_node} is fed by more than one branch")
        seen_to.add(b.to_node)
        if b.r < 0:
            raise NetworkError(f"negative resistance on branch {b.from_node}->{b.to_node}")
        if b.r == 0 and b.x == 0:
            raise NetworkError(f"degenerate branch {b.from_node}->{b.to_node}: zero impedance")
        if b.l_max < 0:
            raise NetworkError("l_max must be nonnegative")
    for n in nodes:
        if not (0 < n.v_min < n.v_max):
            raise NetworkError(f"node {n.id}: voltage limits must satisfy 0 < v_min < v_max")
        if not (n.q_min <= 0 <= n.q_max):
            raise NetworkError(f"node {n.id}: reactive limits must satisfy q_min <= 0 <= q_max")
        if n.alpha < 0:
            raise NetworkError(f"node {n.id}: alpha must be nonnegative")


def _opt(value, default):
    return default if value is None else value


def network_from_dict(data: dict) -> RadialNetwork:
    base = float(data.get("base_mva", 1.0))
    nodes = []
    for nd in data["nodes"]:
        nodes.append(
            NodeSpec(
                id=int(nd["id"]),
                p=float(nd.get("p_mw", 0.0)) / base,
                q_min=float(nd.get("q_min_mvar", 0.0)) / base,
                q_max=float(nd.get("q_max_mvar", 0.0)) / base,
                v_min=float(_opt(nd.get("v_min_pu"), 0.9)) ** 2,
                v_max=float(_opt(nd.get("v_max_pu"), 1.1)) ** 2,
                alpha=float(_opt(nd.get("alpha"), 1.0)),
            )
        )
    branches = [
        BranchSpec(
            from_node=int(b["from"]),
            to_node=int(b["to"]),
            r=float(b["r_pu"]),
            x=float(b["x_pu"]),
            l_max=float(_opt(b.get("l_max_pu"), np.inf)) ** 2,
        )
        for b in data["branches"]
    ]
    return RadialNetwork.from_specs(
        nodes,
        branches,
        v0=float(data.get("v0", 1.0)) ** 2,
        base_mva=base,
        head=int(data.get("head", 0)),
        name=str(data.get("name", "")),
    )


def load_network(path) -> RadialNetwork:
    """Read and validate a network JSON file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"parse error in {path}: {exc}") from exc
    try:
        return network_from_dict(data)
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"parse error in {path}: missing or invalid field {exc}") from exc


def network_to_dict(net: RadialNetwork) -> dict:
    base = net.base_mva

    def lim(v):
        return None if not np.isfinite(v) else float(np.sqrt(v))

    return {
        "name": net.name,
        "base_mva": base,
        "v0": float(np.sqrt(net.v0)),
        "head": net.head,
        "nodes": [
            {
                "id": nd.id,
                "p_mw": nd.p * base,
                "q_min_mvar": nd.q_min * base,
                "q_max_mvar": nd.q_max * base,
                "v_min_pu": lim(nd.v_min),
                "v_max_pu": lim(nd.v_max),
                "alpha": nd.alpha,
            }
            for nd in net.nodes
        ],
        "branches": [
            {"from": b.from_node, "to": b.to_node, "r_pu": b.r, "x_pu": b.x, "l_max_pu": lim(b.l_max)}
            for b in net.branches
        ],
    }


def _split(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = np.where(m >= 0, m, 0.0)
    return pos, m - pos


@dataclass(frozen=True, eq=False)
class NetworkMatrices:
    B: np.ndarray
    A: np.ndarray
    C: np.ndarray
    D_R: np.ndarray
    D_X: np.ndarray
    M_p: np.ndarray
    M_q: np.ndarray
    H: np.ndarray
    D_Xp: np.ndarray
    D_Xm: np.ndarray
    H_p: np.ndarray
    H_m: np.ndarray

    def voltages(self, v0, p, q, l):
        return v0 + self.M_p @ p + self.M_q @ q - self.H @ l

    def flows(self, p, q, l):
        return self.C @ p - self.D_R @ l, self.C @ q - self.D_X @ l


def incidence(net: RadialNetwork) -> np.ndarray:
    n = net.n
    B = np.zeros((n + 1, n))
    for k, par in enumerate(net.parent):
        B[par + 1, k] = 1.0
        B[k + 1, k] = 1.0
    return B


def build_matrices(net: RadialNetwork) -> NetworkMatrices:
    """Assemble the linear DistFlow matrices (voltages and flows given currents)."""
    n = net.n
    B = incidence(net)
    A = B[1:, :] - np.eye(n)
    I_A = np.eye(n) - A
    if np.any(np.abs(np.diag(I_A)) < 1e-12) or np.any(np.tril(A) != 0):
        raise NetworkError("singular (I - A): topology is mis-ordered")
    C = solve_triangular(I_A, np.eye(n), lower=False, unit_diagonal=True)
    R = np.diag(net.r)
    X = np.diag(net.x)
    Z2 = np.diag(net.r**2 + net.x**2)
    D_R = C @ A @ R
    D_X = C @ A @ X
    H = C.T @ (2.0 * (R @ D_R + X @ D_X) + Z2)
    D_Xp, D_Xm = _split(D_X)
    H_p, H_m = _split(H)
    mats = NetworkMatrices(
        B=B, A=A, C=C, D_R=D_R, D_X=D_X,
        M_p=2.0 * C.T @ R @ C, M_q=2.0 * C.T @ X @ C, H=H,
        D_Xp=D_Xp, D_Xm=D_Xm, H_p=H_p, H_m=H_m,
    )
    for arr in vars(mats).values():
        arr.setflags(write=False)
    return mats
