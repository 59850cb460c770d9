from pathlib import Path

import numpy as np
import pytest

from windcap.netmodel import BranchSpec, NodeSpec, RadialNetwork, load_network

DATA = Path(__file__).resolve().parents[1] / "src" / "windcap" / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def three_node():
    return load_network(DATA / "three_node.json")


@pytest.fixture(scope="session")
def wf19():
    return load_network(DATA / "wf19.json")


def random_tree(rng, n, r_hi=0.02, x_hi=0.04, p_hi=None, q_hi=None, v0=1.0):
    """Random radial network with ids 1..n and head 0 (branch order shuffled)."""
    parents = [0] + [int(rng.integers(0, k)) + 1 if k else 0 for k in range(1, n)]
    p_hi = 1.0 / n if p_hi is None else p_hi
    q_hi = 0.5 / n if q_hi is None else q_hi
    nodes = [NodeSpec(k + 1, float(rng.uniform(0, p_hi)), -q_hi, q_hi) for k in range(n)]
    branches = [BranchSpec(parents[k], k + 1, float(rng.uniform(1e-3, r_hi)), float(rng.uniform(1e-3, x_hi)))
                for k in range(n)]
    order = rng.permutation(n)
    return RadialNetwork.from_specs([nodes[i] for i in order], [branches[i] for i in order], v0=v0)
