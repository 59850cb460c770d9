import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tree
from windcap.netmodel import (
    BranchSpec,
    NetworkError,
    NodeSpec,
    RadialNetwork,
    build_matrices,
    load_network,
    network_from_dict,
    network_to_dict,
)
from windcap.powerflow import solve


def test_three_node_file(three_node):
    assert three_node.n == 2
    assert list(three_node.ids) == [2, 3]
    np.testing.assert_allclose(three_node.r, 0.228)
    np.testing.assert_allclose(three_node.x, 0.092)
    assert three_node.v0 == pytest.approx(1.0)
    np.testing.assert_allclose(three_node.v_max, 1.21)


def test_three_node_matrices(three_node):
    m = build_matrices(three_node)
    np.testing.assert_array_equal(m.C, [[1, 1], [0, 1]])
    np.testing.assert_allclose(m.M_q, 2 * 0.092 * np.array([[1, 1], [1, 2]]))
    np.testing.assert_allclose(m.M_p, 2 * 0.228 * np.array([[1, 1], [1, 2]]))


def test_wf19_layout(wf19):
    assert wf19.n == 20
    assert wf19.head_branches.sum() == 1
    assert wf19.leaves.sum() == 4
    assert wf19.base_mva == 10.0
    np.testing.assert_allclose(wf19.p[wf19.p > 0], 0.165)


def test_topological_order_parents_first(wf19):
    for k, par in enumerate(wf19.parent):
        assert par < k


def _specs():
    nodes = [NodeSpec(1, 0.1, -0.1, 0.1), NodeSpec(2, 0.1, -0.1, 0.1)]
    branches = [BranchSpec(0, 1, 0.01, 0.02), BranchSpec(1, 2, 0.01, 0.02)]
    return nodes, branches


@pytest.mark.parametrize("mutate, msg", [
    (lambda n, b: (n, b + [BranchSpec(0, 2, 0.01, 0.01)]), "non-radial"),
    (lambda n, b: (n, [BranchSpec(0, 1, 0.01, 0.02), BranchSpec(1, 7, 0.01, 0.02)]), "unknown"),
    (lambda n, b: (n, [BranchSpec(0, 1, 0.0, 0.0), b[1]]), "degenerate"),
    (lambda n, b: (n, [BranchSpec(0, 1, -0.1, 0.02), b[1]]), "negative"),
    (lambda n, b: ([n[0], NodeSpec(2, 0, 0.1, 0.2)], b), "q_min"),
    (lambda n, b: ([n[0], NodeSpec(2, 0, 0, 0, v_min=1.2, v_max=1.1)], b), "voltage limits"),
    (lambda n, b: ([n[0], n[0]], b), "duplicate"),
])
def test_validation_errors(mutate, msg):
    nodes, branches = mutate(*_specs())
    with pytest.raises(NetworkError, match=msg):
        RadialNetwork.from_specs(nodes, branches)


def test_cycle_rejected():
    nodes = [NodeSpec(1), NodeSpec(2)]
    branches = [BranchSpec(0, 1, 0.01, 0.01), BranchSpec(2, 2, 0.01, 0.01)]
    with pytest.raises(NetworkError):
        RadialNetwork.from_specs(nodes, branches)


def test_round_trip(wf19):
    again = network_from_dict(network_to_dict(wf19))
    np.testing.assert_allclose(again.p, wf19.p)
    np.testing.assert_allclose(again.v_max, wf19.v_max)
    np.testing.assert_array_equal(again.parent, wf19.parent)
    assert again.v0 == pytest.approx(wf19.v0)


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(NetworkError, match="parse"):
        load_network(bad)
    bad.write_text(json.dumps({"nodes": [{"id": 1}]}))
    with pytest.raises(NetworkError):
        load_network(bad)


def test_matrices_read_only(three_node):
    m = build_matrices(three_node)
    with pytest.raises(ValueError):
        m.C[0, 0] = 2.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 50))
def test_subtree_matrix_is_path_indicator(seed, n):
    net = random_tree(np.random.default_rng(seed), n)
    C = build_matrices(net).C
    for j in range(n):
        for k in range(n):
            # k is in the subtree of j iff j lies on the path from k to the head
            a, on_path = k, False
            while a >= 0:
                if a == j:
                    on_path = True
                    break
                a = net.parent[a]
            assert C[j, k] == (1.0 if on_path else 0.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 30))
def test_matrix_model_reproduces_oracle(seed, n):
    rng = np.random.default_rng(seed)
    net = random_tree(rng, n)
    q = rng.uniform(net.q_min, net.q_max)
    sol = solve(net, q=q)
    assert sol.converged
    m = build_matrices(net)
    P, Q = m.flows(net.p, q, sol.l)
    v = m.voltages(net.v0, net.p, q, sol.l)
    assert np.max(np.abs(P - sol.P)) <= 1e-8
    assert np.max(np.abs(Q - sol.Q)) <= 1e-8
    assert np.max(np.abs(v - sol.v)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 30))
def test_reactive_sensitivity_monotone_for_inductive_networks(seed, n):
    m = build_matrices(random_tree(np.random.default_rng(seed), n))
    assert np.all(m.M_q >= 0)
    assert np.all(m.C >= 0)
    np.testing.assert_allclose(m.M_q, m.M_q.T)
