import csv
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tree
from newton_ac import newton_ac
from windcap._kernels import NUMBA_AVAILABLE, bfs_sweep
from windcap.powerflow import check_admissible, residuals, solve, sweep_2d


def test_three_node_base_point(three_node):
    # generation s2 = 0.005 - 0.02j, s3 = 0.01 - 0.015j pu
    q = np.array([-0.02, -0.015])
    sol = solve(three_node, q=q)
    assert sol.converged
    assert sol.residual < 1e-9
    np.testing.assert_allclose(sol.v, newton_ac(three_node, three_node.p, q), atol=1e-10)


def test_flat_start_admissible(three_node):
    verdict = check_admissible(three_node, p=np.zeros(2), q=np.zeros(2))
    assert verdict.admissible
    np.testing.assert_allclose(verdict.solution.v, 1.0)
    assert verdict.solution.q_head == 0.0


def test_wf19_rated_export_admissible(wf19):
    assert check_admissible(wf19).admissible


def test_voltage_violation_reported(wf19):
    verdict = check_admissible(wf19, q=wf19.q_max)
    assert not verdict.admissible
    assert verdict.worst.kind == "v_high"


def test_nonconvergence_reported(three_node):
    sol = solve(three_node, p=np.array([0.0, 0.0]), q=np.array([-3.0, -3.0]))
    assert not sol.converged
    verdict = check_admissible(three_node, p=np.zeros(2), q=np.array([-3.0, -3.0]))
    assert not verdict.admissible
    assert verdict.worst.kind == "non_convergence"


def test_current_limit(three_node):
    from dataclasses import replace
    tight = replace(three_node, branches=tuple(replace(b, l_max=1e-6) for b in three_node.branches))
    verdict = check_admissible(tight, q=np.array([0.5, 0.5]))
    assert any(v.kind == "l_high" for v in verdict.violations)


def test_input_checks(three_node):
    with pytest.raises(ValueError):
        solve(three_node, q=np.zeros(3))
    with pytest.raises(ValueError):
        solve(three_node, v0=-1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 30))
def test_sweep_matches_newton(seed, n):
    rng = np.random.default_rng(seed)
    net = random_tree(rng, n)
    q = rng.uniform(net.q_min, net.q_max)
    sol = solve(net, q=q)
    assert sol.converged
    assert np.max(np.abs(residuals(net, net.p, q, net.v0, sol.v, sol.l, sol.P, sol.Q))) < 1e-9
    assert np.max(np.abs(sol.v - newton_ac(net, net.p, q))) < 1e-8


@pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba not installed")
def test_backends_agree(wf19):
    args = (wf19.parent, wf19.r, wf19.x, wf19.p, 0.5 * wf19.q_max, wf19.v0, np.zeros(wf19.n))
    a = bfs_sweep(*args, backend="numba")
    b = bfs_sweep(*args, backend="numpy")
    assert a[4] == b[4] and a[5] and b[5]
    for u, w in zip(a[:4], b[:4]):
        np.testing.assert_allclose(u, w, atol=1e-14)


def test_env_flag_selects_numpy():
    code = "import windcap._kernels as k; print(k.USE_NUMBA)"
    env = dict(os.environ, WINDCAP_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


def test_sweep_grid_and_csv(three_node, tmp_path):
    res = sweep_2d(three_node, 2, 3, (-1, 1), (-1, 1), steps=21)
    assert res.admissible.shape == (21, 21)
    path = tmp_path / "sweep.csv"
    res.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["q_a_pu", "q_b_pu", "admissible", "worst_kind", "worst_magnitude"]
    assert len(rows) == 21 * 21 + 1


def test_sweep_degenerate_range(three_node):
    res = sweep_2d(three_node, 2, 3, (0.1, 0.1), (-1, 1), steps=5)
    assert res.admissible.shape == (1, 5)


def test_sweep_rejects_same_node(three_node):
    with pytest.raises(ValueError):
        sweep_2d(three_node, 2, 2, (0, 1), (0, 1))


def test_nonconvex_witness_on_synthetic_mask():
    from windcap.powerflow import SweepResult
    mask = np.ones((5, 5), dtype=bool)
    mask[2, 2] = False
    res = SweepResult(1, 2, np.arange(5.0), np.arange(5.0), mask, np.zeros((5, 5), object), np.zeros((5, 5)))
    a, b, m = res.nonconvex_witness()
    assert mask[a] and mask[b] and not mask[m]
    assert m == ((a[0] + b[0]) // 2, (a[1] + b[1]) // 2)
    full = SweepResult(1, 2, np.arange(5.0), np.arange(5.0), np.ones((5, 5), bool),
                       np.zeros((5, 5), object), np.zeros((5, 5)))
    assert full.nonconvex_witness() is None
