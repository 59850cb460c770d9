"""Backward/forward sweep kernels.

The sweep is a tight scalar loop over branches, so it is compiled with numba
when available.  Setting ``WINDCAP_DISABLE_NUMBA=1`` (or running without numba
installed) selects the pure-numpy implementation instead; both produce the
same iterates.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("WINDCAP_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def _sweep_numpy(parent, r, x, p, q, v0, l_init, tol, max_iter):
    """Vectorised variant: flows via the subtree matrix, voltages via path sums."""
    n = p.shape[0]
    z2 = r * r + x * x
    # subtree indicator C[j, k] = 1 iff k lies in the subtree rooted at j
    C = np.eye(n)
    for k in range(n - 1, -1, -1):
        if parent[k] >= 0:
            C[parent[k]] += C[k]
    strict = C - np.eye(n)
    l = l_init.copy()
    for it in range(1, max_iter + 1):
        P = C @ p - strict @ (r * l)
        Q = C @ q - strict @ (x * l)
        drop = 2.0 * (r * P + x * Q) - z2 * l
        v = v0 + C.T @ drop
        if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
            return v, l, P, Q, it, False
        l_new = (P * P + Q * Q) / v
        dl = np.max(np.abs(l_new - l)) if n else 0.0
        l = l_new
        if dl <= tol:
            return v, l, P, Q, it, True
    return v, l, P, Q, max_iter, False


if NUMBA_AVAILABLE:

    @njit(cache=True)
    def _sweep_numba(parent, r, x, p, q, v0, l_init, tol, max_iter):
        n = p.shape[0]
        l = l_init.copy()
        P = np.zeros(n)
        Q = np.zeros(n)
        v = np.full(n, v0)
        for it in range(1, max_iter + 1):
            for k in range(n):
                P[k] = p[k]
                Q[k] = q[k]
            for k in range(n - 1, -1, -1):
                j = parent[k]
                if j >= 0:
                    P[j] += P[k] - r[k] * l[k]
                    Q[j] += Q[k] - x[k] * l[k]
            bad = False
            for k in range(n):
                j = parent[k]
                vp = v0 if j < 0 else v[j]
                v[k] = vp + 2.0 * (r[k] * P[k] + x[k] * Q[k]) - (r[k] * r[k] + x[k] * x[k]) * l[k]
                if not (v[k] > 0.0) or not np.isfinite(v[k]):
                    bad = True
            if bad:
                return v, l, P, Q, it, False
            dl = 0.0
            for k in range(n):
                ln = (P[k] * P[k] + Q[k] * Q[k]) / v[k]
                d = abs(ln - l[k])
                if d > dl:
                    dl = d
                l[k] = ln
            if dl <= tol:
                return v, l, P, Q, it, True
        return v, l, P, Q, max_iter, False


def bfs_sweep(parent, r, x, p, q, v0, l_init, tol=1e-10, max_iter=100, backend=None):
    """Run the DistFlow fixed point; returns ``(v, l, P, Q, iterations, converged)``.

    ``backend`` is ``"numba"`` or ``"numpy"``; default
    follows the ``WINDCAP_DISABLE_NUMBA`` flag.
    """
    args = (
        np.ascontiguousarray(parent, dtype=np.int64),
        np.ascontiguousarray(r, dtype=np.float64),
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(p, dtype=np.float64),
        np.ascontiguousarray(q, dtype=np.float64),
        float(v0),
        np.ascontiguousarray(l_init, dtype=np.float64),
        float(tol),
        int(max_iter),
    )
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _sweep_numba(*args)
    return _sweep_numpy(*args)
