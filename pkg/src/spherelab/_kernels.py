"""Hot search kernels: depth-first sphere enumeration and Babai descent.

The implementations are plain Python loops over numpy arrays, compiled with
numba's ``@njit`` by default.  Setting the environment variable
``SPHERELAB_BACKEND=python`` before import selects the uncompiled fallback,
which runs the identical code path (same arithmetic, same results, much
slower).  ``benchmarks/bench_kernels.py`` times the two backends against
each other.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

__all__ = ["sphere_search", "babai_descent", "tree_metric", "backend_name", "warmup"]

_STATUS_OK = 0
_STATUS_RESTART_OVERFLOW = 1


def _sphere_search_impl(Rm, yt, axis, radius0, zigzag, growth, max_doublings):
    """Depth-first search for the metric-minimizing lattice vector.

    Levels are solved bottom-up on the triangular system ``Rm s = yt``; a
    partial candidate is *visited* when its accumulated metric is evaluated
    and admitted by the current radius.  The radius shrinks to each new best
    full-length metric, and ties are broken toward the lexicographically
    smaller coordinate vector so the output is bit-reproducible.  In zig-zag
    mode candidates at a level are enumerated outward from the unconstrained
    solution, so the first rejection exhausts the level.  If a pass admits
    no full-length candidate the search restarts with the radius scaled by
    ``growth``, up to ``max_doublings`` times.

    Returns (status, s_hat, tree_metric, visited, restarts).
    """
    m = Rm.shape[0]
    na = axis.shape[0]
    best = np.zeros(m)
    have_best = False
    best_metric = np.inf
    visited = 0
    restarts = 0
    radius = radius0
    svals = np.zeros(m)
    order = np.zeros((m, na), dtype=np.int64)
    pos = np.zeros(m, dtype=np.int64)
    res = np.zeros(m)
    acc = np.zeros(m + 1)

    while True:
        found_leaf = False
        acc[m] = 0.0
        lvl = m - 1
        entering = True
        while True:
            if entering:
                r = yt[lvl]
                for j in range(lvl + 1, m):
                    r -= Rm[lvl, j] * svals[j]
                res[lvl] = r
                if zigzag:
                    c = r / Rm[lvl, lvl]
                    j0 = 0
                    bd = abs(axis[0] - c)
                    for j in range(1, na):
                        d = abs(axis[j] - c)
                        if d < bd:
                            bd = d
                            j0 = j
                    order[lvl, 0] = j0
                    li = j0 - 1
                    ri = j0 + 1
                    for k in range(1, na):
                        if li < 0:
                            order[lvl, k] = ri
                            ri += 1
                        elif ri >= na:
                            order[lvl, k] = li
                            li -= 1
                        elif abs(axis[li] - c) <= abs(axis[ri] - c):
                            order[lvl, k] = li
                            li -= 1
                        else:
                            order[lvl, k] = ri
                            ri += 1
                else:
                    for k in range(na):
                        order[lvl, k] = k
                pos[lvl] = 0
                entering = False
            if pos[lvl] >= na:
                if lvl == m - 1:
                    break
                lvl += 1
                continue
            ci = order[lvl, pos[lvl]]
            pos[lvl] += 1
            d = res[lvl] - Rm[lvl, lvl] * axis[ci]
            t = acc[lvl + 1] + d * d
            if t <= radius:
                visited += 1
                svals[lvl] = axis[ci]
                if lvl == 0:
                    found_leaf = True
                    take = False
                    if t < best_metric:
                        take = True
                    elif t == best_metric and have_best:
                        for i in range(m):
                            if svals[i] < best[i]:
                                take = True
                                break
                            if svals[i] > best[i]:
                                break
                    if take:
                        best_metric = t
                        for i in range(m):
                            best[i] = svals[i]
                        have_best = True
                        radius = t
                else:
                    acc[lvl] = t
                    lvl -= 1
                    entering = True
            elif zigzag:
                pos[lvl] = na
        if have_best or found_leaf:
            return _STATUS_OK, best, best_metric, visited, restarts
        restarts += 1
        if restarts > max_doublings:
            return _STATUS_RESTART_OVERFLOW, best, best_metric, visited, restarts
        radius = radius0 * growth ** restarts


def _babai_descent_impl(Rm, yt, axis):
    """Successive quantized back-substitution on ``Rm s = yt``.

    Value ties quantize toward the smaller axis point.
    """
    m = Rm.shape[0]
    na = axis.shape[0]
    s = np.zeros(m)
    for lvl in range(m - 1, -1, -1):
        r = yt[lvl]
        for j in range(lvl + 1, m):
            r -= Rm[lvl, j] * s[j]
        c = r / Rm[lvl, lvl]
        bi = 0
        bd = abs(axis[0] - c)
        for j in range(1, na):
            d = abs(axis[j] - c)
            if d < bd:
                bd = d
                bi = j
        s[lvl] = axis[bi]
    return s


def _tree_metric_impl(Rm, yt, s):
    """Triangular-system residual accumulated in kernel order (top level first)."""
    m = Rm.shape[0]
    t = 0.0
    for lvl in range(m - 1, -1, -1):
        r = yt[lvl]
        for j in range(lvl + 1, m):
            r -= Rm[lvl, j] * s[j]
        d = r - Rm[lvl, lvl] * s[lvl]
        t += d * d
    return t


def _pick_backend() -> str:
    req = os.environ.get("SPHERELAB_BACKEND", "numba").strip().lower()
    if req not in ("numba", "python"):
        warnings.warn(f"unknown SPHERELAB_BACKEND={req!r}, using numba", stacklevel=2)
        req = "numba"
    if req == "numba":
        try:
            import numba  # noqa: F401
        except ImportError:  # pragma: no cover
            warnings.warn("numba unavailable, falling back to the python backend", stacklevel=2)
            req = "python"
    return req


_BACKEND = _pick_backend()

if _BACKEND == "numba":
    from numba import njit

    sphere_search = njit(cache=True)(_sphere_search_impl)
    babai_descent = njit(cache=True)(_babai_descent_impl)
    tree_metric = njit(cache=True)(_tree_metric_impl)
else:
    sphere_search = _sphere_search_impl
    babai_descent = _babai_descent_impl
    tree_metric = _tree_metric_impl


def backend_name() -> str:
    return _BACKEND


def warmup():
    """Trigger JIT compilation so timing runs do not pay it."""
    Rm = np.array([[2.0, 0.5], [0.0, 1.5]])
    yt = np.array([0.3, -0.4])
    axis = np.array([-1.0, 1.0])
    sphere_search(Rm, yt, axis, 100.0, True, 2.0, 30)
    sphere_search(Rm, yt, axis, 100.0, False, 2.0, 30)
    babai_descent(Rm, yt, axis)
    tree_metric(Rm, yt, axis.copy())
