"""Brute-force reference solvers used by the tests.

They share no code with the package beyond plain numpy.
"""

from __future__ import annotations

import itertools

import numpy as np


def lp_vertex_enumeration(c, A_ub, b_ub, A_eq=None, b_eq=None, tol=1e-9):
    """Minimise ``c @ x`` over ``{A_ub x <= b_ub, A_eq x = b_eq, x >= 0}`` by listing vertices.

    Returns ``("infeasible", None, None)``, ``("unbounded", None, None)`` or
    ``("optimal", value, x)``.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    G = np.vstack([np.asarray(A_ub, dtype=float).reshape(-1, n), -np.eye(n)])
    h = np.concatenate([np.asarray(b_ub, dtype=float).ravel(), np.zeros(n)])
    E = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    f = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    verts = _vertices(G, h, E, f, tol)
    if not verts:
        return "infeasible", None, None
    # a recession direction with negative cost means the program is unbounded
    Ed = np.vstack([E, np.ones((1, n))])
    fd = np.concatenate([np.zeros(E.shape[0]), [1.0]])
    rays = _vertices(G, np.zeros(G.shape[0]), Ed, fd, tol)
    if any(c @ r < -1e-9 for r in rays):
        return "unbounded", None, None
    vals = [c @ v for v in verts]
    i = int(np.argmin(vals))
    return "optimal", float(vals[i]), verts[i]


def _vertices(G, h, E, f, tol):
    n = G.shape[1]
    need = n - E.shape[0]
    out = []
    if need < 0:
        return out
    for rows in itertools.combinations(range(G.shape[0]), need):
        M = np.vstack([E, G[list(rows)]])
        rhs = np.concatenate([f, h[list(rows)]])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, rhs)
        if np.all(G @ x <= h + tol) and np.allclose(E @ x, f, atol=tol):
            out.append(x)
    return out


def kernel_grid_search(A_eq, b_eq, cost, upper, step=1e-4, tol=1e-9):
    """Minimise a linear cost over ``{A x = b, 0 <= x <= upper}`` on a grid of free entries.

    The equality system is eliminated: for every choice of ``d = n - rank(A)``
    entries whose complement carries full rank, the first free entry runs over
    a grid of spacing ``step`` on ``[0, upper]``.  With ``d = 2`` the second
    free entry is then optimised exactly along the remaining line.  Solved
    entries that leave their bounds discard the point.  A vertex has ``d``
    entries at a bound and bounds lie on the grid, so the search is exact at
    vertices.  Returns ``(best_value or None, d)``; ``d <= 2`` is supported.
    """
    A = np.asarray(A_eq, dtype=float)
    b = np.asarray(b_eq, dtype=float)
    cost = np.asarray(cost, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = A.shape[1]
    r = np.linalg.matrix_rank(A, tol=1e-10)
    d = int(n - r)
    if d > 2:
        raise ValueError(f"grid search supports at most two free entries, got {d}")
    best = None
    for S in itertools.permutations(range(n), d) if d == 2 else itertools.combinations(range(n), d):
        C = [j for j in range(n) if j not in S]
        AC = A[:, C]
        if np.linalg.matrix_rank(AC, tol=1e-10) != r:
            continue
        pinv = np.linalg.pinv(AC)
        if d == 0:
            grid = np.zeros(1)
        else:
            grid = np.arange(int(round(upper[S[0]] / step)) + 1) * step
        rhs = b[None, :] - (np.outer(grid, A[:, S[0]]) if d else 0.0)
        base = rhs @ pinv.T
        resid = np.abs(base @ AC.T - rhs).max(axis=1)
        value = base @ cost[C] + (grid * cost[S[0]] if d else 0.0)
        lo = np.zeros(grid.size)
        hi = np.zeros(grid.size)
        if d == 2:
            # solved entries move as base - t * w along the second free entry t
            w = pinv @ A[:, S[1]]
            hi[:] = upper[S[1]]
            for k, wk in enumerate(w):
                if abs(wk) <= 1e-14:
                    continue
                a, bnd = base[:, k] / wk, (base[:, k] - upper[C[k]]) / wk
                lo = np.maximum(lo, np.minimum(a, bnd))
                hi = np.minimum(hi, np.maximum(a, bnd))
            slope = cost[S[1]] - cost[C] @ w
            t = np.where(slope >= 0, lo, hi)
            X = base - np.outer(t, w)
            value = value + slope * t
        else:
            X = base
        ok = (resid <= tol) & (lo <= hi + tol) & np.all(X >= -tol, axis=1) & np.all(X <= upper[C] + tol, axis=1)
        if ok.any():
            v = float(value[ok].min())
            best = v if best is None else min(best, v)
    return best, d


def upper_envelope_height(points, x):
    """Largest ``y`` with ``(x, y)`` in ``conv(points)``, by brute force over point pairs."""
    pts = np.asarray(points, dtype=float)
    best = -np.inf
    for a, b in itertools.combinations(range(len(pts)), 2):
        (x0, y0), (x1, y1) = pts[a], pts[b]
        lo, hi = min(x0, x1), max(x0, x1)
        if lo - 1e-15 <= x <= hi + 1e-15:
            if hi - lo < 1e-15:
                best = max(best, y0, y1)
            else:
                best = max(best, y0 + (y1 - y0) * (x - x0) / (x1 - x0))
    for p in pts:
        if abs(p[0] - x) < 1e-15:
            best = max(best, p[1])
    return best
