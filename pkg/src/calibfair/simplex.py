"""Dense bounded-variable revised simplex.

Solves ``min c @ x`` subject to ``A_eq @ x == b_eq``, ``A_ub @ x <= b_ub`` and
per-variable bounds ``lower <= x <= upper`` (either side may be infinite).
Inequalities get slack columns; everything else is handled natively by the
bounded-variable ratio test, so box constraints never become rows.

Phase 1 starts from an all-artificial basis.  Pricing is Dantzig's rule.
After a run of degenerate pivots it switches to a seeded random choice among
the eligible columns until the objective moves again; on heavily degenerate
transport LPs this escapes stalls far sooner than Bland's rule, and the fixed
seed keeps solves reproducible.  The basis inverse is kept explicitly and updated
with rank-one (eta) updates, refactorised periodically.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "solve_lp",
]

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9
OPT_TOL = 1e-9
REFACTOR_EVERY = 50
DEGENERATE_RUN = 25

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"
    ITERATION_LIMIT = "iteration_limit"


@dataclass
class LinearProgram:
    """A linear program in mixed equality / inequality / bound form."""

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_eq, self.b_eq = _check_block(self.A_eq, self.b_eq, n, "eq")
        self.A_ub, self.b_ub = _check_block(self.A_ub, self.b_ub, n, "ub")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if self.lower.size != n or self.upper.size != n:
            raise ValueError(f"bounds must have length {n}")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValueError("bounds must not be NaN")
        if np.any(self.lower > self.upper):
            bad = int(np.flatnonzero(self.lower > self.upper)[0])
            raise ValueError(f"lower bound exceeds upper bound for variable {bad}")
        if np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise ValueError("bounds must admit a finite value")

    @property
    def n_vars(self) -> int:
        return self.c.size


def _check_block(A, b, n, name):
    if A is None and b is None:
        return np.zeros((0, n)), np.zeros(0)
    if A is None or b is None:
        raise ValueError(f"A_{name} and b_{name} must be given together")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape != (b.size, n):
        raise ValueError(f"A_{name} has shape {A.shape}, expected ({b.size}, {n})")
    return A, b


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    objective: float
    iterations: int
    # Phase-1 residual per original row (signed, b - A x) when infeasible.
    residuals: np.ndarray | None = None
    message: str = ""

    @property
    def success(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@dataclass
class _Tableau:
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    status: np.ndarray
    x: np.ndarray
    basis: np.ndarray
    B_inv: np.ndarray = field(default=None)
    iterations: int = 0


class _Breakdown(Exception):
    pass


def solve_lp(lp: LinearProgram, max_iter: int = 50_000, dump_path: str | Path | None = None) -> LpSolution:
    """Solve ``lp`` with the two-phase bounded revised simplex method.

    Parameters
    ----------
    lp : LinearProgram
    max_iter : int
        Total pivot budget over both phases.
    dump_path : path, optional
        When the solve does not end optimal, the final basis and primal values
        are written there as CSV for triage.
    """
    n = lp.n_vars
    m_eq, m_ub = lp.b_eq.size, lp.b_ub.size
    m = m_eq + m_ub

    # standard form: [A_eq 0; A_ub I] [x; s] = [b_eq; b_ub], s >= 0
    A = np.zeros((m, n + m_ub))
    A[:m_eq, :n] = lp.A_eq
    A[m_eq:, :n] = lp.A_ub
    A[m_eq:, n:] = np.eye(m_ub)
    b = np.concatenate([lp.b_eq, lp.b_ub])
    lower = np.concatenate([lp.lower, np.zeros(m_ub)])
    upper = np.concatenate([lp.upper, np.full(m_ub, np.inf)])
    cost = np.concatenate([lp.c, np.zeros(m_ub)])
    n_struct = n + m_ub

    status = np.where(np.isfinite(lower), _AT_LOWER, np.where(np.isfinite(upper), _AT_UPPER, _FREE))
    x = np.where(status == _AT_LOWER, lower, np.where(status == _AT_UPPER, upper, 0.0))

    if m == 0:
        # only bounds: each variable sits at its cheaper finite bound
        xs = x[:n].copy()
        for j in range(n):
            if lp.c[j] > 0:
                xs[j] = lp.lower[j]
            elif lp.c[j] < 0:
                xs[j] = lp.upper[j]
            if not np.isfinite(xs[j]):
                return LpSolution(LpStatus.UNBOUNDED, None, -np.inf, 0, message=f"variable {j} unbounded")
        return LpSolution(LpStatus.OPTIMAL, xs, float(lp.c @ xs), 0)

    resid = b - A @ x
    sign = np.where(resid >= 0, 1.0, -1.0)
    A_full = np.hstack([A, np.diag(sign)])
    lower_full = np.concatenate([lower, np.zeros(m)])
    upper_full = np.concatenate([upper, np.full(m, np.inf)])
    status_full = np.concatenate([status, np.full(m, _BASIC)])
    x_full = np.concatenate([x, np.abs(resid)])
    basis = np.arange(n_struct, n_struct + m)

    tab = _Tableau(A_full, b, lower_full, upper_full, status_full, x_full, basis, np.diag(sign))

    try:
        phase1_cost = np.concatenate([np.zeros(n_struct), np.ones(m)])
        outcome = _run(tab, phase1_cost, max_iter)
        if outcome == "iteration_limit":
            return _finish(tab, LpStatus.ITERATION_LIMIT, n, lp, dump_path, "iteration limit in phase 1")
        infeas = float(tab.x[n_struct:].sum())
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if infeas > 1e-9 * scale:
            res = sign * tab.x[n_struct:]
            return _finish(tab, LpStatus.INFEASIBLE, n, lp, dump_path, f"phase 1 residual {infeas:.3e}", residuals=res)

        # artificials are pinned to zero for phase 2
        tab.upper[n_struct:] = 0.0
        tab.x[n_struct:] = np.where(tab.status[n_struct:] == _BASIC, tab.x[n_struct:], 0.0)
        phase2_cost = np.concatenate([cost, np.zeros(m)])
        outcome = _run(tab, phase2_cost, max_iter)
    except _Breakdown as exc:
        return _finish(tab, LpStatus.NUMERICAL_FAILURE, n, lp, dump_path, str(exc))

    if outcome == "unbounded":
        return _finish(tab, LpStatus.UNBOUNDED, n, lp, dump_path, "unbounded ray found")
    if outcome == "iteration_limit":
        return _finish(tab, LpStatus.ITERATION_LIMIT, n, lp, dump_path, "iteration limit in phase 2")

    # Harris steps may leave bounded variables a hair outside their box
    xs = np.clip(tab.x[:n], lp.lower, lp.upper)
    # verify against the original data, never trust the updated iterate blindly
    viol = 0.0
    if m_eq:
        viol = max(viol, float(np.abs(lp.A_eq @ xs - lp.b_eq).max()))
    if m_ub:
        viol = max(viol, float((lp.A_ub @ xs - lp.b_ub).max(initial=0.0)))
    bound_viol = float(max((lp.lower - xs).max(initial=0.0), (xs - lp.upper).max(initial=0.0)))
    if viol > 1e-7 or bound_viol > 1e-9:
        return _finish(
            tab, LpStatus.NUMERICAL_FAILURE, n, lp, dump_path,
            f"final residual {viol:.3e}, bound violation {bound_viol:.3e}",
        )
    return LpSolution(LpStatus.OPTIMAL, xs, float(lp.c @ xs), tab.iterations)


def _finish(tab, status, n, lp, dump_path, message, residuals=None):
    if dump_path is not None:
        _dump(tab, dump_path)
    x = tab.x[:n].copy() if status is LpStatus.NUMERICAL_FAILURE else None
    if status is LpStatus.UNBOUNDED:
        obj = -np.inf
    else:
        obj = float("nan") if x is None else float(lp.c @ x)
    return LpSolution(status, x, obj, tab.iterations, residuals, message)


def _dump(tab, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["var", "status", "value", "lower", "upper", "basic_row"])
        row_of = {int(v): r for r, v in enumerate(tab.basis)}
        for j in range(tab.x.size):
            w.writerow([j, int(tab.status[j]), repr(float(tab.x[j])), tab.lower[j], tab.upper[j], row_of.get(j, "")])


def _refactor(tab):
    B = tab.A[:, tab.basis]
    try:
        B_inv = np.linalg.inv(B)
    except np.linalg.LinAlgError as exc:
        raise _Breakdown("singular basis on refactorisation") from exc
    if not np.all(np.isfinite(B_inv)) or np.abs(B @ B_inv - np.eye(B.shape[0])).max() > 1e-6:
        raise _Breakdown("ill-conditioned basis on refactorisation")
    tab.B_inv = B_inv
    nonbasic = tab.status != _BASIC
    rhs = tab.b - tab.A[:, nonbasic] @ tab.x[nonbasic]
    tab.x[tab.basis] = B_inv @ rhs


def _run(tab, cost, max_iter):
    """Iterate until optimal for ``cost``; returns 'optimal', 'unbounded' or 'iteration_limit'."""
    A, lower, upper = tab.A, tab.lower, tab.upper
    degenerate_run = 0
    stalled = False
    since_refactor = 0
    rng = np.random.default_rng(0)
    _refactor(tab)
    objective = float(cost @ tab.x)

    while True:
        if tab.iterations >= max_iter:
            return "iteration_limit"
        if since_refactor >= REFACTOR_EVERY:
            _refactor(tab)
            since_refactor = 0
            objective = float(cost @ tab.x)

        y = tab.B_inv.T @ cost[tab.basis]
        d = cost - A.T @ y
        st = tab.status
        can_up = ((st == _AT_LOWER) | (st == _FREE)) & (d < -OPT_TOL) & (upper > lower)
        can_down = ((st == _AT_UPPER) | (st == _FREE)) & (d > OPT_TOL) & (upper > lower)
        eligible = can_up | can_down
        if not eligible.any():
            return "optimal"
        if stalled:
            q = int(rng.choice(np.flatnonzero(eligible)))
        else:
            q = int(np.argmax(np.where(eligible, np.abs(d), -1.0)))
        direction = 1.0 if can_up[q] else -1.0

        w = tab.B_inv @ A[:, q]
        # basic variables move by -direction * w * theta
        step = direction * w
        xb = tab.x[tab.basis]
        lb, ub = lower[tab.basis], upper[tab.basis]

        theta = np.inf
        if np.isfinite(upper[q]) and np.isfinite(lower[q]):
            theta = upper[q] - lower[q]
        leave = -1
        leave_to_upper = False

        dec = step > PIVOT_TOL
        inc = step < -PIVOT_TOL
        ratios = np.full(step.size, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios[dec] = (xb[dec] - lb[dec]) / step[dec]
            ratios[inc] = (ub[inc] - xb[inc]) / (-step[inc])
        ratios = np.maximum(ratios, 0.0)

        if np.isfinite(ratios).any():
            # Harris pass: relaxed bound, then the largest pivot among candidates
            relaxed = np.full(step.size, np.inf)
            with np.errstate(divide="ignore", invalid="ignore"):
                relaxed[dec] = (xb[dec] - lb[dec] + FEAS_TOL) / step[dec]
                relaxed[inc] = (ub[inc] - xb[inc] + FEAS_TOL) / (-step[inc])
            if stalled:
                cand = np.flatnonzero(ratios <= ratios.min() + 1e-12)
            else:
                cand = np.flatnonzero(ratios <= relaxed.min())
            if cand.size:
                r = int(cand[np.argmax(np.abs(step[cand]))])
                if ratios[r] < theta:
                    theta = ratios[r]
                    leave = r
                    leave_to_upper = bool(inc[r])

        if not np.isfinite(theta):
            return "unbounded"

        tab.iterations += 1
        since_refactor += 1
        # progress is judged by the objective: tiny Harris steps do not count
        gain = theta * abs(d[q])
        if gain <= 1e-12 * (1.0 + abs(objective)):
            degenerate_run += 1
            if degenerate_run >= DEGENERATE_RUN:
                stalled = True
        else:
            degenerate_run = 0
            if gain > 1e-9 * (1.0 + abs(objective)):
                stalled = False
        objective -= gain

        tab.x[tab.basis] = xb - theta * step
        tab.x[q] = tab.x[q] + direction * theta

        if leave < 0:
            # bound flip of the entering variable, basis unchanged
            tab.status[q] = _AT_UPPER if direction > 0 else _AT_LOWER
            tab.x[q] = upper[q] if direction > 0 else lower[q]
            continue

        pivot = w[leave]
        if abs(pivot) < PIVOT_TOL:
            raise _Breakdown(f"pivot {pivot:.3e} below tolerance")
        out = tab.basis[leave]
        tab.status[out] = _AT_UPPER if leave_to_upper else _AT_LOWER
        tab.x[out] = upper[out] if leave_to_upper else lower[out]
        tab.status[q] = _BASIC
        tab.basis[leave] = q

        row = tab.B_inv[leave] / pivot
        tab.B_inv -= np.outer(w, row)
        tab.B_inv[leave] = row
