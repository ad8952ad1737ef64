"""Choosing target error rates.

Two formulations:

* basic: one shared ``(fpr, tpr)`` pair minimising the decision loss over the
  feasible region (a linear objective over a convex polygon, so a vertex
  search is exact);
* flexible: one pair per group from each group's calibration-compatible
  region, minimising a share-weighted loss plus a quadratic disparity penalty.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .geometry import (
    ConvexPolygon,
    DecisionPolicy,
    achievable_set,
    clip_halfplane,
    group_constraints,
    roc_from_distribution,
    support_cutoffs,
)
from .scores import DiscreteScoreDistribution, GroupStats

__all__ = [
    "InfeasibleRegionError",
    "PenaltySpec",
    "RateTarget",
    "expected_loss",
    "optimize_basic",
    "optimize_flexible",
    "region_R_A",
]

TIE_TOL = 1e-12
GAP_TOL = 1e-8
LARGE_PENALTY = 1e6


class InfeasibleRegionError(ValueError):
    """The feasible region is empty; use the flexible formulation instead."""


@dataclass
class RateTarget:
    """Chosen error rates per group."""

    rates: dict[str, tuple[float, float]]
    objective: float
    mode: str
    gap: float = 0.0
    iterations: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        # polygon clipping can leave round-off just outside the unit square
        self.rates = {g: (min(max(float(a1), 0.0), 1.0), min(max(float(a2), 0.0), 1.0)) for g, (a1, a2) in self.rates.items()}

    def rate(self, group: str) -> tuple[float, float]:
        if group in self.rates:
            return self.rates[group]
        if "*" in self.rates:
            return self.rates["*"]
        raise KeyError(group)

    def to_dict(self) -> dict:
        return {
            "rates": {g: {"fpr": float(a1), "tpr": float(a2)} for g, (a1, a2) in self.rates.items()},
            "objective": float(self.objective),
            "mode": self.mode,
            "gap": float(self.gap),
            "iterations": int(self.iterations),
        }


@dataclass(frozen=True)
class PenaltySpec:
    """Disparity penalty matrix (over (fpr, tpr) differences) and low-group weight."""

    Lambda: np.ndarray
    gamma: float | None = None

    def __post_init__(self):
        L = np.asarray(self.Lambda, dtype=float)
        if L.shape != (2, 2):
            raise ValueError(f"Lambda must be 2x2, got shape {L.shape}")
        if not np.allclose(L, L.T, atol=1e-12 * max(1.0, np.abs(L).max())):
            raise ValueError("Lambda must be symmetric")
        if np.linalg.eigvalsh(L).min() < -1e-10 * max(1.0, np.abs(L).max()):
            raise ValueError("Lambda must be positive semidefinite")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        object.__setattr__(self, "Lambda", L)

    @classmethod
    def preset(cls, name: str, gamma: float | None = None, strength: float = LARGE_PENALTY) -> "PenaltySpec":
        if name in ("equal-odds", "equalized-odds"):
            return cls(strength * np.eye(2), gamma)
        if name in ("equal-tpr", "equal-opportunity"):
            return cls(np.diag([0.0, strength]), gamma)
        if name == "none":
            return cls(np.zeros((2, 2)), gamma)
        raise ValueError(f"unknown penalty preset {name!r}")


def expected_loss(rates, k: float, mean_outcome: float) -> float:
    """Decision loss ``k * fpr * (1 - E[Y]) + (1 - tpr) * E[Y]``."""
    a1, a2 = rates
    return float(k * a1 * (1.0 - mean_outcome) + (1.0 - a2) * mean_outcome)


def optimize_basic(region: ConvexPolygon, k: float, mean_outcome: float, groups=None) -> RateTarget:
    """Loss-minimising vertex of ``region``.

    Ties within 1e-12 go to the smaller fpr, then the larger tpr.
    """
    if region.is_empty:
        raise InfeasibleRegionError("feasible region is empty; use flexible mode to minimise disparities instead")
    v = region.vertices
    losses = k * v[:, 0] * (1.0 - mean_outcome) + (1.0 - v[:, 1]) * mean_outcome
    best = losses.min()
    tied = np.flatnonzero(losses <= best + TIE_TOL * max(1.0, abs(best)))
    i = tied[np.lexsort((-v[tied, 1], v[tied, 0]))[0]]
    point = (float(v[i, 0]), float(v[i, 1]))
    keys = list(groups) if groups is not None else ["*"]
    return RateTarget({g: point for g in keys}, float(losses[i]), "basic")


def region_R_A(
    dist: DiscreteScoreDistribution,
    stats: GroupStats,
    policy: DecisionPolicy,
    support_aware: bool = False,
) -> ConvexPolygon:
    """Rates of group ``A`` implementable by thresholding a calibrated score at the cutoff."""
    region = achievable_set(roc_from_distribution(dist))
    cut = support_cutoffs(dist, policy) if support_aware else None
    for h in group_constraints(stats, policy, dist.group, cut):
        region = clip_halfplane(region, h)
    return region


class _Problem:
    """f(z) = lin @ z + const + z' Q z over the product of group polygons."""

    def __init__(self, polys, lin, const, Q):
        self.polys = polys
        self.lin = lin
        self.const = const
        self.Q = Q

    def value(self, z):
        return float(self.lin @ z + self.const + z @ self.Q @ z)

    def grad(self, z):
        return self.lin + 2.0 * self.Q @ z

    def lmo(self, g):
        out = []
        for a, poly in enumerate(self.polys):
            v = poly.vertices
            out.append(v[int(np.argmin(v @ g[2 * a: 2 * a + 2]))])
        return np.concatenate(out)

    def gap(self, z):
        g = self.grad(z)
        return float(g @ (z - self.lmo(g)))


def _build(regions, penalty, k, means, weights):
    groups = list(regions)
    G = len(groups)
    lin = np.zeros(2 * G)
    const = 0.0
    for a, g in enumerate(groups):
        w, mu = weights[g], means[g]
        lin[2 * a: 2 * a + 2] = w * np.array([k * (1.0 - mu), -mu])
        const += w * mu
    lap = G * np.eye(G) - np.ones((G, G))  # sum over pairs of (z_a - z_b)' L (z_a - z_b)
    Q = np.kron(lap, penalty.Lambda)
    return _Problem([regions[g] for g in groups], lin, const, Q)


def _frank_wolfe(prob, z0, max_iter, tol):
    z = z0.copy()
    history = [prob.value(z)]
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = prob.grad(z)
        s = prob.lmo(g)
        d = s - z
        gap = float(-g @ d)
        if gap < tol:
            it -= 1
            break
        curv = float(d @ prob.Q @ d)
        step = 1.0 if curv <= 0 else min(1.0, gap / (2.0 * curv))
        z = z + step * d
        history.append(prob.value(z))
    else:
        gap = prob.gap(z)
    return z, gap, it, history


def _faces(poly: ConvexPolygon):
    """(origin, basis, kind) for every face: vertices, edges and the interior."""
    v = poly.vertices
    k = v.shape[0]
    out = [(v[i], np.zeros((2, 0)), "vertex") for i in range(k)]
    if k == 2:
        out.append((v[0], (v[1] - v[0]).reshape(2, 1), "edge"))
    elif k >= 3:
        out += [(v[i], (v[(i + 1) % k] - v[i]).reshape(2, 1), "edge") for i in range(k)]
        out.append((np.zeros(2), np.eye(2), "interior"))
    return out


def _exact_pair(prob):
    """Minimise over the product of two polygons by solving on every face pair.

    The objective is convex, so an optimum lies in the relative interior of
    some face pair, where it is a stationary point of the objective restricted
    to that face pair's affine hull; keeping only stationary points that land
    inside their face and taking the best is therefore exact.
    """
    P0, P1 = prob.polys
    F0, F1 = _faces(P0), _faces(P1)
    best_val, best_z = np.inf, None
    tol = 1e-9
    kinds = {}
    for (o0, B0, k0), (o1, B1, k1) in itertools.product(F0, F1):
        kinds.setdefault((k0, k1), []).append((o0, B0, o1, B1))
    for (k0, k1), items in kinds.items():
        d0, d1 = items[0][1].shape[1], items[0][3].shape[1]
        n = len(items)
        O = np.array([np.concatenate([o0, o1]) for o0, _, o1, _ in items])
        B = np.zeros((n, 4, d0 + d1))
        for i, (_, B0, _, B1) in enumerate(items):
            B[i, :2, :d0] = B0
            B[i, 2:, d0:] = B1
        if d0 + d1 == 0:
            Z = O
        else:
            M = 2.0 * np.einsum("nji,jk,nkl->nil", B, prob.Q, B)
            rhs = -np.einsum("nji,nj->ni", B, prob.lin + 2.0 * O @ prob.Q)
            T = np.einsum("nij,nj->ni", np.linalg.pinv(M, rcond=1e-13), rhs)
            # one step of iterative refinement
            T += np.einsum("nij,nj->ni", np.linalg.pinv(M, rcond=1e-13), rhs - np.einsum("nij,nj->ni", M, T))
            resid = np.abs(np.einsum("nij,nj->ni", M, T) - rhs).max(axis=1)
            scale = 1.0 + np.abs(rhs).max(axis=1) + np.abs(M).max(axis=(1, 2))
            ok = resid <= 1e-9 * scale
            Z = O + np.einsum("nij,nj->ni", B, T)
            for which, side, kind, poly in ((0, slice(0, d0), k0, P0), (1, slice(d0, d0 + d1), k1, P1)):
                if kind == "edge":
                    t = T[:, side][:, 0]
                    ok &= (t >= -tol) & (t <= 1 + tol)
                elif kind == "interior":
                    cols = slice(2 * which, 2 * which + 2)
                    for h in poly.halfplanes():
                        ok &= Z[:, cols] @ np.asarray(h.normal) <= h.offset + tol
            Z = Z[ok]
            if not Z.shape[0]:
                continue
        vals = Z @ prob.lin + np.einsum("ni,ij,nj->n", Z, prob.Q, Z)
        i = int(np.argmin(vals))
        if vals[i] < best_val - 1e-15:
            best_val, best_z = vals[i], Z[i]
    return best_z


def optimize_flexible(
    regions: Mapping[str, ConvexPolygon],
    penalty: PenaltySpec,
    k: float,
    means: Mapping[str, float],
    weights: Mapping[str, float] | None = None,
    method: str = "exact",
    max_iter: int = 10_000,
    tol: float = GAP_TOL,
) -> RateTarget:
    """Per-group rates minimising weighted loss plus disparity penalty.

    ``regions`` maps each group to its calibration-compatible rate polygon.
    ``weights`` default to ``(gamma, 1 - gamma)`` for the (low-mean, high-mean)
    pair when ``penalty.gamma`` is set, else equal weights.  With more than two
    groups the penalty is summed over all pairs.

    ``method="frank-wolfe"`` runs conditional gradient with exact line search
    from the first vertices.  ``method="exact"`` (two groups) solves the
    problem on every face pair of the two polygons, keeps the best stationary
    point, and certifies it with the Frank-Wolfe duality gap; Frank-Wolfe
    iterations resume from there if the certificate fails.
    """
    for g, r in regions.items():
        if r.is_empty:
            raise InfeasibleRegionError(f"calibration-compatible region of group {g!r} is empty")
    groups = list(regions)
    if weights is None:
        if penalty.gamma is not None and len(groups) == 2:
            lo, hi = sorted(groups, key=lambda g: means[g])
            weights = {lo: penalty.gamma, hi: 1.0 - penalty.gamma}
        else:
            weights = {g: 1.0 / len(groups) for g in groups}
    prob = _build(regions, penalty, k, means, weights)

    if method == "exact" and len(groups) == 2:
        z = _exact_pair(prob)
        gap = prob.gap(z)
        history = [prob.value(z)]
        iters = 0
        if gap >= tol:
            z, gap, iters, more = _frank_wolfe(prob, z, max_iter, tol)
            history += more[1:]
    elif method in ("exact", "frank-wolfe"):
        z0 = np.concatenate([r.vertices[0] for r in prob.polys])
        z, gap, iters, history = _frank_wolfe(prob, z0, max_iter, tol)
    else:
        raise ValueError(f"unknown method {method!r}")

    rates = {g: (float(z[2 * a]), float(z[2 * a + 1])) for a, g in enumerate(groups)}
    return RateTarget(rates, prob.value(z), "flexible", gap=gap, iterations=iters, history=history)
