"""ROC curves, achievable-rate polygons and the calibration-compatibility test.

Rates are points ``(fpr, tpr)`` in the unit square.  For a group with odds
``beta = mu / (1 - mu)`` and a cutoff ``c``, a classifier built by thresholding a
calibrated score at ``c`` must satisfy

* PPV >= c          <=>  c * fpr - beta * (1 - c) * tpr <= 0
* P(Y=1 | yhat=0) < c  <=>  c * fpr - beta * (1 - c) * tpr < c - beta * (1 - c)

Both are kept in cleared-denominator form so the corners (0, 0) and (1, 1)
need no special casing.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .scores import DiscreteScoreDistribution, GroupStats, group_stats

__all__ = [
    "ConvexPolygon",
    "DecisionPolicy",
    "EqualBaseRatesError",
    "FeasibilityReport",
    "HalfPlane",
    "RocCurve",
    "Verdict",
    "achievable_set",
    "breve_point",
    "clip_halfplane",
    "convex_hull",
    "feasibility",
    "feasible_region",
    "group_constraints",
    "intersect",
    "npv_halfplane",
    "ppv_halfplane",
    "roc_from_distribution",
    "support_cutoffs",
    "write_point_csv",
]

GEOM_TOL = 1e-12
BOUNDARY_BAND = 1e-7


class EqualBaseRatesError(ValueError):
    """Raised by :func:`breve_point` when the two groups share a base rate."""


@dataclass(frozen=True)
class DecisionPolicy:
    """Decision-maker parameters: false-positive cost ``k``, cutoff and cutoff half-width."""

    cutoff: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError(f"cutoff must lie in (0, 1), got {self.cutoff!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not (0.0 < self.cutoff - self.epsilon and self.cutoff + self.epsilon < 1.0):
            raise ValueError(f"cutoff interval ({self.lower_cutoff}, {self.upper_cutoff}) must lie inside (0, 1)")

    @classmethod
    def from_k(cls, k: float, epsilon: float = 0.0) -> "DecisionPolicy":
        if not k > 0:
            raise ValueError(f"k must be positive, got {k!r}")
        return cls(k / (k + 1.0), epsilon)

    @property
    def k(self) -> float:
        return self.cutoff / (1.0 - self.cutoff)

    @property
    def lower_cutoff(self) -> float:
        return self.cutoff - self.epsilon

    @property
    def upper_cutoff(self) -> float:
        return self.cutoff + self.epsilon

    def classify(self, scores) -> np.ndarray:
        return (np.asarray(scores, dtype=float) >= self.cutoff).astype(int)


@dataclass(frozen=True)
class HalfPlane:
    """The set ``{x : normal @ x <= offset}`` (``<`` when ``strict``)."""

    normal: tuple[float, float]
    offset: float
    strict: bool = False
    label: str = ""

    def slack(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.offset - pts @ np.asarray(self.normal)

    def contains(self, point, tol: float = 1e-9) -> bool:
        return bool(self.slack(point)[0] >= -tol)


def ppv_halfplane(odds: float, cutoff: float, label: str = "ppv") -> HalfPlane:
    return HalfPlane((cutoff, -odds * (1.0 - cutoff)), 0.0, False, label)


def npv_halfplane(odds: float, cutoff: float, label: str = "npv", strict: bool = True) -> HalfPlane:
    w = odds * (1.0 - cutoff)
    return HalfPlane((cutoff, -w), cutoff - w, strict, label)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points, tol: float = GEOM_TOL) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return np.zeros((0, 2))
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    keep = [pts[0]]
    for p in pts[1:]:
        if abs(p[0] - keep[-1][0]) > tol or abs(p[1] - keep[-1][1]) > tol:
            keep.append(p)
    pts = keep
    if len(pts) <= 2:
        return np.array(pts)

    def chain(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= tol:
                out.pop()
            out.append(p)
        return out

    lower = chain(pts)
    upper = chain(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] == 2 and np.allclose(hull[0], hull[1], atol=tol):
        hull = hull[:1]
    return hull


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise convex polygon; may be empty, a point or a segment.

    ``constraints`` records the half-planes this polygon was clipped by, so
    callers can tell when a point sits on a strict (open) boundary.
    """

    vertices: np.ndarray
    constraints: tuple[HalfPlane, ...] = field(default=())

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def from_points(cls, points, constraints=()) -> "ConvexPolygon":
        return cls(convex_hull(points), tuple(constraints))

    @classmethod
    def unit_square(cls) -> "ConvexPolygon":
        return cls(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.n_vertices == 0

    @property
    def is_degenerate(self) -> bool:
        """True for points and segments (zero area)."""
        return 0 < self.n_vertices < 3

    @property
    def area(self) -> float:
        if self.n_vertices < 3:
            return 0.0
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def halfplanes(self) -> list[HalfPlane]:
        """Half-plane description; degenerate shapes get end caps."""
        v = self.vertices
        k = self.n_vertices
        if k == 0:
            return [HalfPlane((0.0, 0.0), -1.0)]
        if k == 1:
            x, y = v[0]
            return [HalfPlane((1.0, 0.0), x), HalfPlane((-1.0, 0.0), -x), HalfPlane((0.0, 1.0), y), HalfPlane((0.0, -1.0), -y)]
        if k == 2:
            d = v[1] - v[0]
            nrm = np.array([d[1], -d[0]])
            return [
                HalfPlane(tuple(nrm), float(nrm @ v[0])),
                HalfPlane(tuple(-nrm), float(-nrm @ v[0])),
                HalfPlane(tuple(d), float(d @ v[1])),
                HalfPlane(tuple(-d), float(-d @ v[0])),
            ]
        out = []
        for i in range(k):
            a, b = v[i], v[(i + 1) % k]
            nrm = np.array([b[1] - a[1], a[0] - b[0]])  # outward for ccw order
            out.append(HalfPlane(tuple(nrm), float(nrm @ a)))
        return out

    def contains(self, point, tol: float = 1e-9) -> bool:
        if self.is_empty:
            return False
        p = np.asarray(point, dtype=float)
        if self.n_vertices == 1:
            return bool(np.linalg.norm(p - self.vertices[0]) <= tol)
        if self.n_vertices == 2:
            a, b = self.vertices
            d = b - a
            t = np.clip((p - a) @ d / (d @ d), 0.0, 1.0)
            return bool(np.linalg.norm(a + t * d - p) <= tol)
        for h in self.halfplanes():
            n = np.linalg.norm(h.normal)
            if h.slack(p)[0] < -tol * n:
                return False
        return True

    def upper_y(self, x: float, tol: float = 1e-12) -> float | None:
        """Largest y with (x, y) in the polygon, or None if x is outside its span."""
        v = self.vertices
        if self.is_empty or x < v[:, 0].min() - tol or x > v[:, 0].max() + tol:
            return None
        ys = list(v[np.abs(v[:, 0] - x) <= tol, 1])
        k = self.n_vertices
        for i in range(k if k > 2 else k - 1):
            a, b = v[i], v[(i + 1) % k]
            lo, hi = min(a[0], b[0]), max(a[0], b[0])
            if hi - lo > tol and lo - tol <= x <= hi + tol:
                t = (x - a[0]) / (b[0] - a[0])
                ys.append(a[1] + t * (b[1] - a[1]))
        return float(max(ys)) if ys else None

    def on_strict_boundary(self, point, tol: float = 1e-9) -> list[str]:
        """Labels of strict constraints that ``point`` satisfies only with equality."""
        hits = []
        for h in self.constraints:
            if h.strict and abs(h.slack(point)[0]) <= tol * max(1.0, np.linalg.norm(h.normal)):
                hits.append(h.label)
        return hits

    def reflect(self) -> "ConvexPolygon":
        """Image under v -> (1, 1) - v."""
        return ConvexPolygon.from_points(1.0 - self.vertices, self.constraints)


@dataclass(frozen=True)
class RocCurve:
    points: np.ndarray
    group: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def fpr(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def tpr(self) -> np.ndarray:
        return self.points[:, 1]


def roc_from_distribution(dist: DiscreteScoreDistribution) -> RocCurve:
    """Sweep the cutoff from above the top score down through every support value."""
    if dist.degenerate:
        raise ValueError(f"group {dist.group!r} has a degenerate base rate; its ROC curve is undefined")
    pos = dist.cond_means * dist.masses
    neg = (1.0 - dist.cond_means) * dist.masses
    # descending cutoffs: cumulative mass at or above each value
    tpr = np.concatenate([[0.0], np.cumsum(pos[::-1]) / pos.sum()])
    fpr = np.concatenate([[0.0], np.cumsum(neg[::-1]) / neg.sum()])
    tpr[-1] = fpr[-1] = 1.0
    return RocCurve(np.column_stack([fpr, tpr]), dist.group)


def achievable_set(roc: RocCurve) -> ConvexPolygon:
    """Convex hull of the ROC points and their reflections through (0.5, 0.5)."""
    pts = np.vstack([roc.points, 1.0 - roc.points])
    return ConvexPolygon.from_points(pts)


def _clip_vertices(v: np.ndarray, h: HalfPlane, tol: float) -> list:
    k = v.shape[0]
    if k == 0:
        return []
    nrm = np.asarray(h.normal, dtype=float)
    scale = max(1.0, float(np.abs(nrm).max()))
    slack = h.offset - v @ nrm
    inside = slack >= -tol * scale
    out = []
    for i in range(k):
        s, e = v[i - 1], v[i]
        s_in, e_in = inside[i - 1], inside[i]
        if e_in:
            if not s_in:
                out.append(_edge_point(s, e, slack[i - 1], slack[i]))
            out.append(e)
        elif s_in:
            out.append(_edge_point(s, e, slack[i - 1], slack[i]))
    return out


def _edge_point(s, e, ss, se):
    t = ss / (ss - se)
    return s + t * (e - s)


def clip_halfplane(poly: ConvexPolygon, line: HalfPlane, tol: float = GEOM_TOL) -> ConvexPolygon:
    """Sutherland-Hodgman step against one half-plane.

    Strict half-planes are clipped as closed ones; the constraint is recorded
    on the result so strictness can be reported later.
    """
    if np.allclose(line.normal, 0.0):
        raise ValueError("half-plane normal must be non-zero")
    pts = _clip_vertices(poly.vertices, line, tol)
    return ConvexPolygon.from_points(pts, poly.constraints + (line,)) if pts else ConvexPolygon(
        np.zeros((0, 2)), poly.constraints + (line,)
    )


def intersect(a: ConvexPolygon, b: ConvexPolygon, tol: float = GEOM_TOL) -> ConvexPolygon:
    """Intersection of two convex polygons by clipping ``a`` against each edge of ``b``."""
    if a.is_empty or b.is_empty:
        return ConvexPolygon(np.zeros((0, 2)), a.constraints + b.constraints)
    v = a.vertices
    for h in b.halfplanes():
        v = np.array(_clip_vertices(v, h, tol)).reshape(-1, 2)
        if v.shape[0] == 0:
            break
    return ConvexPolygon.from_points(v, a.constraints + b.constraints)


def breve_point(stats_L: GroupStats, stats_H: GroupStats, policy: DecisionPolicy) -> tuple[float, float]:
    """Intersection of the PPV boundary of the low-odds group and the NPV boundary of the high-odds group.

    With ``epsilon > 0`` the PPV line uses ``cutoff + epsilon`` and the NPV line
    ``cutoff - epsilon``.
    """
    bl, bh = stats_L.odds, stats_H.odds
    if abs(bh - bl) <= 1e-12 * max(1.0, bh):
        raise EqualBaseRatesError("equal base rates: the boundary lines are parallel")
    if policy.epsilon == 0.0:
        p = policy.cutoff
        a1 = bl / (bh - bl) * (bh - (1.0 + bh) * p) / p
        a2 = 1.0 / (bh - bl) * (bh * (1.0 - p) - p) / (1.0 - p)
        return float(a1), float(a2)
    return _line_intersection(bl, policy.upper_cutoff, bh, policy.lower_cutoff)


def _line_intersection(beta_ppv, c_hi, beta_npv, c_lo):
    # PPV line: tpr = r * fpr ; NPV line: 1 - fpr = t * (1 - tpr)
    r = c_hi / (beta_ppv * (1.0 - c_hi))
    t = beta_npv * (1.0 - c_lo) / c_lo
    denom = t * r - 1.0
    if abs(denom) <= 1e-15:
        raise EqualBaseRatesError("boundary lines are parallel")
    a1 = (t - 1.0) / denom
    return float(a1), float(r * a1)


def support_cutoffs(dist: DiscreteScoreDistribution, policy: DecisionPolicy) -> tuple[float | None, float | None]:
    """Nearest usable output values on each side of the cutoff interval.

    Returns ``(lo, hi)``: ``hi`` is the smallest support value classified
    positive (>= cutoff + epsilon) and ``lo`` the largest classified negative
    (< cutoff, and <= cutoff - epsilon).  ``None`` when a side is empty.
    """
    p = dist.values
    hi_vals = p[p >= policy.upper_cutoff]
    if policy.epsilon > 0:
        lo_vals = p[p <= policy.lower_cutoff]
    else:
        lo_vals = p[p < policy.cutoff]
    hi = float(hi_vals.min()) if hi_vals.size else None
    lo = float(lo_vals.max()) if lo_vals.size else None
    return lo, hi


def group_constraints(
    stats: GroupStats,
    policy: DecisionPolicy,
    label: str = "",
    cutoffs: tuple[float | None, float | None] | None = None,
) -> list[HalfPlane]:
    """PPV and NPV half-planes for one group.

    ``cutoffs`` overrides ``(lower, upper)`` cutoffs, e.g. with the values from
    :func:`support_cutoffs`; the NPV side is then closed rather than strict,
    since scores at ``lower`` are attainable.
    """
    if cutoffs is None:
        lo, hi, strict = policy.lower_cutoff, policy.upper_cutoff, True
    else:
        (lo, hi), strict = cutoffs, False
    out = []
    if hi is None:
        # nothing may be classified positive
        out += [HalfPlane((1.0, 0.0), 0.0, False, f"ppv:{label}"), HalfPlane((0.0, 1.0), 0.0, False, f"ppv:{label}")]
    else:
        out.append(ppv_halfplane(stats.odds, hi, f"ppv:{label}"))
    if lo is None:
        out += [HalfPlane((-1.0, 0.0), -1.0, False, f"npv:{label}"), HalfPlane((0.0, -1.0), -1.0, False, f"npv:{label}")]
    elif lo <= 0.0:
        out.append(HalfPlane((0.0, -1.0), -1.0, False, f"npv:{label}"))
    else:
        out.append(npv_halfplane(stats.odds, lo, f"npv:{label}", strict=strict))
    return out


def _as_list(dists) -> list[DiscreteScoreDistribution]:
    if isinstance(dists, Mapping):
        return list(dists.values())
    return list(dists)


def _shares(dists, shares):
    if shares is None:
        return [1.0 / len(dists)] * len(dists)
    if isinstance(shares, Mapping):
        return [shares[d.group] for d in dists]
    return list(shares)


def feasible_region(
    dists,
    policy: DecisionPolicy,
    support_aware: bool = False,
) -> tuple[ConvexPolygon, list[HalfPlane]]:
    """Rates implementable with equal error rates by a calibrated score at the cutoff.

    The region is the intersection of every group's achievable set with every
    group's PPV/NPV half-planes.  With ``support_aware`` the cutoffs are moved
    to the nearest attainable support values of each group (see
    :func:`support_cutoffs`), which is the region a kernel restricted to the
    input support can actually realise.
    """
    dists = _as_list(dists)
    region = None
    constraints = []
    for d in dists:
        s = achievable_set(roc_from_distribution(d))
        region = s if region is None else intersect(region, s)
        cut = support_cutoffs(d, policy) if support_aware else None
        constraints += group_constraints(group_stats(d), policy, d.group, cut)
    region = ConvexPolygon(region.vertices)
    for h in constraints:
        region = clip_halfplane(region, h)
    return region, constraints


class Verdict(str, enum.Enum):
    FEASIBLE_BY_CORNER = "FeasibleByCorner"
    FEASIBLE_ABOVE_BREVE = "FeasibleAboveBreve"
    INFEASIBLE = "Infeasible"

    @property
    def feasible(self) -> bool:
        return self is not Verdict.INFEASIBLE


@dataclass(frozen=True)
class FeasibilityReport:
    breve_point: tuple[float, float] | None
    verdict: Verdict
    feasible_region: ConvexPolygon
    binding_constraints: list[str]
    low_group: str
    high_group: str
    stats: dict[str, GroupStats]
    region_nonempty: bool
    margin: float | None = None  # min ROC-hull height minus breve height at the breve abscissa

    @property
    def consistent(self) -> bool:
        """The breve-point verdict agrees with emptiness of the clipped region."""
        if self.margin is not None and abs(self.margin) <= BOUNDARY_BAND:
            return True
        return self.verdict.feasible == self.region_nonempty

    def to_dict(self) -> dict:
        return {
            "breve_point": None if self.breve_point is None else list(self.breve_point),
            "verdict": self.verdict.value,
            "feasible": self.verdict.feasible,
            "region_nonempty": self.region_nonempty,
            "region_vertices": self.feasible_region.vertices.tolist(),
            "binding_constraints": self.binding_constraints,
            "low_group": self.low_group,
            "high_group": self.high_group,
            "stats": {g: {"base_rate": s.base_rate, "odds": s.odds, "share": s.population_share} for g, s in self.stats.items()},
            "margin": self.margin,
        }


def feasibility(dists, policy: DecisionPolicy, shares=None, support_aware: bool = False) -> FeasibilityReport:
    """Decide whether a calibrated score can give equal error rates at the policy cutoff.

    ``dists`` is a sequence or mapping of at least two group distributions.
    The verdict follows the breve-point test; the clipped polygon is computed
    independently and reported alongside so the two can be cross-checked.
    """
    dists = _as_list(dists)
    if len(dists) < 2:
        raise ValueError("feasibility needs at least two groups")
    for d in dists:
        if d.degenerate:
            raise ValueError(f"group {d.group!r} has a degenerate base rate")
    sh = _shares(dists, shares)
    stats = {d.group: group_stats(d, s) for d, s in zip(dists, sh)}
    order = sorted(dists, key=lambda d: stats[d.group].odds)
    low, high = order[0], order[-1]
    hulls = [achievable_set(roc_from_distribution(d)) for d in dists]

    region, constraints = feasible_region(dists, policy, support_aware)
    nonempty = not region.is_empty

    try:
        breve = breve_point(stats[low.group], stats[high.group], policy)
    except EqualBaseRatesError:
        breve = None

    margin = None
    if breve is None:
        verdict = Verdict.FEASIBLE_BY_CORNER if _corner_ok(constraints) else Verdict.INFEASIBLE
    elif breve[0] <= 0.0 or breve[0] >= 1.0:
        verdict = Verdict.FEASIBLE_BY_CORNER
    else:
        heights = [h.upper_y(breve[0]) for h in hulls]
        margin = min(heights) - breve[1]
        verdict = Verdict.FEASIBLE_ABOVE_BREVE if margin >= 0.0 else Verdict.INFEASIBLE

    binding = []
    for h in constraints:
        s = h.slack(region.vertices) if nonempty else np.array([np.inf])
        if np.any(np.abs(s) <= 1e-9 * max(1.0, np.linalg.norm(h.normal))) and h.label not in binding:
            binding.append(h.label)
    return FeasibilityReport(breve, verdict, region, binding, low.group, high.group, stats, nonempty, margin)


def _corner_ok(constraints) -> bool:
    return any(all(h.contains(c) for h in constraints) for c in ((0.0, 0.0), (1.0, 1.0)))


def write_point_csv(path, series: Mapping[str, np.ndarray], err: Mapping[str, np.ndarray] | None = None) -> None:
    """Write named point lists as long-format CSV with columns x, y, series, err (0 when not given)."""
    err = err or {}
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "series", "err"])
        for name, pts in series.items():
            pts = np.asarray(pts, dtype=float).reshape(-1, 2)
            e = np.asarray(err.get(name, np.zeros(len(pts))), dtype=float)
            for (x, y), ei in zip(pts, e):
                w.writerow([repr(float(x)), repr(float(y)), name, repr(float(ei))])
