"""Per-group transport kernels that turn a score into a calibrated score with target error rates.

For one group with support values ``p``, masses ``s`` and conditional outcome
means ``q`` the kernel ``T`` (row-stochastic, ``N x N``) sends a person in bin
``i`` to output value ``p[j]`` with probability ``T[i, j]``.  The kernel is the
solution of a linear program: output bins must be calibrated, the induced
classification at the cutoff must hit the target (fpr, tpr), and the added
squared error ``sum_ij T_ij s_i (p_i - p_j)^2`` is minimised.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import DecisionPolicy
from .scores import DiscreteScoreDistribution
from .simplex import LinearProgram, LpSolution, LpStatus, solve_lp

__all__ = [
    "StructuralInfeasibilityError",
    "TargetUnreachable",
    "TransportKernel",
    "TransportProblemSpec",
    "PostprocessedScores",
    "apply_kernel",
    "build_lp",
    "solve_kernel",
]

ROW_TOL = 1e-8
SNAP_TOL = 1e-12


class TargetUnreachable(RuntimeError):
    """The transport LP has no solution for the requested rates.

    ``residuals`` holds the phase-one constraint residuals reported by the
    solver (indexed like the LP rows: row sums, calibration, tpr, fpr).
    """

    def __init__(self, message: str, status: LpStatus, residuals=None, row_labels=()):
        super().__init__(message)
        self.status = status
        self.residuals = None if residuals is None else np.asarray(residuals)
        self.row_labels = list(row_labels)

    def violations(self, tol: float = 1e-9) -> dict[str, float]:
        if self.residuals is None:
            return {}
        return {lab: float(r) for lab, r in zip(self.row_labels, self.residuals) if abs(r) > tol}


class StructuralInfeasibilityError(ValueError):
    """The cutoff interval excludes every output bin on a side that the targets need."""


@dataclass(frozen=True)
class TransportProblemSpec:
    source: DiscreteScoreDistribution
    targets: tuple[float, float]
    policy: DecisionPolicy
    calibrated_input: bool = True

    def __post_init__(self):
        a1, a2 = (float(t) for t in self.targets)
        if not (0.0 <= a1 <= 1.0 and 0.0 <= a2 <= 1.0):
            raise ValueError(f"target rates must lie in [0, 1]^2, got {self.targets!r}")
        # rates interpolated between region vertices can miss 0 or 1 by an ulp
        a1, a2 = (float(np.where(t < SNAP_TOL, 0.0, np.where(t > 1.0 - SNAP_TOL, 1.0, t))) for t in (a1, a2))
        object.__setattr__(self, "targets", (a1, a2))

    @property
    def q(self) -> np.ndarray:
        return self.source.values if self.calibrated_input else self.source.cond_means


@dataclass
class TransportLp:
    """The assembled program plus the bookkeeping needed to read its solution."""

    lp: LinearProgram
    n: int
    row_labels: list[str]
    excluded: np.ndarray


def _positive_columns(p, policy):
    return p >= policy.cutoff


def _excluded_columns(p, policy):
    if policy.epsilon <= 0:
        return np.zeros(p.size, dtype=bool)
    return (p > policy.lower_cutoff) & (p < policy.upper_cutoff)


def build_lp(spec: TransportProblemSpec) -> TransportLp:
    """Assemble the kernel LP with variables ``T[i, j]`` flattened row-major."""
    p, s, q = spec.source.values, spec.source.masses, spec.q
    n = p.size
    a1, a2 = spec.targets
    pos = _positive_columns(p, spec.policy)
    excluded = _excluded_columns(p, spec.policy)

    allowed_pos = pos & ~excluded
    allowed_neg = ~pos & ~excluded
    mu = float(q @ s)
    needs_pos = (a2 > 0 and mu > 0) or (a1 > 0 and mu < 1)
    needs_neg = (a2 < 1 and mu > 0) or (a1 < 1 and mu < 1)
    if needs_pos and not allowed_pos.any():
        raise StructuralInfeasibilityError("targets need positively classified mass but every bin at or above the cutoff is excluded")
    if needs_neg and not allowed_neg.any():
        raise StructuralInfeasibilityError("targets need negatively classified mass but every bin below the cutoff is excluded")

    rows, rhs, labels = [], [], []
    for i in range(n):
        r = np.zeros((n, n))
        r[i, :] = 1.0
        rows.append(r.ravel())
        rhs.append(1.0)
        labels.append(f"row_sum[{i}]")
    for j in range(n):
        if excluded[j]:
            continue
        coef = s * (q - p[j])
        if not np.any(coef):
            continue
        r = np.zeros((n, n))
        r[:, j] = coef
        rows.append(r.ravel())
        rhs.append(0.0)
        labels.append(f"calibration[{j}]")
    ind = pos.astype(float)
    pos_mass = q * s
    neg_mass = (1.0 - q) * s
    if pos_mass.sum() > 0:
        rows.append(np.outer(pos_mass, ind - a2).ravel())
        rhs.append(0.0)
        labels.append("tpr")
    if neg_mass.sum() > 0:
        rows.append(np.outer(neg_mass, ind - a1).ravel())
        rhs.append(0.0)
        labels.append("fpr")

    cost = (s[:, None] * (p[:, None] - p[None, :]) ** 2).ravel()
    upper = np.ones((n, n))
    upper[:, excluded] = 0.0
    lp = LinearProgram(cost, np.array(rows), np.array(rhs), lower=np.zeros(n * n), upper=upper.ravel())
    return TransportLp(lp, n, labels, excluded)


@dataclass
class TransportKernel:
    """Solved kernel for one group."""

    T: np.ndarray
    source: DiscreteScoreDistribution
    targets: tuple[float, float]
    policy: DecisionPolicy
    objective: float
    calibrated_input: bool = True
    iterations: int = 0
    seed: int | None = None
    status: str = LpStatus.OPTIMAL.value

    @property
    def group(self) -> str:
        return self.source.group

    @property
    def q(self) -> np.ndarray:
        return self.source.values if self.calibrated_input else self.source.cond_means

    @property
    def output_masses(self) -> np.ndarray:
        """``f = T' s``: mass of each output value."""
        return self.T.T @ self.source.masses

    def output_cond_means(self) -> np.ndarray:
        """Mean outcome behind each output value (NaN where the value gets no mass)."""
        f = self.output_masses
        num = self.T.T @ (self.q * self.source.masses)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(f > 0, num / np.where(f > 0, f, 1.0), np.nan)

    def implied_rates(self) -> tuple[float, float]:
        """Population (fpr, tpr) of the cutoff rule applied to the output score."""
        s, q = self.source.masses, self.q
        ind = _positive_columns(self.source.values, self.policy).astype(float)
        flow = self.T @ ind
        pos, neg = q * s, (1.0 - q) * s
        tpr = float(pos @ flow / pos.sum()) if pos.sum() > 0 else float("nan")
        fpr = float(neg @ flow / neg.sum()) if neg.sum() > 0 else float("nan")
        return fpr, tpr

    def output_mean(self) -> float:
        return float(self.source.values @ self.output_masses)

    def output_variance(self) -> float:
        f = self.output_masses
        m = self.output_mean()
        return float(((self.source.values - m) ** 2) @ f)

    def mean_shift(self) -> float:
        """``sum_j p_j f_j - sum_i q_i s_i``; zero for a calibrated output."""
        return self.output_mean() - float(self.q @ self.source.masses)

    def check(self, tol: float = ROW_TOL) -> None:
        T = self.T
        if T.min() < -1e-9 or T.max() > 1 + 1e-9:
            raise ValueError("kernel entries outside [0, 1]")
        if np.abs(T.sum(axis=1) - 1.0).max() > tol:
            raise ValueError("kernel rows do not sum to 1")

    def metadata(self) -> dict:
        fpr, tpr = self.implied_rates()
        return {
            "group": self.group,
            "targets": {"fpr": self.targets[0], "tpr": self.targets[1]},
            "implied": {"fpr": fpr, "tpr": tpr},
            "objective": float(self.objective),
            "added_mse": float(self.objective),
            "cutoff": self.policy.cutoff,
            "epsilon": self.policy.epsilon,
            "values": [float(v) for v in self.source.values],
            "masses": [float(v) for v in self.source.masses],
            "seed": self.seed,
            "iterations": self.iterations,
            "status": self.status,
        }

    def save(self, csv_path, json_path=None, extra: dict | None = None) -> None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from\\to"] + [repr(float(v)) for v in self.source.values])
            for v, row in zip(self.source.values, self.T):
                w.writerow([repr(float(v))] + [repr(float(x)) for x in row])
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        json_path.write_text(json.dumps(self.metadata() | (extra or {}), indent=2, sort_keys=True))


def solve_kernel(spec: TransportProblemSpec, max_iter: int = 50_000) -> TransportKernel:
    """Solve the kernel LP; raise :class:`TargetUnreachable` if the targets are not attainable."""
    built = build_lp(spec)
    sol: LpSolution = solve_lp(built.lp, max_iter=max_iter)
    if sol.status != LpStatus.OPTIMAL:
        raise TargetUnreachable(
            f"transport LP for group {spec.source.group!r} ended with status {sol.status.value}: {sol.message}",
            sol.status,
            sol.residuals,
            built.row_labels,
        )
    n = built.n
    T = sol.x.reshape(n, n).copy()
    T[:, built.excluded] = 0.0
    T = np.clip(T, 0.0, 1.0)
    T /= T.sum(axis=1, keepdims=True)
    kernel = TransportKernel(
        T, spec.source, spec.targets, spec.policy, float(sol.objective), spec.calibrated_input, sol.iterations
    )
    kernel.check()
    return kernel


@dataclass
class PostprocessedScores:
    """Output of applying a kernel: drawn output bins, scores and classifications."""

    output_index: np.ndarray
    scores: np.ndarray
    classification: np.ndarray
    seed: int | None = None
    extra: dict = field(default_factory=dict)


def draw_uniforms(seed: int, n: int) -> np.ndarray:
    """``n`` uniforms from a counter-based generator, one per sample position."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1))).random(n)


def apply_kernel(kernel: TransportKernel, points, seed: int | None = 0, uniforms=None) -> PostprocessedScores:
    """Randomly map samples to output values.

    ``points`` are indices into the kernel's support (row indices of ``T``).
    Sample ``m`` moves to the first output bin ``j`` whose cumulative row
    probability exceeds ``uniforms[m]``; uniforms default to a seeded
    counter-based stream so results depend only on the seed and sample order.
    """
    points = np.asarray(points, dtype=int).ravel()
    n = kernel.T.shape[0]
    if points.size and (points.min() < 0 or points.max() >= n):
        raise ValueError(f"support indices must lie in [0, {n})")
    u = draw_uniforms(seed, points.size) if uniforms is None else np.asarray(uniforms, dtype=float).ravel()
    if u.size != points.size:
        raise ValueError("need one uniform per sample")
    cum = np.cumsum(kernel.T, axis=1)
    cum[:, -1] = np.inf
    out = np.empty(points.size, dtype=int)
    for i in np.unique(points):
        mask = points == i
        j = np.searchsorted(cum[i], u[mask], side="right")
        # skip zero-probability columns that the search could land on through round-off
        support = np.flatnonzero(kernel.T[i] > 0)
        j = support[np.clip(np.searchsorted(support, j), 0, support.size - 1)]
        out[mask] = j
    scores = kernel.source.values[out]
    return PostprocessedScores(out, scores, kernel.policy.classify(scores), seed)
