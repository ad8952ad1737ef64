"""Evaluation metrics, calibration curves and the finite-support impossibility check."""

from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_scores, check_weights
from .geometry import DecisionPolicy

__all__ = [
    "CalibrationRow",
    "ContractViolation",
    "EvaluationReport",
    "FiniteJoint",
    "GroupMetrics",
    "ImpossibilityResult",
    "ImpossibilityVerdict",
    "calibration_curve",
    "coverage",
    "evaluate",
    "grid_search_counterexamples",
    "impossibility_check",
    "stability_constant",
    "write_calibration_csv",
]

UNDEFINED = "undefined"


def _ratio(num: float, den: float) -> float | None:
    return float(num / den) if den > 0 else None


@dataclass
class GroupMetrics:
    """Classification metrics for one group; ``None`` marks an undefined rate."""

    n: int
    weight: float
    base_rate: float | None
    tpr: float | None
    fpr: float | None
    ppv: float | None
    npv: float | None
    loss: float
    mse: float
    tpr_se: float | None = None
    fpr_se: float | None = None

    def to_dict(self) -> dict:
        return {k: (UNDEFINED if v is None else v) for k, v in asdict(self).items()}


@dataclass
class CalibrationRow:
    group: str
    value: float
    mean_outcome: float
    se: float
    count: int

    @property
    def se_zero(self) -> bool:
        return self.se == 0.0

    def covered(self, z: float = 3.0) -> bool:
        return abs(self.mean_outcome - self.value) <= z * self.se + 1e-12


@dataclass
class EvaluationReport:
    """Per-group and pooled metrics of a scored dataset at a cutoff."""

    groups: dict[str, GroupMetrics]
    loss: float
    mse: float
    k: float
    cutoff: float
    tpr_gap: float | None
    fpr_gap: float | None
    calibration: list[CalibrationRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        g = lambda v: UNDEFINED if v is None else v  # noqa: E731
        return {
            "loss": self.loss,
            "mse": self.mse,
            "k": self.k,
            "cutoff": self.cutoff,
            "tpr_gap": g(self.tpr_gap),
            "fpr_gap": g(self.fpr_gap),
            "groups": {name: m.to_dict() for name, m in self.groups.items()},
            "calibration": [asdict(r) | {"se_zero": r.se_zero} for r in self.calibration],
        }


def _max_gap(values) -> float | None:
    vals = [v for v in values if v is not None]
    if len(vals) < 2:
        return None
    return float(max(vals) - min(vals))


def evaluate(scores, outcomes, groups, policy: DecisionPolicy, weights=None, calibration_bins: int | None = None) -> EvaluationReport:
    """Empirical error rates, decision loss and score MSE per group.

    The pooled loss is assembled from the per-group rates,
    ``k P(Y=0) fpr + P(Y=1) (1 - tpr)``, and agrees with the sample average of
    ``k 1{yhat=1, Y=0} + 1{yhat=0, Y=1}``.
    """
    scores = check_scores(scores)
    y = np.asarray(outcomes).astype(int).ravel()
    groups = np.asarray(groups).astype(str).ravel()
    if scores.size == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if not (y.size == groups.size == scores.size):
        raise ValueError("scores, outcomes and groups must have equal length")
    w = check_weights(weights, scores.size)
    yhat = policy.classify(scores)
    k = policy.k
    total = w.sum()
    out = {}
    loss = 0.0
    for g in dict.fromkeys(groups.tolist()):
        m = groups == g
        wg, yg, hg = w[m], y[m], yhat[m]
        W = wg.sum()
        pos, neg = wg[yg == 1].sum(), wg[yg == 0].sum()
        tp, fp = wg[(yg == 1) & (hg == 1)].sum(), wg[(yg == 0) & (hg == 1)].sum()
        tn, fn = wg[(yg == 0) & (hg == 0)].sum(), wg[(yg == 1) & (hg == 0)].sum()
        tpr, fpr = _ratio(tp, pos), _ratio(fp, neg)
        n_pos, n_neg = int((yg == 1).sum()), int((yg == 0).sum())
        g_loss = (k * neg * (fpr or 0.0) + pos * (1.0 - (tpr if tpr is not None else 1.0))) / W
        loss += W / total * g_loss
        out[g] = GroupMetrics(
            n=int(m.sum()),
            weight=float(W / total),
            base_rate=_ratio(pos, W),
            tpr=tpr,
            fpr=fpr,
            ppv=_ratio(tp, tp + fp),
            npv=_ratio(tn, tn + fn),
            loss=float(g_loss),
            mse=float(wg @ (yg - scores[m]) ** 2 / W),
            tpr_se=None if tpr is None else float(np.sqrt(tpr * (1 - tpr) / n_pos)),
            fpr_se=None if fpr is None else float(np.sqrt(fpr * (1 - fpr) / n_neg)),
        )
    mse = float(w @ (y - scores) ** 2 / total)
    curve = calibration_curve(scores, y, groups, calibration_bins, weights=w)
    return EvaluationReport(
        out,
        float(loss),
        mse,
        k,
        policy.cutoff,
        _max_gap(m.tpr for m in out.values()),
        _max_gap(m.fpr for m in out.values()),
        curve,
    )


def calibration_curve(scores, outcomes, groups=None, n_bins: int | None = None, weights=None) -> list[CalibrationRow]:
    """Mean outcome per score bin and group with binomial standard errors.

    Without ``n_bins`` every distinct score value is its own bin, which suits
    discrete post-processed scores.  With ``n_bins`` scores are floored onto a
    grid and each bin's value is its mean score.  ``se = sqrt(m (1 - m) / count)``.
    """
    scores = check_scores(scores)
    y = np.asarray(outcomes, dtype=float).ravel()
    groups = np.full(scores.size, "*") if groups is None else np.asarray(groups).astype(str).ravel()
    w = check_weights(weights, scores.size)
    if n_bins is None:
        keys = scores
    else:
        keys = np.minimum(np.floor(scores * n_bins), n_bins - 1)
    rows = []
    for g in dict.fromkeys(groups.tolist()):
        m = groups == g
        uniq, inv = np.unique(keys[m], return_inverse=True)
        wg = w[m]
        W = np.bincount(inv, weights=wg, minlength=uniq.size)
        Wy = np.bincount(inv, weights=wg * y[m], minlength=uniq.size)
        Ws = np.bincount(inv, weights=wg * scores[m], minlength=uniq.size)
        cnt = np.bincount(inv, minlength=uniq.size)
        for b in range(uniq.size):
            if cnt[b] == 0 or W[b] <= 0:
                continue
            mean = Wy[b] / W[b]
            value = float(uniq[b]) if n_bins is None else float(Ws[b] / W[b])
            rows.append(CalibrationRow(g, value, float(mean), float(np.sqrt(mean * (1 - mean) / cnt[b])), int(cnt[b])))
    return rows


def coverage(rows, z: float = 3.0) -> float:
    """Fraction of calibration rows whose mean outcome lies within ``z`` SEs of the bin value."""
    rows = list(rows)
    if not rows:
        return float("nan")
    return sum(r.covered(z) for r in rows) / len(rows)


def write_calibration_csv(path, rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "x", "y", "err", "count"])
        for r in rows:
            w.writerow([r.group, repr(r.value), repr(r.mean_outcome), repr(r.se), r.count])


class ContractViolation(ValueError):
    """A pmf flagged strictly positive has an empty conditioning cell."""


@dataclass(frozen=True)
class FiniteJoint:
    """Joint pmf over (A, Z, Y), stored as an array of shape ``(2, |Z|, 2)``.

    Axis 0 is the group (index 0 = "H", 1 = "L"), axis 1 the signal ``Z`` and
    axis 2 the outcome ``Y`` (index 1 = positive).
    """

    pmf: np.ndarray
    strictly_positive: bool = False
    groups: tuple[str, str] = ("H", "L")

    def __post_init__(self):
        P = np.asarray(self.pmf, dtype=float)
        if P.ndim != 3 or P.shape[0] != 2 or P.shape[2] != 2:
            raise ValueError(f"pmf must have shape (2, |Z|, 2), got {P.shape}")
        if np.any(P < 0) or abs(P.sum() - 1.0) > 1e-12:
            raise ValueError("pmf entries must be non-negative and sum to 1")
        object.__setattr__(self, "pmf", P)

    @classmethod
    def from_counts(cls, counts, strictly_positive: bool = False) -> "FiniteJoint":
        c = np.asarray(counts, dtype=float)
        return cls(c / c.sum(), strictly_positive)

    def swapped(self) -> "FiniteJoint":
        return FiniteJoint(self.pmf[::-1], self.strictly_positive, self.groups[::-1])


class ImpossibilityVerdict(str, enum.Enum):
    CONSISTENT = "consistent"
    CONDITIONS_NOT_MET = "conditions_not_met"
    POSITIVITY_VIOLATED = "positivity_violated_theorem_inapplicable"
    INCONSISTENT = "inconsistent"


@dataclass
class ImpossibilityResult:
    calibration_gap: float
    error_rate_gap: float
    independence_gap: float
    base_rate_gap: float
    constant: float | None
    positive: bool
    verdict: ImpossibilityVerdict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d


def stability_constant(pmf: np.ndarray) -> float | None:
    """Constant ``C`` with ``independence_gap <= C * tol`` when both gaps are below ``tol``.

    ``C = 1 / (4 rho_r) + 1 / (2 rho_g) + |Z| / 2`` where ``rho_r`` is the
    smallest ``r (1 - r)`` over ``r = P(Y=1 | A, Z)`` and ``rho_g`` the
    smallest ``P(Z | A, Y)``.  Both enter through mean-value bounds on the
    log-odds identity linking base rates, calibration and error rates.
    Returns ``None`` without strict positivity.
    """
    P = np.asarray(pmf, dtype=float)
    if np.any(P <= 0):
        return None
    r = P[:, :, 1] / P.sum(axis=2)
    g = P / P.sum(axis=1, keepdims=True)
    rho_r = float((r * (1 - r)).min())
    rho_g = float(g.min())
    return 1.0 / (4.0 * rho_r) + 1.0 / (2.0 * rho_g) + P.shape[1] / 2.0


def impossibility_check(joint: FiniteJoint, tol: float) -> ImpossibilityResult:
    """Residuals of calibration and equal error rates, and how far A is from independent of (Z, Y).

    * calibration gap: ``max_z |P(Y=1|H,z) - P(Y=1|L,z)|``;
    * error-rate gap: ``max_{z,y} |P(z|H,y) - P(z|L,y)|``;
    * independence gap: total variation between ``P(Z,Y|H)`` and ``P(Z,Y|L)``.

    When both gaps are within ``tol`` on a strictly positive pmf, the
    independence gap must be at most ``C * tol`` (see
    :func:`stability_constant`); a breach is reported as ``INCONSISTENT``.
    """
    P = joint.pmf
    az = P.sum(axis=2)
    ay = P.sum(axis=1)
    if joint.strictly_positive and (np.any(az <= 0) or np.any(ay <= 0) or np.any(P <= 0)):
        raise ContractViolation("pmf is flagged strictly positive but has an empty cell")
    if np.any(P.sum(axis=(1, 2)) <= 0):
        raise ValueError("both groups need positive probability")

    with np.errstate(invalid="ignore", divide="ignore"):
        r = P[:, :, 1] / az
        g = P / ay[:, None, :]
    both_z = (az > 0).all(axis=0)
    cal = float(np.abs(r[0] - r[1])[both_z].max()) if both_z.any() else 0.0
    both_y = (ay > 0).all(axis=0)
    err = float(np.abs(g[0] - g[1])[:, both_y].max()) if both_y.any() else 0.0
    cond = P / P.sum(axis=(1, 2), keepdims=True)
    indep = 0.5 * float(np.abs(cond[0] - cond[1]).sum())
    mu = ay[:, 1] / ay.sum(axis=1)
    positive = bool(np.all(P > 0))
    C = stability_constant(P) if positive else None

    if not positive:
        verdict = ImpossibilityVerdict.POSITIVITY_VIOLATED
    elif cal > tol or err > tol:
        verdict = ImpossibilityVerdict.CONDITIONS_NOT_MET
    elif indep <= C * tol + 1e-12:
        verdict = ImpossibilityVerdict.CONSISTENT
    else:
        verdict = ImpossibilityVerdict.INCONSISTENT
    return ImpossibilityResult(cal, err, indep, float(abs(mu[0] - mu[1])), C, positive, verdict)


@dataclass
class GridSearchResult:
    step: float
    tol: float
    blocks: int
    pairs: int
    both_gaps_small: int
    counterexamples: list[np.ndarray]
    max_base_rate_gap: float
    max_independence_gap: float
    n_counterexamples: int = 0
    n_within_bound: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counterexamples"] = [c.tolist() for c in self.counterexamples]
        return d


def _blocks(units: int, tol: float):
    """Positive integer cells ``(H z0, H z1, L z0, L z1)`` for one outcome with matching ``P(Z|A,y)``."""
    out = []
    for m in range(4, units - 3):
        for hs in range(2, m - 1):
            ls = m - hs
            h0 = np.arange(1, hs)
            l0 = np.arange(1, ls)
            H0, L0 = np.meshgrid(h0, l0, indexing="ij")
            ok = np.abs(H0 / hs - L0 / ls) < tol
            for a, b in zip(H0[ok], L0[ok]):
                out.append((a, hs - a, b, ls - b))
    return np.array(out, dtype=np.int64).reshape(-1, 4)


def grid_search_counterexamples(step: float = 0.01, tol: float = 1e-3, limit: int = 10) -> GridSearchResult:
    """Search every strictly positive 2x2x2 pmf on a grid for small-gap joints with unequal base rates.

    A counterexample is a pmf with unequal base rates whose calibration and
    error-rate gaps are both below ``tol``.  The search first lists the
    per-outcome blocks with error-rate gap below ``tol`` (the only blocks that
    can take part), then pairs blocks whose totals add up to one.
    """
    units = int(round(1.0 / step))
    blocks = _blocks(units, tol)
    sums = blocks.sum(axis=1)
    counterexamples = []
    pairs = 0
    small = 0
    max_mu_gap = 0.0
    max_indep = 0.0
    found = within = 0
    for m in np.unique(sums):
        B1 = blocks[sums == m]  # outcome Y=1
        B0 = blocks[sums == units - m]  # outcome Y=0
        if not B0.size:
            continue
        pairs += B1.shape[0] * B0.shape[0]
        # cells indexed [pair, (Hz0, Hz1, Lz0, Lz1)]
        y1 = B1[:, None, :].astype(float)
        y0 = B0[None, :, :].astype(float)
        r = y1 / (y1 + y0)
        cal = np.maximum(np.abs(r[..., 0] - r[..., 2]), np.abs(r[..., 1] - r[..., 3]))
        ok = cal < tol
        small += int(ok.sum())
        if not ok.any():
            continue
        i1, i0 = np.nonzero(ok)
        a, b = B1[i1], B0[i0]
        pos_h, pos_l = a[:, 0] + a[:, 1], a[:, 2] + a[:, 3]
        tot_h, tot_l = pos_h + b[:, 0] + b[:, 1], pos_l + b[:, 2] + b[:, 3]
        mu_gap = np.abs(pos_h / tot_h - pos_l / tot_l)
        max_mu_gap = max(max_mu_gap, float(mu_gap.max()))
        unequal = pos_h * tot_l != pos_l * tot_h
        for j in np.flatnonzero(unequal):
            pmf = np.zeros((2, 2, 2))
            pmf[0, :, 1], pmf[1, :, 1] = a[j, :2], a[j, 2:]
            pmf[0, :, 0], pmf[1, :, 0] = b[j, :2], b[j, 2:]
            res = impossibility_check(FiniteJoint(pmf / units), tol)
            max_indep = max(max_indep, res.independence_gap)
            found += 1
            within += res.verdict is ImpossibilityVerdict.CONSISTENT
            if len(counterexamples) < limit:
                counterexamples.append(pmf / units)
    return GridSearchResult(
        step, tol, int(blocks.shape[0]), int(pairs), small, counterexamples, max_mu_gap, max_indep, found, within
    )


def pmf_grid(step: float = 0.1):
    """Iterate over every pmf on ``(2, 2, 2)`` cells with the given grid step (small steps only)."""
    units = int(round(1.0 / step))
    for cut in itertools.combinations(range(units + 7), 7):
        parts = np.diff((-1,) + cut + (units + 7,)) - 1
        yield parts.reshape(2, 2, 2) / units
