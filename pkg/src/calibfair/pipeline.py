"""End-to-end post-processing: recalibrate, choose target rates, solve kernels, apply them."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import EvaluationReport, evaluate
from .geometry import DecisionPolicy, FeasibilityReport, feasibility
from .rates import PenaltySpec, RateTarget, optimize_basic, optimize_flexible, region_R_A
from .scores import DiscreteScoreDistribution, Samples, calibrate_bins, discretize, group_stats
from .transport import TransportKernel, TransportProblemSpec, apply_kernel, draw_uniforms, solve_kernel

__all__ = ["PipelineError", "PipelineResult", "ScoredData", "map_to_support", "postprocess_pipeline"]


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error


@dataclass
class ScoredData:
    ids: np.ndarray
    groups: np.ndarray
    input_scores: np.ndarray
    output_scores: np.ndarray
    classification: np.ndarray
    outcomes: np.ndarray | None = None
    weights: np.ndarray | None = None
    seed: int | None = None

    def to_csv(self, path) -> None:
        """Columns id, group, input_score, output_score, classification (plus outcome when known)."""
        cols = [self.ids, self.groups, self.input_scores, self.output_scores, self.classification]
        header = ["id", "group", "input_score", "output_score", "classification"]
        if self.outcomes is not None:
            cols.append(self.outcomes)
            header.append("outcome")
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in zip(*cols):
                out = [int(row[0]), row[1], repr(float(row[2])), repr(float(row[3])), int(row[4])]
                w.writerow(out + [int(x) for x in row[5:]])


@dataclass
class PipelineResult:
    distributions: dict[str, DiscreteScoreDistribution]
    target: RateTarget
    kernels: dict[str, TransportKernel]
    scored: ScoredData
    feasibility: FeasibilityReport | None
    before: EvaluationReport | None
    after: EvaluationReport | None
    predicted_loss: float
    shares: dict[str, float] = field(default_factory=dict)

    def implied_loss(self, k: float) -> float:
        """Population loss of the kernels' exact rates (no sampling noise)."""
        total = 0.0
        for g, kern in self.kernels.items():
            fpr, tpr = kern.implied_rates()
            mu = kern.source.base_rate
            total += self.shares[g] * (k * fpr * (1 - mu) + (1 - tpr) * mu)
        return float(total)

    def report(self) -> dict:
        k = next(iter(self.kernels.values())).policy.k
        out = {
            "mode": self.target.mode,
            "target": self.target.to_dict(),
            "predicted_loss": self.predicted_loss,
            "implied_loss": self.implied_loss(k),
            "shares": self.shares,
            "groups": {
                g: {
                    "added_mse": kern.objective,
                    "implied_rates": dict(zip(("fpr", "tpr"), kern.implied_rates())),
                    "n_support": int(kern.source.n_points),
                }
                for g, kern in self.kernels.items()
            },
            "seed": self.scored.seed,
        }
        if self.feasibility is not None:
            out["feasibility"] = self.feasibility.to_dict()
        if self.before is not None:
            out["before"] = self.before.to_dict()
        if self.after is not None:
            out["after"] = self.after.to_dict()
        return out


def map_to_support(dist: DiscreteScoreDistribution, scores, n_bins: int) -> np.ndarray:
    """Support index for each raw score; bins unseen at fit time go to the nearest seen bin."""
    bins, _ = discretize(scores, n_bins)
    bm = dist.bin_map
    seen = np.flatnonzero(bm >= 0)
    pos = np.searchsorted(seen, bins)
    left = seen[np.clip(pos - 1, 0, seen.size - 1)]
    right = seen[np.clip(pos, 0, seen.size - 1)]
    nearest = np.where(np.abs(bins - left) <= np.abs(right - bins), left, right)
    return bm[np.where(bm[bins] >= 0, bins, nearest)]


def choose_targets(dists, policy: DecisionPolicy, mode: str, penalty: PenaltySpec | None, shares):
    """Select target rates; returns ``(target, feasibility report or None, predicted loss)``."""
    groups = list(dists)
    stats = {g: group_stats(dists[g], shares[g]) for g in groups}
    mu = sum(shares[g] * stats[g].base_rate for g in groups)
    report = None
    if mode == "basic":
        report = feasibility([dists[g] for g in groups], policy, shares, support_aware=True)
        target = optimize_basic(report.feasible_region, policy.k, mu, groups)
        return target, report, target.objective
    if mode == "flexible":
        penalty = penalty or PenaltySpec.preset("equal-odds")
        regions = {g: region_R_A(dists[g], stats[g], policy, support_aware=True) for g in groups}
        means = {g: stats[g].base_rate for g in groups}
        weights = None if (penalty.gamma is not None and len(groups) == 2) else dict(shares)
        target = optimize_flexible(regions, penalty, policy.k, means, weights=weights)
        if len(groups) >= 2:
            try:
                report = feasibility([dists[g] for g in groups], policy, shares, support_aware=True)
            except ValueError:
                report = None
        loss = sum(
            shares[g] * (policy.k * target.rates[g][0] * (1 - means[g]) + (1 - target.rates[g][1]) * means[g])
            for g in groups
        )
        return target, report, float(loss)
    raise ValueError(f"mode must be 'basic' or 'flexible', got {mode!r}")


def postprocess_pipeline(
    samples: Samples,
    policy: DecisionPolicy,
    mode: str = "basic",
    penalty: PenaltySpec | None = None,
    n_bins: int = 50,
    seed: int = 0,
    ids=None,
    evaluate_outputs: bool = True,
) -> PipelineResult:
    """Recalibrate per group, pick target rates, solve one kernel per group and randomise scores.

    Each stage's errors are re-raised as :class:`PipelineError` naming the stage.
    """
    def stage(name, fn, *a, **kw):
        try:
            return fn(*a, **kw)
        except PipelineError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            raise PipelineError(name, exc) from exc

    if len(samples.group_labels) < 2:
        raise PipelineError("input", ValueError("need at least two groups"))
    dists = stage("calibrate", calibrate_bins, samples, n_bins)
    shares = samples.shares()
    target, report, predicted = stage("optimize", choose_targets, dists, policy, mode, penalty, shares)

    kernels = {}
    for g, d in dists.items():
        spec = TransportProblemSpec(d, target.rate(g), policy)
        kernels[g] = stage(f"transport[{g}]", solve_kernel, spec)
        kernels[g].seed = seed

    n = len(samples)
    u = draw_uniforms(seed, n)
    out_scores = np.empty(n)
    for g, kern in kernels.items():
        m = samples.groups == g
        pts = map_to_support(dists[g], samples.scores[m], n_bins)
        res = stage(f"apply[{g}]", apply_kernel, kern, pts, seed, uniforms=u[m])
        out_scores[m] = res.scores
    ids = np.arange(n) if ids is None else np.asarray(ids)
    scored = ScoredData(
        ids, samples.groups, samples.scores, out_scores, policy.classify(out_scores), samples.outcomes, samples.weights, seed
    )
    before = after = None
    if evaluate_outputs:
        before = evaluate(samples.scores, samples.outcomes, samples.groups, policy, samples.weights)
        after = evaluate(out_scores, samples.outcomes, samples.groups, policy, samples.weights)
    return PipelineResult(dists, target, kernels, scored, report, before, after, float(predicted), shares)
