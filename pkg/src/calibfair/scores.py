"""Discrete per-group score distributions, binning and empirical recalibration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from ._validation import check_scores, check_weights

__all__ = [
    "DegenerateBaseRateError",
    "DiscreteScoreDistribution",
    "GroupStats",
    "LabeledSample",
    "Samples",
    "bin_distributions",
    "calibrate_bins",
    "discretize",
    "group_stats",
]

MASS_TOL = 1e-9
MERGE_TOL = 1e-12


class DegenerateBaseRateError(ValueError):
    """A group's base rate is 0 or 1, so its odds are undefined."""


class LabeledSample(NamedTuple):
    score: float
    outcome: int
    group: str
    weight: float = 1.0


@dataclass(frozen=True)
class Samples:
    """Column-oriented collection of labeled samples.

    ``groups`` holds string labels; the other arrays are float/int vectors of
    equal length.
    """

    scores: np.ndarray
    outcomes: np.ndarray
    groups: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        scores = check_scores(self.scores)
        outcomes = np.asarray(self.outcomes)
        if outcomes.shape != scores.shape:
            raise ValueError("scores and outcomes must have the same length")
        if not np.isin(outcomes, (0, 1)).all():
            bad = int(np.flatnonzero(~np.isin(outcomes, (0, 1)))[0])
            raise ValueError(f"outcome at index {bad} is not 0/1: {outcomes[bad]!r}")
        groups = np.asarray(self.groups).astype(str)
        if groups.shape != scores.shape:
            raise ValueError("scores and groups must have the same length")
        if np.any(groups == ""):
            raise ValueError("group labels must be non-empty")
        weights = check_weights(self.weights, scores.size)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "outcomes", outcomes.astype(int))
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_records(cls, records) -> "Samples":
        records = list(records)
        return cls(
            np.array([r.score for r in records], dtype=float),
            np.array([r.outcome for r in records], dtype=int),
            np.array([r.group for r in records], dtype=str),
            np.array([r.weight for r in records], dtype=float),
        )

    def __len__(self) -> int:
        return self.scores.size

    def __iter__(self) -> Iterator[LabeledSample]:
        for s, y, g, w in zip(self.scores, self.outcomes, self.groups, self.weights):
            yield LabeledSample(float(s), int(y), str(g), float(w))

    @property
    def group_labels(self) -> list[str]:
        """Distinct group labels in order of first appearance."""
        _, first = np.unique(self.groups, return_index=True)
        return [str(self.groups[i]) for i in sorted(first)]

    def subset(self, mask) -> "Samples":
        return Samples(self.scores[mask], self.outcomes[mask], self.groups[mask], self.weights[mask])

    def shares(self) -> dict[str, float]:
        total = self.weights.sum()
        return {g: float(self.weights[self.groups == g].sum() / total) for g in self.group_labels}


@dataclass(frozen=True)
class DiscreteScoreDistribution:
    """Score values ``p`` with masses ``s`` and conditional outcome means ``q``.

    ``bin_map`` (optional) maps each raw histogram bin to an index into
    ``values`` (-1 for bins never observed); ``counts`` holds the raw number
    of samples behind each support point.
    """

    values: np.ndarray
    masses: np.ndarray
    cond_means: np.ndarray
    group: str = ""
    counts: np.ndarray | None = None
    bin_map: np.ndarray | None = None
    degenerate: bool = field(default=False)

    def __post_init__(self):
        p = np.asarray(self.values, dtype=float).ravel()
        s = np.asarray(self.masses, dtype=float).ravel()
        q = np.asarray(self.cond_means, dtype=float).ravel()
        if p.size == 0:
            raise ValueError("distribution needs at least one support point")
        if not (p.size == s.size == q.size):
            raise ValueError("values, masses and cond_means must have equal length")
        if np.any(np.diff(p) <= 0):
            raise ValueError("values must be strictly increasing")
        if np.any((p < 0) | (p > 1)) or np.any((q < 0) | (q > 1)):
            raise ValueError("values and cond_means must lie in [0, 1]")
        if np.any(s < 0) or abs(s.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses must be non-negative and sum to 1 (got {s.sum()!r})")
        for name, arr in (("values", p), ("masses", s), ("cond_means", q)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        base = float(q @ s)
        object.__setattr__(self, "degenerate", self.degenerate or base <= 0.0 or base >= 1.0)

    @property
    def n_points(self) -> int:
        return self.values.size

    @property
    def base_rate(self) -> float:
        return float(self.cond_means @ self.masses)

    @property
    def is_calibrated(self) -> bool:
        return bool(np.allclose(self.values, self.cond_means, atol=1e-12))

    def mean_score(self) -> float:
        return float(self.values @ self.masses)

    def variance(self) -> float:
        mu = self.mean_score()
        return float(((self.values - mu) ** 2) @ self.masses)


@dataclass(frozen=True)
class GroupStats:
    base_rate: float
    odds: float
    population_share: float

    @property
    def mean_outcome(self) -> float:
        return self.base_rate


def discretize(scores, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Floor scores onto an ``n_bins`` grid.

    Returns ``(bin_index, value)`` with ``value = floor(n_bins * score) / n_bins``.
    A score of exactly 1.0 is clamped into the top bin so there are never more
    than ``n_bins`` bins.
    """
    if int(n_bins) != n_bins or n_bins < 1:
        raise ValueError(f"n_bins must be a positive integer, got {n_bins!r}")
    n_bins = int(n_bins)
    scores = check_scores(scores)
    idx = np.minimum(np.floor(scores * n_bins).astype(int), n_bins - 1)
    return idx, idx / n_bins


def _weighted_bins(idx, outcomes, weights, n_bins):
    w = np.bincount(idx, weights=weights, minlength=n_bins)
    wy = np.bincount(idx, weights=weights * outcomes, minlength=n_bins)
    cnt = np.bincount(idx, minlength=n_bins)
    return w, wy, cnt


def _merge(values, masses, means, counts, occupied):
    """Collapse support points whose values agree within MERGE_TOL."""
    order = np.argsort(values, kind="stable")
    values, masses, means, counts = values[order], masses[order], means[order], counts[order]
    occupied = occupied[order]
    keys = np.concatenate([[0], np.cumsum(np.diff(values) > MERGE_TOL)])
    k = keys[-1] + 1
    m = np.bincount(keys, weights=masses, minlength=k)
    mq = np.bincount(keys, weights=masses * means, minlength=k)
    v = np.bincount(keys, weights=masses * values, minlength=k)
    c = np.bincount(keys, weights=counts, minlength=k).astype(int)
    bin_to_point = np.empty(occupied.size, dtype=int)
    bin_to_point[:] = keys
    return v / m, m, mq / m, c, occupied, bin_to_point


def _group_distribution(label, idx, outcomes, weights, n_bins, pooled_means=None, recalibrate=True):
    w, wy, cnt = _weighted_bins(idx, outcomes, weights, n_bins)
    total = w.sum()
    if total <= 0:
        raise ValueError(f"group {label!r} has no (positively weighted) samples")
    occupied = np.flatnonzero(cnt > 0)
    masses = w[occupied] / total
    keep = masses > 0
    occupied, masses = occupied[keep], masses[keep]
    means = wy[occupied] / w[occupied]
    if pooled_means is not None:
        values = pooled_means[occupied]
    elif recalibrate:
        values = means
    else:
        values = occupied / n_bins
    values = np.clip(values, 0.0, 1.0)
    v, m, q, c, occ, to_point = _merge(values, masses, means, cnt[occupied], occupied)
    bin_map = np.full(n_bins, -1, dtype=int)
    bin_map[occ] = to_point
    m = m / m.sum()
    if pooled_means is None and recalibrate:
        q = v
    return DiscreteScoreDistribution(v, m, q, label, counts=c, bin_map=bin_map)


def calibrate_bins(samples: Samples, n_bins: int = 50, per_group: bool = True) -> dict[str, DiscreteScoreDistribution]:
    """Bin scores and replace each bin's score with its (weighted) mean outcome.

    With ``per_group`` the recalibration is done within each group, giving
    distributions with ``cond_means == values``.  Otherwise bin values are the
    pooled mean outcome across groups while ``cond_means`` keep each group's
    own bin means, i.e. the result is generally not calibrated within groups.
    Bins whose recalibrated values coincide are merged.
    """
    idx, _ = discretize(samples.scores, n_bins)
    pooled = None
    if not per_group:
        w, wy, _ = _weighted_bins(idx, samples.outcomes, samples.weights, n_bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            pooled = np.where(w > 0, wy / np.where(w > 0, w, 1.0), 0.0)
    out = {}
    for g in samples.group_labels:
        mask = samples.groups == g
        out[g] = _group_distribution(g, idx[mask], samples.outcomes[mask], samples.weights[mask], n_bins, pooled)
    return out


def bin_distributions(samples: Samples, n_bins: int = 50) -> dict[str, DiscreteScoreDistribution]:
    """Bin scores without recalibrating: values are the bin floors, ``cond_means`` the bin means."""
    idx, _ = discretize(samples.scores, n_bins)
    out = {}
    for g in samples.group_labels:
        mask = samples.groups == g
        out[g] = _group_distribution(
            g, idx[mask], samples.outcomes[mask], samples.weights[mask], n_bins, recalibrate=False
        )
    return out


def group_stats(dist: DiscreteScoreDistribution, share: float = 1.0) -> GroupStats:
    mu = dist.base_rate
    if mu <= 1e-15 or mu >= 1 - 1e-15:
        raise DegenerateBaseRateError(f"degenerate base rate {mu!r} for group {dist.group!r}")
    return GroupStats(mu, mu / (1 - mu), float(share))
