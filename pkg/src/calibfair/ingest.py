"""Loading labeled scores from CSV, the COMPAS file layout, and seeded synthetic data."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import DecisionPolicy
from .scores import Samples, calibrate_bins, discretize

__all__ = [
    "CompasData",
    "DatasetSchema",
    "EmptyDatasetError",
    "RowError",
    "SchemaError",
    "SyntheticGroup",
    "SyntheticSpec",
    "generate_synthetic",
    "load_compas",
    "load_csv",
    "write_samples_csv",
]


class SchemaError(ValueError):
    """A required column is missing or the schema itself is invalid."""


class EmptyDatasetError(ValueError):
    """No row survived parsing."""


@dataclass(frozen=True)
class RowError:
    row: int  # 1-based data row number (the header is row 0)
    column: str
    value: str
    reason: str

    def __str__(self) -> str:
        return f"row {self.row}: column {self.column!r} value {self.value!r}: {self.reason}"


@dataclass(frozen=True)
class DatasetSchema:
    score_column: str = "score"
    outcome_column: str = "outcome"
    group_column: str = "group"
    weight_column: str | None = None
    outcome_positive_value: str = "1"

    def __post_init__(self):
        cols = [self.score_column, self.outcome_column, self.group_column]
        if self.weight_column is not None:
            cols.append(self.weight_column)
        if any(not c for c in cols):
            raise SchemaError("column names must be non-empty")
        if len(set(cols)) != len(cols):
            raise SchemaError(f"column names must be distinct: {cols}")


@dataclass
class LoadResult:
    samples: Samples
    rejected: list[RowError] = field(default_factory=list)
    row_numbers: np.ndarray | None = None


def _require(header, columns, path):
    missing = [c for c in columns if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; found {list(header)}")


def load_csv(path, schema: DatasetSchema = DatasetSchema()) -> LoadResult:
    """Parse a headed CSV into samples, rejecting malformed rows with their row numbers."""
    path = Path(path)
    scores, outcomes, groups, weights, rows = [], [], [], [], []
    rejected: list[RowError] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyDatasetError(f"{path}: file has no header row")
        needed = [schema.score_column, schema.outcome_column, schema.group_column]
        if schema.weight_column:
            needed.append(schema.weight_column)
        _require(reader.fieldnames, needed, path)
        for n, rec in enumerate(reader, start=1):
            err = _parse_row(n, rec, schema)
            if isinstance(err, RowError):
                rejected.append(err)
                continue
            s, y, g, w = err
            scores.append(s)
            outcomes.append(y)
            groups.append(g)
            weights.append(w)
            rows.append(n)
    if not scores:
        detail = "; ".join(str(e) for e in rejected[:5])
        raise EmptyDatasetError(f"{path}: no valid rows" + (f" ({detail})" if detail else ""))
    samples = Samples(np.array(scores), np.array(outcomes), np.array(groups, dtype=str), np.array(weights))
    return LoadResult(samples, rejected, np.array(rows))


def _parse_row(n, rec, schema):
    def cell(col):
        v = rec.get(col)
        return None if v is None else v.strip()

    raw = cell(schema.score_column)
    if not raw:
        return RowError(n, schema.score_column, raw or "", "missing score")
    try:
        s = float(raw)
    except ValueError:
        return RowError(n, schema.score_column, raw, "not a number")
    if not (0.0 <= s <= 1.0):
        return RowError(n, schema.score_column, raw, "score outside [0, 1]")
    y_raw = cell(schema.outcome_column)
    if not y_raw:
        return RowError(n, schema.outcome_column, y_raw or "", "missing outcome")
    g = cell(schema.group_column)
    if not g:
        return RowError(n, schema.group_column, g or "", "missing group")
    w = 1.0
    if schema.weight_column:
        w_raw = cell(schema.weight_column)
        try:
            w = float(w_raw)
        except (TypeError, ValueError):
            return RowError(n, schema.weight_column, w_raw or "", "not a number")
        if not (math.isfinite(w) and w >= 0):
            return RowError(n, schema.weight_column, w_raw, "weight must be finite and non-negative")
    return s, int(y_raw == schema.outcome_positive_value), g, w


def write_samples_csv(dest, samples: Samples, schema: DatasetSchema = DatasetSchema()) -> None:
    """Write samples as CSV to a path or an open text stream."""
    if hasattr(dest, "write"):
        _write_samples(dest, samples, schema)
        return
    with open(Path(dest), "w", newline="", encoding="utf-8") as fh:
        _write_samples(fh, samples, schema)


def _write_samples(fh, samples, schema):
    w = csv.writer(fh)
    header = [schema.score_column, schema.outcome_column, schema.group_column]
    if schema.weight_column:
        header.append(schema.weight_column)
    w.writerow(header)
    for s in samples:
        row = [repr(s.score), s.outcome, s.group]
        if schema.weight_column:
            row.append(repr(s.weight))
        w.writerow(row)


# --- COMPAS ---------------------------------------------------------------

COMPAS_COLUMNS = ("decile_score", "race", "two_year_recid")
DEFAULT_RACES = ("African-American", "Caucasian")
LOW_RISK_DECILES = (1, 2, 3, 4)


@dataclass
class CompasData:
    samples: Samples
    deciles: np.ndarray
    policy: DecisionPolicy
    cutoff_source: str
    rejected: list[RowError] = field(default_factory=list)

    @property
    def k(self) -> float:
        return self.policy.k


def compas_cutoff(samples: Samples, deciles, positive_deciles=LOW_RISK_DECILES) -> float:
    """Smallest per-group recalibrated score among bins coming from ``positive_deciles``.

    Scores are ``decile / 10``; recalibration uses ten bins so each decile is
    its own bin.
    """
    deciles = np.asarray(deciles, dtype=int)
    dists = calibrate_bins(samples, n_bins=10)
    best = np.inf
    for g, d in dists.items():
        mask = samples.groups == g
        bins, _ = discretize(samples.scores[mask], 10)
        sel = np.isin(deciles[mask], positive_deciles)
        for b in np.unique(bins[sel]):
            best = min(best, float(d.values[d.bin_map[b]]))
    if not np.isfinite(best):
        raise ValueError("no rows fall in the deciles that define the cutoff")
    return best


def load_compas(
    path,
    races: tuple[str, str] = DEFAULT_RACES,
    cutoff: float | None = None,
    positive_deciles=LOW_RISK_DECILES,
) -> CompasData:
    """Read a ProPublica-style COMPAS export.

    Keeps the two requested races, uses ``decile_score / 10`` as the score and
    sets the outcome to 1 for people who did *not* reoffend within two years.
    Unless ``cutoff`` is given, the cutoff is the smallest recalibrated score
    among deciles 1-4 (the ones classified positive under this orientation).
    """
    path = Path(path)
    scores, outcomes, groups, decs = [], [], [], []
    rejected = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyDatasetError(f"{path}: file has no header row")
        _require(reader.fieldnames, COMPAS_COLUMNS, path)
        for n, rec in enumerate(reader, start=1):
            race = (rec["race"] or "").strip()
            seen.add(race)
            if race not in races:
                continue
            try:
                dec = int(rec["decile_score"])
                recid = int(rec["two_year_recid"])
            except (TypeError, ValueError):
                rejected.append(RowError(n, "decile_score/two_year_recid", str(rec.get("decile_score")), "not an integer"))
                continue
            if not 1 <= dec <= 10 or recid not in (0, 1):
                rejected.append(RowError(n, "decile_score/two_year_recid", f"{dec}/{recid}", "out of range"))
                continue
            scores.append(dec / 10.0)
            outcomes.append(1 - recid)
            groups.append(race)
            decs.append(dec)
    missing = [r for r in races if r not in groups]
    if missing:
        raise ValueError(f"race value(s) {missing} not found; available: {sorted(seen)}")
    samples = Samples(np.array(scores), np.array(outcomes), np.array(groups, dtype=str))
    deciles = np.array(decs)
    if cutoff is None:
        cutoff, source = compas_cutoff(samples, deciles, positive_deciles), "min-calibrated-low-risk-decile"
    else:
        source = "override"
    return CompasData(samples, deciles, DecisionPolicy(float(cutoff)), source, rejected)


# --- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticGroup:
    """One group: population share and a Beta mixture over the true score."""

    name: str
    share: float
    components: tuple[tuple[float, float, float], ...]  # (weight, a, b)

    def __post_init__(self):
        if not self.name:
            raise ValueError("group name must be non-empty")
        if not 0 < self.share <= 1:
            raise ValueError(f"share of group {self.name!r} must lie in (0, 1]")
        comps = tuple(tuple(float(x) for x in c) for c in self.components)
        if not comps:
            raise ValueError(f"group {self.name!r} needs at least one mixture component")
        for w, a, b in comps:
            if w < 0 or a <= 0 or b <= 0:
                raise ValueError(f"invalid Beta component {(w, a, b)} for group {self.name!r}")
        if sum(c[0] for c in comps) <= 0:
            raise ValueError("mixture weights must not all be zero")
        object.__setattr__(self, "components", comps)

    def mean(self) -> float:
        w = np.array([c[0] for c in self.components])
        m = np.array([c[1] / (c[1] + c[2]) for c in self.components])
        return float(w @ m / w.sum())


@dataclass(frozen=True)
class SyntheticSpec:
    groups: tuple[SyntheticGroup, ...]
    count: int
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if len({g.name for g in self.groups}) != len(self.groups):
            raise ValueError("group names must be unique")
        total = sum(g.share for g in self.groups)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"group shares must sum to 1, got {total}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        groups = tuple(
            SyntheticGroup(g["name"], float(g["share"]), tuple(tuple(c) for c in g["components"])) for g in d["groups"]
        )
        return cls(groups, int(d["count"]), int(d.get("seed", 0)))

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "groups": [{"name": g.name, "share": g.share, "components": [list(c) for c in g.components]} for g in self.groups],
            "count": self.count,
            "seed": self.seed,
        }

    def with_seed(self, seed: int) -> "SyntheticSpec":
        return SyntheticSpec(self.groups, self.count, seed)

    def with_count(self, count: int) -> "SyntheticSpec":
        return SyntheticSpec(self.groups, count, self.seed)


def generate_synthetic(spec: SyntheticSpec, return_truth: bool = False):
    """Draw group labels by share, true scores from each group's Beta mixture and ``Y ~ Bernoulli(score)``.

    Group membership uses a generator keyed on the seed; each group then
    draws from its own generator keyed on ``(seed, group index)``.
    """
    seq = np.random.SeedSequence(int(spec.seed))
    children = seq.spawn(len(spec.groups) + 1)
    top = np.random.default_rng(children[0])
    shares = np.array([g.share for g in spec.groups])
    label_idx = top.choice(len(spec.groups), size=spec.count, p=shares / shares.sum())
    scores = np.empty(spec.count)
    outcomes = np.empty(spec.count, dtype=int)
    for gi, g in enumerate(spec.groups):
        rng = np.random.default_rng(children[gi + 1])
        idx = np.flatnonzero(label_idx == gi)
        w = np.array([c[0] for c in g.components])
        comp = rng.choice(len(g.components), size=idx.size, p=w / w.sum())
        a = np.array([c[1] for c in g.components])[comp]
        b = np.array([c[2] for c in g.components])[comp]
        p = rng.beta(a, b)
        scores[idx] = p
        outcomes[idx] = (rng.random(idx.size) < p).astype(int)
    names = np.array([g.name for g in spec.groups], dtype=str)
    samples = Samples(scores, outcomes, names[label_idx])
    return (samples, scores.copy()) if return_truth else samples
