import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from calibfair.ingest import SyntheticGroup, SyntheticSpec  # noqa: E402
from calibfair.scores import DiscreteScoreDistribution  # noqa: E402


def dist(values, masses, cond_means=None, group="A"):
    return DiscreteScoreDistribution(values, masses, values if cond_means is None else cond_means, group)


def random_calibrated(rng, n_points, group="A", lo=0.02, hi=0.98):
    """Random calibrated distribution with distinct values in (lo, hi)."""
    p = np.sort(rng.choice(np.linspace(lo, hi, 97), size=n_points, replace=False))
    s = rng.dirichlet(np.ones(n_points))
    return DiscreteScoreDistribution(p, s, p, group)


FEASIBLE_SPEC = SyntheticSpec(
    (
        SyntheticGroup("L", 0.44, ((0.6, 2.0, 3.0), (0.4, 9.0, 1.2))),
        SyntheticGroup("H", 0.56, ((0.3, 2.0, 3.0), (0.7, 12.0, 1.0))),
    ),
    count=50_000,
    seed=0,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
