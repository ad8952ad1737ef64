import json

import numpy as np
import pytest

from calibfair.geometry import ConvexPolygon, DecisionPolicy, feasibility, feasible_region
from calibfair.rates import (
    InfeasibleRegionError,
    PenaltySpec,
    expected_loss,
    optimize_basic,
    optimize_flexible,
    region_R_A,
)
from calibfair.scores import group_stats
from conftest import dist, random_calibrated


def test_expected_loss_examples():
    assert expected_loss((0, 1), 7.0, 0.3) == 0.0
    assert expected_loss((1, 0), 1.0, 0.5) == pytest.approx(1.0)
    assert expected_loss((0.2, 0.8), 2.0, 0.4) == pytest.approx(0.32, abs=1e-12)


def test_basic_unit_square():
    t = optimize_basic(ConvexPolygon.unit_square(), 3.0, 0.4)
    assert t.rate("any") == (0.0, 1.0) and t.objective == 0.0 and t.mode == "basic"


def test_basic_diagonal_tie_break():
    seg = ConvexPolygon.from_points([[0, 0], [1, 1]])
    t = optimize_basic(seg, 1.0, 0.5)
    assert t.rate("*") == (0.0, 0.0)
    assert t.objective == pytest.approx(0.5)


def test_basic_quadrilateral():
    quad = ConvexPolygon.from_points([[0, 0], [0.2, 0.8], [1, 1], [0.8, 0.2]])
    t = optimize_basic(quad, 10.0, 0.5, groups=["L", "H"])
    assert t.rates == {"L": (0.0, 0.0), "H": (0.0, 0.0)}
    assert t.objective == pytest.approx(0.5)


def test_basic_empty_region():
    with pytest.raises(InfeasibleRegionError, match="flexible"):
        optimize_basic(ConvexPolygon(np.zeros((0, 2))), 1.0, 0.5)


def test_basic_is_best_vertex_and_scale_invariant(rng):
    for _ in range(200):
        poly = ConvexPolygon.from_points(rng.uniform(size=(8, 2)))
        k, mu = rng.uniform(0.1, 10), rng.uniform(0.05, 0.95)
        t = optimize_basic(poly, k, mu)
        z = t.rate("*")
        assert any(np.allclose(z, v) for v in poly.vertices)
        assert all(expected_loss(v, k, mu) >= t.objective - 1e-12 for v in poly.vertices)
        c = rng.uniform(0.1, 100)
        scaled = c * np.array([expected_loss(v, k, mu) for v in poly.vertices])
        assert scaled.min() == pytest.approx(c * t.objective, rel=1e-12, abs=1e-12)


def test_penalty_validation():
    with pytest.raises(ValueError):
        PenaltySpec(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        PenaltySpec(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        PenaltySpec(np.eye(2), gamma=1.5)
    with pytest.raises(ValueError):
        PenaltySpec.preset("bogus")
    PenaltySpec(np.array([[1.0, 1.0], [1.0, 1.0]]))  # PSD but singular is fine


def test_region_R_A_examples():
    pol = DecisionPolicy(0.5)
    perfect = dist([0.0, 1.0], [0.4, 0.6])
    assert region_R_A(perfect, group_stats(perfect), pol).contains((0.0, 1.0))
    low = dist([0.3], [1.0])
    assert region_R_A(low, group_stats(low), pol).contains((0.0, 0.0))
    # mean exactly at the cutoff: (0, 0) sits on the strict NPV boundary
    edge = dist([0.5], [1.0])
    r = region_R_A(edge, group_stats(edge), pol)
    assert r.on_strict_boundary((0.0, 0.0))


def _feasible_pair(rng):
    while True:
        dl, dh = random_calibrated(rng, 8, "L"), random_calibrated(rng, 8, "H")
        pol = DecisionPolicy(float(rng.uniform(0.3, 0.7)))
        sl, sh = group_stats(dl), group_stats(dh)
        if abs(sl.base_rate - sh.base_rate) < 0.05:
            continue
        region, _ = feasible_region([dl, dh], pol)
        if region.n_vertices >= 3 and region.area > 1e-3:
            return dl, dh, pol, region


def _regions(dl, dh, pol):
    return {d.group: region_R_A(d, group_stats(d), pol) for d in (dl, dh)}


def test_zero_penalty_decouples(rng):
    for _ in range(20):
        dl, dh, pol, _ = _feasible_pair(rng)
        regions = _regions(dl, dh, pol)
        means = {d.group: group_stats(d).base_rate for d in (dl, dh)}
        t = optimize_flexible(regions, PenaltySpec.preset("none"), pol.k, means)
        for g, r in regions.items():
            alone = optimize_basic(r, pol.k, means[g])
            assert expected_loss(t.rate(g), pol.k, means[g]) == pytest.approx(alone.objective, abs=1e-9)


def test_large_penalty_recovers_equal_rates(rng):
    checked = 0
    for _ in range(30):
        dl, dh, pol, region = _feasible_pair(rng)
        sl, sh = group_stats(dl, 0.5), group_stats(dh, 0.5)
        mu = 0.5 * (sl.base_rate + sh.base_rate)
        basic = optimize_basic(region, pol.k, mu)
        losses = sorted(expected_loss(v, pol.k, mu) for v in region.vertices)
        if losses[1] - losses[0] < 1e-3:
            continue  # near-tied vertices make the comparison ill-posed
        checked += 1
        means = {"L": sl.base_rate, "H": sh.base_rate}
        t = optimize_flexible(_regions(dl, dh, pol), PenaltySpec.preset("equal-odds"), pol.k, means)
        assert t.gap < 1e-8
        zl, zh = np.array(t.rate("L")), np.array(t.rate("H"))
        assert np.abs(zl - zh).max() <= 1e-3
        assert np.abs(zl - np.array(basic.rate("*"))).max() <= 1e-3
    assert checked >= 5


def test_equal_tpr_penalty(rng):
    for _ in range(20):
        dl, dh, pol, _ = _feasible_pair(rng)
        means = {d.group: group_stats(d).base_rate for d in (dl, dh)}
        t = optimize_flexible(_regions(dl, dh, pol), PenaltySpec.preset("equal-tpr"), pol.k, means)
        assert abs(t.rate("L")[1] - t.rate("H")[1]) <= 1e-3
        assert t.gap < 1e-8


def test_flexible_works_when_basic_region_empty():
    dl, dh = dist([0.1, 0.4], [0.5, 0.5], group="L"), dist([0.6, 0.9], [0.5, 0.5], group="H")
    pol = DecisionPolicy(0.5)
    assert not feasibility([dl, dh], pol).region_nonempty
    means = {"L": 0.25, "H": 0.75}
    t = optimize_flexible(_regions(dl, dh, pol), PenaltySpec.preset("equal-odds", gamma=0.5), pol.k, means)
    assert t.gap < 1e-8
    assert set(t.rates) == {"L", "H"}


def test_frank_wolfe_monotone_and_matches_exact(rng):
    for _ in range(10):
        dl, dh, pol, _ = _feasible_pair(rng)
        regions = _regions(dl, dh, pol)
        means = {d.group: group_stats(d).base_rate for d in (dl, dh)}
        pen = PenaltySpec(np.array([[2.0, 0.5], [0.5, 1.0]]))
        fw = optimize_flexible(regions, pen, pol.k, means, method="frank-wolfe")
        ex = optimize_flexible(regions, pen, pol.k, means)
        assert np.all(np.diff(fw.history) <= 1e-12)
        assert fw.objective >= ex.objective - 1e-9
        assert fw.objective - ex.objective <= max(fw.gap, 1e-8)


def test_flexible_empty_group_region_named():
    empty = ConvexPolygon(np.zeros((0, 2)))
    with pytest.raises(InfeasibleRegionError, match="'H'"):
        optimize_flexible({"L": ConvexPolygon.unit_square(), "H": empty}, PenaltySpec.preset("none"), 1.0, {"L": 0.3, "H": 0.6})


def test_three_groups_pairwise_penalty(rng):
    ds = [random_calibrated(rng, 6, g) for g in "abc"]
    pol = DecisionPolicy(0.5)
    regions = {d.group: region_R_A(d, group_stats(d), pol) for d in ds}
    if any(r.is_empty for r in regions.values()):
        pytest.skip("random instance has an empty region")
    means = {d.group: group_stats(d).base_rate for d in ds}
    t = optimize_flexible(regions, PenaltySpec.preset("equal-odds", strength=1e4), pol.k, means)
    rates = np.array([t.rate(g) for g in "abc"])
    assert np.abs(rates - rates.mean(axis=0)).max() < 1e-2


def test_target_serialises():
    t = optimize_basic(ConvexPolygon.unit_square(), 1.0, 0.5, groups=["L", "H"])
    d = json.loads(json.dumps(t.to_dict()))
    assert d["rates"]["L"] == {"fpr": 0.0, "tpr": 1.0} and d["mode"] == "basic"
