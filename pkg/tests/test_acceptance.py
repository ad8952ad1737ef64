"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` to see the summary lines next to
pytest's own verdicts.  The COMPAS part of criterion 2 needs the path of a
COMPAS export in ``CALIBFAIR_COMPAS_CSV``; without it that part is skipped.
"""

import os

import numpy as np
import pytest

from calibfair.diagnostics import (
    FiniteJoint,
    calibration_curve,
    coverage,
    grid_search_counterexamples,
    impossibility_check,
)
from calibfair.geometry import DecisionPolicy, feasibility
from calibfair.ingest import generate_synthetic, load_compas
from calibfair.pipeline import PipelineError, choose_targets, postprocess_pipeline
from calibfair.rates import PenaltySpec, region_R_A
from calibfair.scores import DiscreteScoreDistribution, Samples, calibrate_bins, group_stats
from calibfair.simplex import LinearProgram, LpStatus, solve_lp
from calibfair.transport import TransportProblemSpec, build_lp, solve_kernel
from conftest import FEASIBLE_SPEC, random_calibrated
from oracles import kernel_grid_search, lp_vertex_enumeration
from test_simplex import random_small_lp

K_HEADLINE = 10.0
N_BINS = 50


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")


def loss_se(res, policy):
    """Standard error of the empirical decision loss over samples."""
    s = res.scored
    yhat = s.classification.astype(bool)
    y = s.outcomes.astype(bool)
    per = policy.k * (yhat & ~y) + (~yhat & y)
    return float(per.std(ddof=1) / np.sqrt(per.size))


def rate_gap_se(res, policy):
    """Standard errors of the TPR and FPR differences between the two groups."""
    s = res.scored
    se_t = se_f = 0.0
    for g in np.unique(s.groups):
        m = s.groups == g
        y, yhat = s.outcomes[m].astype(bool), s.classification[m].astype(bool)
        tpr, fpr = yhat[y].mean(), yhat[~y].mean()
        se_t += tpr * (1 - tpr) / y.sum()
        se_f += fpr * (1 - fpr) / (~y).sum()
    return float(np.sqrt(se_t)), float(np.sqrt(se_f))


@pytest.fixture(scope="module")
def headline_runs():
    """20 seeded feasible synthetic instances at n=50,000, N=50, k=10."""
    policy = DecisionPolicy.from_k(K_HEADLINE)
    runs = []
    for seed in range(20):
        s = generate_synthetic(FEASIBLE_SPEC.with_seed(seed).with_count(50_000))
        runs.append(postprocess_pipeline(s, policy, n_bins=N_BINS, seed=seed))
    return policy, runs


def test_criterion_1_zero_cost_calibration(headline_runs, capsys):
    policy, runs = headline_runs
    det_worst = emp_worst = 0.0
    failures = []
    for seed, res in enumerate(runs):
        implied = sum(
            res.shares[g] * (policy.k * a1 * (1 - mu) + (1 - a2) * mu)
            for g, kern in res.kernels.items()
            for (a1, a2), mu in [(kern.implied_rates(), group_stats(res.distributions[g]).base_rate)]
        )
        det = abs(implied - res.predicted_loss)
        emp = abs(res.after.loss - res.predicted_loss)
        se = loss_se(res, policy)
        det_worst = max(det_worst, det)
        emp_worst = max(emp_worst, emp / se)
        if det > 1e-6 or emp > 1e-6 + 3 * se:
            failures.append(seed)
    ok = not failures
    report(capsys, 1, ok, f"kernel loss vs predicted max {det_worst:.2e} (tol 1e-6); "
           f"empirical max {emp_worst:.2f} SE (tol 3 SE + 1e-6); failing seeds {failures}")
    assert ok


def _compas_part():
    path = os.environ.get("CALIBFAIR_COMPAS_CSV")
    if not path or not os.path.exists(path):
        return None, "COMPAS part skipped: set CALIBFAIR_COMPAS_CSV to a COMPAS export"
    data = load_compas(path)
    try:
        res = postprocess_pipeline(data.samples, data.policy, n_bins=N_BINS)
    except PipelineError:
        res = postprocess_pipeline(data.samples, data.policy, mode="flexible",
                                   penalty=PenaltySpec.preset("equal-odds"), n_bins=N_BINS)
    pre = (res.before.tpr_gap, res.before.fpr_gap)
    post = (res.after.tpr_gap, res.after.fpr_gap)
    ok = max(post) <= 0.02
    return ok, f"COMPAS gaps pre tpr {pre[0]:.4f} fpr {pre[1]:.4f}, post tpr {post[0]:.4f} fpr {post[1]:.4f}"


def test_criterion_2_error_disparity_elimination(headline_runs, capsys):
    policy, runs = headline_runs
    failures = []
    worst_tpr = worst_fpr = worst_se = 0.0
    for seed, res in enumerate(runs):
        se_t, se_f = rate_gap_se(res, policy)
        tg, fg = res.after.tpr_gap, res.after.fpr_gap
        worst_tpr, worst_fpr, worst_se = max(worst_tpr, tg), max(worst_fpr, fg), max(worst_se, se_t, se_f)
        if tg > 0.01 + 3 * se_t or fg > 0.01 + 3 * se_f:
            failures.append(seed)
    compas_ok, compas_msg = _compas_part()
    ok = not failures and compas_ok is not False
    report(capsys, 2, ok, f"synthetic max TPR gap {worst_tpr:.4f}, max FPR gap {worst_fpr:.4f} "
           f"(tol 0.01 + 3 SE, max SE {worst_se:.4f}), failing seeds {failures}; {compas_msg}")
    assert ok


def test_criterion_3_calibration_preserved(capsys):
    policy = DecisionPolicy.from_k(K_HEADLINE)
    covs = []
    for seed in range(5):
        s = generate_synthetic(FEASIBLE_SPEC.with_seed(100 + seed).with_count(100_000))
        res = postprocess_pipeline(s, policy, n_bins=N_BINS, seed=seed, evaluate_outputs=False)
        rows = calibration_curve(res.scored.output_scores, s.outcomes, s.groups)
        covs.append(coverage(rows))
    ok = min(covs) >= 0.95
    report(capsys, 3, ok, f"per-run coverage of output bins within 3 SE: {[round(c, 3) for c in covs]} (need >= 0.95)")
    assert ok


def merge_adjacent(d, rng):
    """Garble a calibrated distribution by pooling random runs of adjacent points."""
    cuts = np.sort(rng.choice(np.arange(1, d.n_points), size=int(rng.integers(1, d.n_points)), replace=False))
    parts = np.split(np.arange(d.n_points), cuts)
    masses = np.array([d.masses[p].sum() for p in parts])
    values = np.array([d.values[p] @ d.masses[p] for p in parts]) / masses
    return DiscreteScoreDistribution(values, masses, values, d.group)


def test_criterion_4_feasibility_geometry(capsys):
    rng = np.random.default_rng(4)
    inconsistent = flips = checked_pairs = 0
    for _ in range(1000):
        L = random_calibrated(rng, int(rng.integers(2, 12)), "L")
        H = random_calibrated(rng, int(rng.integers(2, 12)), "H")
        policy = DecisionPolicy(float(rng.uniform(0.1, 0.9)))
        try:
            rep = feasibility([L, H], policy)
        except ValueError:
            continue
        inconsistent += not rep.consistent
        if L.n_points > 2 and H.n_points > 2:
            coarse = feasibility([merge_adjacent(L, rng), merge_adjacent(H, rng)], policy)
            checked_pairs += 1
            flips += coarse.verdict.feasible and not rep.verdict.feasible
    ok = inconsistent == 0 and flips == 0
    report(capsys, 4, ok, f"verdict/polygon disagreements {inconsistent} of 1000; "
           f"dominance flips {flips} of {checked_pairs} garbled pairs")
    assert ok


def uncalibrated_two_point(rng):
    """Two-point input whose conditional means make a random kernel feasible."""
    p = np.sort(rng.uniform(0.05, 0.95, 2))
    s = rng.dirichlet([1.0, 1.0])
    T0 = rng.dirichlet([1.0, 1.0], size=2)
    # column calibration: sum_i T0[i, j] s_i (q_i - p_j) = 0 for each j
    M = (T0 * s[:, None]).T
    q = np.linalg.solve(M, M.sum(axis=1) * p)
    if np.any(q <= 0) or np.any(q >= 1):
        return None, None
    return DiscreteScoreDistribution(p, s, q, "A"), T0


def two_point_instance(rng):
    d, T0 = uncalibrated_two_point(rng)
    if d is None:
        return None
    policy = DecisionPolicy(float(rng.uniform(*d.values)))
    pos = T0[:, d.values >= policy.cutoff].sum(axis=1)
    mu = d.cond_means @ d.masses
    tpr = float((pos * d.masses * d.cond_means).sum() / mu)
    fpr = float((pos * d.masses * (1 - d.cond_means)).sum() / (1 - mu))
    return TransportProblemSpec(d, (fpr, tpr), policy, calibrated_input=False)


def three_point_instance(rng):
    d = random_calibrated(rng, 3)
    policy = DecisionPolicy(float(rng.uniform(d.values[0], d.values[-1])))
    try:
        region = region_R_A(d, group_stats(d), policy, support_aware=True)
    except ValueError:
        return None
    if region.is_empty:
        return None
    w = rng.dirichlet(np.ones(region.n_vertices))
    return TransportProblemSpec(d, tuple(np.clip(w @ region.vertices, 0, 1)), policy)


def test_criterion_5_transport_oracle(capsys):
    rng = np.random.default_rng(5)
    worst, unreachable = 0.0, 0
    compared = {2: 0, 3: 0}
    failures = []
    for n_points, make in ((2, two_point_instance), (3, three_point_instance)):
        while compared[n_points] < 100:
            spec = make(rng)
            if spec is None:
                continue
            lp = build_lp(spec).lp
            best, _ = kernel_grid_search(lp.A_eq, lp.b_eq, lp.c, lp.upper, step=1e-4)
            sol = solve_lp(lp)
            compared[n_points] += 1
            if best is None:
                unreachable += 1
                if sol.status is not LpStatus.INFEASIBLE:
                    failures.append((n_points, compared[n_points]))
                continue
            gap = abs(sol.objective - best) if sol.success else np.inf
            worst = max(worst, gap)
            if gap > 1e-6:
                failures.append((n_points, compared[n_points]))
    ok = not failures
    report(capsys, 5, ok, f"{compared[2]} N=2 and {compared[3]} N=3 LPs vs grid oracle (step 1e-4): max objective gap "
           f"{worst:.2e} (tol 1e-6), {unreachable} agreed-unreachable, failures {failures[:5]}")
    assert ok


def test_criterion_6_mean_preserving_contraction(capsys):
    rng = np.random.default_rng(6)
    solved = 0
    worst_shift = worst_var = -np.inf
    while solved < 100:
        d = random_calibrated(rng, int(rng.integers(3, 15)))
        policy = DecisionPolicy(float(rng.uniform(0.2, 0.8)))
        try:
            region = region_R_A(d, group_stats(d), policy, support_aware=True)
        except ValueError:
            continue
        if region.is_empty:
            continue
        w = rng.dirichlet(np.ones(region.n_vertices))
        kern = solve_kernel(TransportProblemSpec(d, tuple(np.clip(w @ region.vertices, 0, 1)), policy))
        var_in = float(((d.values - d.values @ d.masses) ** 2) @ d.masses)
        worst_shift = max(worst_shift, abs(kern.mean_shift()))
        worst_var = max(worst_var, kern.output_variance() - var_in)
        solved += 1
    ok = worst_shift <= 1e-8 and worst_var <= 1e-8
    report(capsys, 6, ok, f"100 kernels: max |mean shift| {worst_shift:.2e}, max variance increase {worst_var:.2e} (tol 1e-8)")
    assert ok


def test_criterion_7_simplex_correctness(headline_runs, capsys):
    rng = np.random.default_rng(2024)
    mismatches = 0
    statuses = []
    for _ in range(500):
        c, A, b = random_small_lp(rng)
        kind, val, _ = lp_vertex_enumeration(c, A, b)
        sol = solve_lp(LinearProgram(c, A_ub=A, b_ub=b))
        statuses.append(sol.status)
        if sol.status.value != kind or (kind == "optimal" and abs(sol.objective - val) > 1e-7):
            mismatches += 1
    # the transport LPs behind the headline runs form the rest of the corpus
    policy, runs = headline_runs
    for res in runs:
        for g, kern in res.kernels.items():
            statuses.append(solve_lp(build_lp(TransportProblemSpec(res.distributions[g], kern.targets, policy)).lp).status)
    failures = sum(s is LpStatus.NUMERICAL_FAILURE for s in statuses)
    ok = mismatches == 0 and failures == 0
    report(capsys, 7, ok, f"500 random LPs vs vertex enumeration: {mismatches} mismatches (tol 1e-7); "
           f"NumericalFailure {failures} of {len(statuses)} solves")
    assert ok


def test_criterion_8_flexible_matches_basic(capsys):
    worst_basic = worst_tpr = 0.0
    compared = 0
    for seed in range(10):
        s = generate_synthetic(FEASIBLE_SPEC.with_seed(200 + seed).with_count(50_000))
        dists = calibrate_bins(s, N_BINS)
        shares = s.shares()
        for k in (1.0, 3.0, K_HEADLINE):
            policy = DecisionPolicy.from_k(k)
            basic, _, _ = choose_targets(dists, policy, "basic", None, shares)
            flex, _, _ = choose_targets(dists, policy, "flexible", PenaltySpec(1e6 * np.eye(2)), shares)
            tpr_only, _, _ = choose_targets(dists, policy, "flexible", PenaltySpec(np.diag([0.0, 1e6])), shares)
            for g in dists:
                worst_basic = max(worst_basic, float(np.abs(np.subtract(flex.rate(g), basic.rate(g))).max()))
            worst_tpr = max(worst_tpr, abs(tpr_only.rates["L"][1] - tpr_only.rates["H"][1]))
            compared += 1
    ok = worst_basic <= 1e-3 and worst_tpr <= 1e-3
    report(capsys, 8, ok, f"{compared} instances: max |flexible - basic| rate {worst_basic:.2e}; "
           f"equal-tpr preset max TPR gap {worst_tpr:.2e} (tol 1e-3)")
    assert ok


def test_criterion_9_independence_grid_search(capsys):
    res = grid_search_counterexamples(0.01, 1e-3, limit=3)
    ok = res.n_counterexamples == 0
    detail = (f"{res.n_counterexamples} strictly positive grid joints have unequal base rates with both gaps < 1e-3 "
              f"(max base-rate gap {res.max_base_rate_gap:.4f}); {res.n_within_bound} of them satisfy the "
              f"stability bound independence_gap <= C * 1e-3")
    if res.counterexamples:
        r = impossibility_check(FiniteJoint(res.counterexamples[0], True), 1e-3)
        detail += (f"; e.g. calibration gap {r.calibration_gap:.1e}, error-rate gap {r.error_rate_gap:.1e}, "
                   f"base-rate gap {r.base_rate_gap:.1e}")
    report(capsys, 9, ok, detail)
    assert ok, "exact-zero independence is not implied at tolerance 1e-3; only the quantitative bound holds"


def test_criterion_10_richer_scores_cost_less(capsys):
    policy = DecisionPolicy.from_k(1.0)
    n_bins_limited = 10
    wins, gaps, infeasible = 0, [], 0
    for seed in range(100):
        s = generate_synthetic(FEASIBLE_SPEC.with_seed(seed).with_count(50_000))
        rich = postprocess_pipeline(s, policy, n_bins=N_BINS, seed=seed, evaluate_outputs=False)
        # pooling score bins garbles the score, so its ROC is dominated by the rich one
        coarse = (np.minimum(np.floor(s.scores * n_bins_limited), n_bins_limited - 1) + 0.5) / n_bins_limited
        try:
            limited = postprocess_pipeline(Samples(coarse, s.outcomes, s.groups), policy,
                                           n_bins=N_BINS, seed=seed, evaluate_outputs=False)
        except PipelineError:
            infeasible += 1
            continue
        gaps.append(limited.predicted_loss - rich.predicted_loss)
        wins += rich.predicted_loss <= limited.predicted_loss + 1e-12
    ok = wins == 100
    report(capsys, 10, ok, f"rich loss <= limited loss in {wins}/100 seeds (round-off allowance 1e-12); "
           f"mean loss increase from limiting {np.mean(gaps):.5f}; limited infeasible {infeasible}")
    assert ok


def test_criterion_11_cutoff_interval(capsys):
    eps = 0.05
    policy_eps = DecisionPolicy(0.5, eps)
    policy0 = DecisionPolicy(0.5)
    cutoffs = np.linspace(0.5 - eps, 0.5 + eps, 41)[1:-1]
    inside = flips = mse_violations = runs = 0
    worst = np.inf
    for seed in range(10):
        s = generate_synthetic(FEASIBLE_SPEC.with_seed(300 + seed).with_count(50_000))
        res = postprocess_pipeline(s, policy_eps, n_bins=N_BINS, seed=seed, evaluate_outputs=False)
        out = res.scored.output_scores
        inside += int(np.sum((out > 0.5 - eps) & (out < 0.5 + eps)))
        ref = out >= cutoffs[0]
        flips += sum(int(np.any((out >= c) != ref)) for c in cutoffs)
        for g, kern in res.kernels.items():
            base = solve_kernel(TransportProblemSpec(res.distributions[g], kern.targets, policy0))
            worst = min(worst, kern.objective - base.objective)
            mse_violations += kern.objective < base.objective - 1e-10
        runs += 1
    ok = inside == 0 and flips == 0 and mse_violations == 0
    report(capsys, 11, ok, f"{runs} runs with eps={eps}: outputs inside interval {inside}, classification changes "
           f"across {cutoffs.size} cutoffs {flips}; added MSE minus eps=0 MSE min {worst:.2e} (must be >= -1e-10 round-off)")
    assert ok
