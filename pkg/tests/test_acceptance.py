"""Acceptance criteria 1-10, one test each.

Every test records a one-line PASS/FAIL verdict; the lines are printed in the
pytest terminal summary (see conftest.py) and when this file is run directly.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from scaledesign.acquisition import (
    DEFAULT_ALPHA,
    basin_predictions,
    inter_utility,
    intra_utility,
    mixture_log_densities,
    posterior_basin_weights,
    quadrature_nodes,
    rank_one_update,
    v_inter,
    v_intra,
)
from scaledesign.bench_io import shipped_instances
from scaledesign.engine import (
    DesignConfig,
    Policy,
    PoolState,
    WARM_START_FACTOR,
    all_data_reference,
    run_episode,
    target_r2,
    warm_start,
    warm_start_size,
)
from scaledesign.fitting import DEFAULT_N_STARTS, Dataset, FitResult
from scaledesign.instance import Instance
from scaledesign.laws import CostModel, make_spec, param_jacobian, predict, registered_families
from scaledesign.posterior import LocalGaussian, Posterior, build_basins, cluster_basins, local_covariance

import oracles
from test_laws import random_case, straight_line

RESULTS = {}
BASELINE = Path(__file__).parent / "fixtures" / "acceptance_baseline.json"
SP2 = make_spec("sum_power", 2)


def verdict(n, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    RESULTS[n] = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {detail} ({elapsed:.1f}s, limit {limit:g}s)"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def posterior_from(spec, thetas, covs, weights, target, sigma2):
    reps = [LocalGaussian(np.asarray(t, float), np.asarray(c, float), 0.0) for t, c in zip(thetas, covs)]
    target = np.atleast_2d(np.asarray(target, dtype=float))
    return Posterior(spec, build_basins(spec, reps, np.asarray(weights, float), target), sigma2, target)


def random_posterior(rng, K, T=5):
    thetas, covs = [], []
    for _ in range(K):
        thetas.append([rng.uniform(1, 2), rng.uniform(1, 4), rng.uniform(1, 4), rng.uniform(0.2, 0.7), rng.uniform(0.2, 0.7)])
        A = rng.normal(size=(5, 5)) * rng.uniform(0.01, 0.2)
        covs.append(A @ A.T + 1e-4 * np.eye(5))
    target = np.exp(rng.uniform(4, 6, (T, 2)))
    return posterior_from(SP2, thetas, covs, rng.dirichlet(np.ones(K)), target, rng.uniform(1e-4, 1e-2))


# ---------------------------------------------------------------------------


def test_criterion_01_bayes_weight_identity():
    t0 = time.time()
    rng = np.random.default_rng(101)
    worst = 0.0
    for i in range(20):
        post = random_posterior(rng, (2, 3, 4)[i % 3])
        X = np.exp(rng.uniform(0, 5, (20, 2)))
        bp = basin_predictions(post, X)
        nodes, weights = quadrature_nodes(bp.m, np.sqrt(bp.s2))
        _, lmix = mixture_log_densities(post, bp, nodes)
        wplus = posterior_basin_weights(post, bp, nodes)
        integral = np.sum(wplus * np.exp(lmix)[None] * weights[None], axis=2)
        worst = max(worst, float(np.max(np.abs(integral - post.weights[:, None]))))
    verdict(1, worst < 1e-6, f"max |int w_k+ p dy - w_k| = {worst:.2e} (< 1e-6)", time.time() - t0, 10)


def test_criterion_02_linear_gaussian_exactness():
    t0 = time.time()
    rng = np.random.default_rng(102)
    worst_cov = worst_intra = worst_rank = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 4))
        spec = make_spec("linear", d)
        n = int(rng.integers(d + 2, 12))
        X = rng.normal(size=(n, d))
        Phi = np.column_stack([np.ones(n), X])
        sigma2 = float(rng.uniform(0.05, 2))
        theta = rng.normal(size=d + 1)
        data = Dataset(X, Phi @ theta + np.sqrt(sigma2) * rng.normal(size=n))
        exact = oracles.bayes_linear_cov(Phi, sigma2)
        local = local_covariance(spec, data, FitResult(theta, 0.0, True, 0, 0), sigma2, prior_precision=0.0)
        worst_cov = max(worst_cov, np.linalg.norm(local.cov - exact) / np.linalg.norm(exact))
        target = rng.normal(size=(4, d))
        Jt = np.column_stack([np.ones(4), target])
        post = posterior_from(spec, [theta], [exact], [1.0], target, sigma2)
        for _ in range(5):
            x = rng.normal(size=d)
            j = np.concatenate([[1.0], x])
            after = oracles.bayes_linear_cov(np.vstack([Phi, j]), sigma2)
            reduction = (np.trace(Jt @ exact @ Jt.T) - np.trace(Jt @ after @ Jt.T)) / 4
            worst_intra = max(worst_intra, abs(intra_utility(post, x) - reduction))
            worst_rank = max(worst_rank, float(np.max(np.abs(rank_one_update(exact, j, sigma2) - after))))
    ok = worst_cov < 1e-8 and worst_intra < 1e-10 and worst_rank < 1e-10
    verdict(2, ok, f"cov rel {worst_cov:.1e} (<1e-8), intra {worst_intra:.1e} (<1e-10), "
                   f"rank-one {worst_rank:.1e} (<1e-10)", time.time() - t0, 5)


def test_criterion_03_inter_utility_monte_carlo():
    t0 = time.time()
    rng = np.random.default_rng(103)
    cov = lambda s: np.diag(np.square(s))
    cases = [
        # well separated basins, candidate that tells them apart
        ([[1.5, 4.0, 6.0, 0.35, 0.30], [1.2, 6.0, 4.0, 0.30, 0.35]], [cov([.02, .1, .1, .01, .01])] * 2, [0.5, 0.5], [3.0, 40.0]),
        # exchangeable pair (swapped exponents) with unequal weights
        ([[1.5, 4.0, 4.0, 0.25, 0.60], [1.5, 4.0, 4.0, 0.60, 0.25]], [cov([.05, .2, .2, .02, .02])] * 2, [0.7, 0.3], [30.0, 2.0]),
        # overlapping basins with different spreads
        ([[1.6, 3.0, 3.0, 0.40, 0.40], [1.55, 3.2, 2.9, 0.42, 0.38]], [cov([.05, .3, .3, .03, .03]), cov([.01, .05, .05, .01, .01])], [0.4, 0.6], [8.0, 8.0]),
        # lopsided weights
        ([[1.0, 5.0, 2.0, 0.5, 0.3], [2.0, 2.0, 5.0, 0.3, 0.5]], [cov([.02, .1, .1, .02, .02])] * 2, [0.95, 0.05], [5.0, 50.0]),
        # a candidate that barely separates the basins
        ([[1.5, 4.0, 6.0, 0.35, 0.30], [1.4, 4.5, 5.5, 0.34, 0.31]], [cov([.03, .1, .1, .01, .01])] * 2, [0.5, 0.5], [1.0, 1.0]),
    ]
    target = [[200.0, 300.0], [500.0, 150.0], [900.0, 900.0]]
    zs = []
    for thetas, covs, w, x in cases:
        post = posterior_from(SP2, thetas, covs, w, target, 2e-3)
        x = np.asarray(x)
        bp = basin_predictions(post, x[None])
        fhat = np.stack([b.target_mean for b in post.basins])
        est, se = oracles.mc_inter_reduction(
            post.weights, bp.m[:, 0], bp.s2[:, 0], fhat, bp.G[:, :, 0], 1_000_000, rng
        )
        zs.append(abs(inter_utility(post, x) - est) / se)
    verdict(3, max(zs) < 3, "max |quadrature - MC| / SE = " + f"{max(zs):.2f} (< 3) over 5 posteriors",
            time.time() - t0, 60)


def test_criterion_04_total_variance():
    t0 = time.time()
    rng = np.random.default_rng(104)
    zs = []
    for i in range(10):
        post = random_posterior(rng, 1 + i % 4)
        F = [(b.target_mean, b.target_jac) for b in post.basins]
        est, se = oracles.mc_total_variance(
            post.weights, [b.theta for b in post.basins], [b.sigma for b in post.basins], F, 400_000, rng
        )
        zs.append(abs(v_intra(post) + v_inter(post) - est) / se)
    verdict(4, max(zs) < 3, f"max |V_intra + V_inter - MC| / SE = {max(zs):.2f} (< 3) over 10 posteriors",
            time.time() - t0, 30)


def test_criterion_05_jacobians():
    t0 = time.time()
    shipped = ["sum_power", "log_quadratic", "saturating", "linear"]
    assert set(shipped) <= set(registered_families())
    rng = np.random.default_rng(105)
    worst = {}
    for family in shipped:
        worst[family] = 0.0
        for _ in range(100):
            spec, theta, x = random_case(family, rng)
            analytic = param_jacobian(spec, theta, x)
            numeric = oracles.central_difference(lambda t: straight_line(spec, t, x), theta)
            scale = np.maximum(np.abs(numeric), 1e-8 * max(1.0, np.max(np.abs(numeric))))
            worst[family] = max(worst[family], float(np.max(np.abs(analytic - numeric) / scale)))
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(5, max(worst.values()) < 1e-5, f"max relative FD error: {detail} (< 1e-5)", time.time() - t0, 5)


def test_criterion_06_clustering_recovery():
    t0 = time.time()
    eval_points = np.exp(np.linspace(0, 6, 12))[:, None] * np.array([[1.0, 0.8]])
    centers = [np.array([1.5, 4.0, 4.0, 0.25, 0.60]), np.array([1.5, 4.0, 4.0, 0.60, 0.25])]
    cov = 1e-6 * np.eye(5)
    recovered = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        labels = rng.permutation([0] * 6 + [1] * 5)
        locals_ = [LocalGaussian(centers[l] + 1e-4 * rng.normal(size=5), cov, 1e-4) for l in labels]
        partition = cluster_basins(SP2, locals_, eval_points, 1e-3)
        found = np.empty(labels.size, dtype=int)
        for k, members in enumerate(partition):
            found[members] = k
        same = (found[:, None] == found[None, :]) == (labels[:, None] == labels[None, :])
        recovered += len(partition) == 2 and bool(np.all(same))
    identical = [LocalGaussian(centers[0].copy(), cov, 1e-4) for _ in range(7)]
    k_identical = len(cluster_basins(SP2, identical, eval_points, 1e-3))
    verdict(6, recovered == 10 and k_identical == 1,
            f"planted K=2 recovered in {recovered}/10 seeds, identical fits give K={k_identical}",
            time.time() - t0, 5)


def test_criterion_07_protocol_constants():
    t0 = time.time()
    checks = {
        "warm start ceil(2.5p)": all(warm_start_size(p) == math.ceil(2.5 * p) for p in range(1, 30))
        and WARM_START_FACTOR == 2.5 and len(warm_start(np.arange(50.0), 4)) == 10,
        "alpha 0.4": DEFAULT_ALPHA == 0.4 and DesignConfig().alpha == 0.4 and Policy("ours").alpha == 0.4,
        "64 starts": DEFAULT_N_STARTS == 64 and DesignConfig().n_starts == 64,
        "R^2 clipped": target_r2(make_spec("linear", 1), [1e9, 0.0], np.ones((3, 1)), np.arange(3.0)) == -1.0
        and target_r2(make_spec("linear", 1), [0.0, 1.0], np.arange(3.0)[:, None], np.arange(3.0)) == 1.0,
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(7, not failed, "all protocol constants hold" if not failed else f"failed: {failed}",
            time.time() - t0, 5)


# ---------------------------------------------------------------------------
# end-to-end sweep on the shipped instances

SWEEP_POLICIES = ("ours", "vopt", "random", "cheapest")
SWEEP_SEEDS = range(10)


@pytest.fixture(scope="module")
def sweep():
    t0 = time.time()
    r2 = {}
    instances = shipped_instances()
    for inst in instances:
        for policy in SWEEP_POLICIES:
            r2[inst.name, policy] = [
                run_episode(inst, Policy(policy), seed=seed).r2_at(0.10) for seed in SWEEP_SEEDS
            ]
    return {"instances": instances, "r2": r2, "elapsed": time.time() - t0}


def sweep_means(sweep):
    out = {}
    for policy in SWEEP_POLICIES:
        out[policy] = float(np.mean([np.mean(sweep["r2"][inst.name, policy]) for inst in sweep["instances"]]))
    return out


def test_criterion_08_end_to_end_ordering(sweep):
    means = sweep_means(sweep)
    clean = [i.name for i in sweep["instances"]
             if {"well_specified", "zero_noise"} <= set(i.metadata.get("tags", []))]
    clean_ours = {name: float(np.mean(sweep["r2"][name, "ours"])) for name in clean}
    frozen = json.loads(BASELINE.read_text())
    drift = max(abs(means[p] - frozen["mean_r2_at_10pct"][p]) for p in SWEEP_POLICIES)
    ok = (
        means["ours"] >= means["vopt"] - 0.02
        and means["ours"] > means["random"] + 0.05
        and means["ours"] > means["cheapest"] + 0.05
        and len(clean) >= 3
        and min(clean_ours.values()) >= 0.95
        and drift <= frozen["tolerance"]
    )
    gaps = {i.name: float(np.mean(sweep["r2"][i.name, "ours"]) - np.mean(sweep["r2"][i.name, "vopt"]))
            for i in sweep["instances"]}
    worst = min(gaps, key=gaps.get)
    detail = (", ".join(f"{p} {m:.3f}" for p, m in means.items())
              + f"; largest ours-vopt gap {worst} {gaps[worst]:+.3f}"
              + f"; zero-noise ours min {min(clean_ours.values()):.3f} over {len(clean)}"
              + f"; drift vs frozen baseline {drift:.3f}")
    verdict(8, ok, detail, sweep["elapsed"], 15 * 60)


def fuzz_instance(rng):
    family = rng.choice(["sum_power", "saturating", "linear"])
    n = int(rng.integers(8, 30))
    if family == "linear":
        spec = make_spec("linear", 2)
        X = rng.uniform(1, 10, (n, 2))
        theta = rng.normal(size=3)
    elif family == "saturating":
        spec = make_spec("saturating", 1)
        X = np.exp(rng.uniform(0, 4, (n, 1)))
        theta = np.array([1.0, 3.0, 2.0, 0.5])
    else:
        spec = make_spec("sum_power", 1)
        X = np.exp(rng.uniform(0, 4, (n, 1)))
        theta = np.array([1.0, 3.0, 0.4])
    costs = np.exp(rng.normal(0, 1.5, n))
    if rng.uniform() < 0.3:
        costs = np.round(costs, 0) + 1.0  # plenty of ties
    y = predict(spec, theta, X) + rng.uniform(0, 0.05) * rng.normal(size=n)
    T = X[:3] * 2
    return Instance("fuzz", spec, CostModel("unit"), X, costs, y, T, predict(spec, theta, T))


def test_criterion_09_budget_safety_and_replay():
    t0 = time.time()
    rng = np.random.default_rng(109)
    cfg = DesignConfig(n_starts=8)
    violations = reselections = mismatches = unspent = 0
    for _ in range(200):
        inst = fuzz_instance(rng)
        policy = Policy(str(rng.choice(["ours", "dopt", "vopt", "random", "cheapest", "cost_rand"])))
        fractions = sorted(rng.uniform(0.02, 0.6, int(rng.integers(1, 4))).tolist())
        seed = int(rng.integers(0, 2**31))
        log = run_episode(inst, policy, fractions, seed, cfg)
        budget = fractions[-1] * inst.total_cost
        spent, seen = 0.0, set()
        for r in log.rounds:
            reselections += r["index"] in seen
            seen.add(r["index"])
            spent += inst.pool_cost[r["index"]]
            violations += spent > budget * (1 + 1e-12)
        state = PoolState(inst.pool_cost, budget, list(seen), spent)
        unspent += state.feasible().size > 0
        mismatches += run_episode(inst, policy, fractions, seed, cfg).to_jsonl() != log.to_jsonl()
    ok = violations == reselections == mismatches == unspent == 0
    verdict(9, ok, f"200 episodes: {violations} budget violations, {reselections} reselections, "
                   f"{mismatches} replay mismatches, {unspent} stopped early", time.time() - t0, 300)


def test_criterion_10_misspecification(sweep):
    t0 = time.time()
    lines, any_ok = [], False
    for inst in sweep["instances"]:
        if "misspecified" not in inst.metadata.get("tags", []):
            continue
        ref = all_data_reference(inst)
        best_policy = max(SWEEP_POLICIES, key=lambda p: np.mean(sweep["r2"][inst.name, p]))
        best = float(np.mean(sweep["r2"][inst.name, best_policy]))
        any_ok |= best > ref
        lines.append(f"{inst.name}: all-data {ref:.3f} vs {best_policy} {best:.3f}")
    verdict(10, any_ok and lines, "; ".join(lines), time.time() - t0, 60)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
