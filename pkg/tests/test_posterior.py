import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scaledesign.fitting import Dataset, FitResult, fit_multistart
from scaledesign.laws import make_spec, predict, scaled_jacobians
from scaledesign.posterior import (
    DEDUP_FLOOR,
    EIG_FLOOR,
    MAX_BASINS,
    PRIOR_PRECISION,
    SIGMA2_FLOOR,
    LocalGaussian,
    PosteriorError,
    WeightConfig,
    cluster_labels,
    estimate_noise,
    estimate_posterior,
    local_covariance,
    mixture_weights,
    predictive_skl,
    select_representatives,
    skl_matrix,
)

import oracles

LIN1 = make_spec("linear", 1)
SPEC = make_spec("sum_power", 2, bounds=[[-10, 10], [1e-3, 1e3], [1e-3, 1e3], [0.05, 1.5], [0.05, 1.5]])


def fit_at(theta, mse=0.0, start=0):
    return FitResult(np.asarray(theta, dtype=float), mse, True, 1, start)


def test_constants():
    assert SIGMA2_FLOOR == 1e-8 and PRIOR_PRECISION == 1e-6 and EIG_FLOOR == 1e-10
    assert DEDUP_FLOOR == 1e-6 and MAX_BASINS == 8


def test_scalar_covariance():
    # one point, p = 1, phi = 1, sigma2 = 1, prior 0.5 -> H = 1.5
    spec = make_spec("linear", 1)
    data = Dataset(np.array([[0.0]]), np.array([1.0]))
    # with x = 0 the slope column is zero; use a diagonal prior to isolate the intercept
    local = local_covariance(spec, data, fit_at([1.0, 0.0]), 1.0, prior_precision=[0.5, 1.0])
    assert local.cov[0, 0] == pytest.approx(2.0 / 3.0, rel=1e-14)


def test_linear_covariance_is_bayesian_regression():
    rng = np.random.default_rng(0)
    spec = make_spec("linear", 3)
    X = rng.normal(size=(12, 3))
    data = Dataset(X, rng.normal(size=12))
    local = local_covariance(spec, data, fit_at(np.zeros(4)), 0.3, prior_precision=0.0)
    Phi = np.column_stack([np.ones(12), X])
    exact = oracles.bayes_linear_cov(Phi, 0.3)
    assert np.linalg.norm(local.cov - exact) / np.linalg.norm(exact) < 1e-8


def test_nonlinear_covariance_matches_eigen_inversion():
    rng = np.random.default_rng(2)
    X = np.exp(rng.uniform(0, 4, (15, 2)))
    theta = np.array([1.2, 3.0, 2.0, 0.4, 0.3])
    data = Dataset(X, predict(SPEC, theta, X))
    local = local_covariance(SPEC, data, fit_at(theta), 1e-3)
    J = scaled_jacobians(SPEC, theta, X)
    H = J.T @ J / 1e-3 + 1e-6 * np.eye(5)
    w, V = np.linalg.eigh(H)
    w = np.maximum(w, 1e-10 * w.max())
    ref = (V / w) @ V.T
    assert np.linalg.norm(local.cov - ref) / np.linalg.norm(ref) < 1e-8
    assert np.allclose(local.cov, local.cov.T, atol=1e-10 * np.abs(local.cov).max())
    assert np.linalg.eigvalsh(local.cov).min() >= -1e-12


def test_skl_examples():
    d = skl_matrix(np.array([[0.0], [1.0]]), np.array([[1.0], [1.0]]))
    assert d[0, 1] == pytest.approx(0.5)
    a = LocalGaussian(np.array([1.2, 3.0, 2.0, 0.4, 0.3]), np.eye(5) * 1e-3, 0.0)
    pts = np.array([[100.0, 200.0], [300.0, 50.0]])
    assert predictive_skl(SPEC, a, a, pts, 1e-4) == 0.0


@given(st.integers(0, 10_000))
def test_skl_matches_formula_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=(4, 5))
    var = rng.uniform(0.1, 3.0, size=(4, 5))
    d = skl_matrix(mu, var)
    np.testing.assert_array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)
    for a in range(4):
        for b in range(4):
            if a != b:
                ref = np.mean([oracles.skl_scalar(mu[a, t], var[a, t], mu[b, t], var[b, t]) for t in range(5)])
                assert d[a, b] == pytest.approx(ref, rel=1e-12)


def test_identical_locals_single_cluster():
    assert np.all(cluster_labels(np.zeros((6, 6))) == 0)
    assert np.all(cluster_labels(np.zeros((1, 1))) == 0)
    assert np.all(cluster_labels(np.array([[0, 5.0], [5.0, 0]])) == 0)


@given(st.integers(0, 10_000), st.integers(2, 10), st.integers(2, 10))
def test_planted_partition_recovered(seed, n_a, n_b):
    rng = np.random.default_rng(seed)
    labels = np.array([0] * n_a + [1] * n_b)
    rng.shuffle(labels)
    M = labels.size
    d = np.where(labels[:, None] == labels[None, :], rng.uniform(0, 1e-6, (M, M)), rng.uniform(10, 20, (M, M)))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0)
    found = cluster_labels(d)
    assert found.max() == 1
    # same partition up to relabeling
    assert np.all((found[:, None] == found[None, :]) == (labels[:, None] == labels[None, :]))


def test_representatives_pick_lowest_mse():
    locs = [LocalGaussian(np.array([float(i)]), np.eye(1), m) for i, m in enumerate([0.3, 0.1, 0.2, 0.5])]
    reps = select_representatives([[0, 1, 2], [3]], locs)
    assert reps[0].mse == 0.1 and reps[1].mse == 0.5
    rng = np.random.default_rng(1)
    for _ in range(20):
        mses = rng.uniform(size=10)
        locs = [LocalGaussian(np.zeros(1), np.eye(1), m) for m in mses]
        part = [list(range(0, 4)), list(range(4, 10))]
        reps = select_representatives(part, locs)
        assert [r.mse for r in reps] == [min(mses[p] for p in members) for members in part]


def test_bic_weights():
    one = [LocalGaussian(np.zeros(3), np.eye(3), 0.01)]
    assert mixture_weights(one, 10, 3).tolist() == [1.0]
    two_eq = [LocalGaussian(np.zeros(3), np.eye(3), 0.02)] * 2
    np.testing.assert_allclose(mixture_weights(two_eq, 10, 3), [0.5, 0.5])
    two = [LocalGaussian(np.zeros(3), np.eye(3), m) for m in (0.01, 0.04)]
    w = mixture_weights(two, 10, 3, WeightConfig("bic", 1.0))
    assert w[0] == pytest.approx(1.0 / (1.0 + math.exp(-5.0 * math.log(4.0))), rel=1e-12)
    assert abs(w.sum() - 1) < 1e-12


def test_laplace_weights_normalized_and_prefer_better_fit():
    a = LocalGaussian(np.zeros(2), np.eye(2), 0.01, np.eye(2), 0.0)
    b = LocalGaussian(np.zeros(2), np.eye(2), 0.02, np.eye(2), 0.0)
    w = mixture_weights([a, b], 10, 2, WeightConfig("laplace"), sigma2=0.01)
    assert abs(w.sum() - 1) < 1e-12 and w[0] > w[1]
    with pytest.raises(ValueError):
        WeightConfig("other")
    with pytest.raises(ValueError):
        WeightConfig("bic", 0.0)


def test_single_fit_posterior():
    rng = np.random.default_rng(4)
    X = np.exp(rng.uniform(0, 4, (10, 2)))
    theta = np.array([1.2, 3.0, 2.0, 0.4, 0.3])
    data = Dataset(X, predict(SPEC, theta, X) + 1e-3 * rng.normal(size=10))
    target = np.array([[500.0, 500.0], [900.0, 300.0]])
    post = estimate_posterior(SPEC, data, [fit_at(theta, 1e-6)], target)
    assert post.K == 1 and post.weights.tolist() == [1.0]
    np.testing.assert_array_equal(post.basins[0].target_mean, predict(SPEC, theta, target))
    with pytest.raises(PosteriorError):
        estimate_posterior(SPEC, data, [], target)


def exchangeable_problem():
    x = np.geomspace(1, 100, 12)
    X = np.column_stack([x, x])
    theta = np.array([1.5, 3.0, 3.0, 0.6, 0.25])
    return Dataset(X, predict(SPEC, theta, X)), theta, np.array([[200.0, 2000.0], [300.0, 1000.0]])


def test_two_planted_fits_give_two_basins():
    data, theta, target = exchangeable_problem()
    swapped = theta[[0, 2, 1, 4, 3]]
    fits = [fit_at(theta, 1e-6, 0), fit_at(swapped, 1e-6, 1)]
    post = estimate_posterior(SPEC, data, fits * 3, target)
    assert post.K == 2
    ref = mixture_weights(
        [LocalGaussian(theta, np.eye(5), 1e-6), LocalGaussian(swapped, np.eye(5), 1e-6)], len(data), 5
    )
    np.testing.assert_allclose(post.weights, ref, atol=1e-12)


def test_multistart_fits_on_exchangeable_data_find_both_basins():
    data, theta, target = exchangeable_problem()
    fits = fit_multistart(SPEC, data, 64, seed=0)
    post = estimate_posterior(SPEC, data, fits, target)
    # poor local optima form their own basins but carry negligible weight
    order = np.argsort(post.weights)[::-1]
    top = [post.basins[i] for i in order[:2]]
    assert sum(b.weight for b in top) > 1 - 1e-9
    np.testing.assert_allclose(sorted(b.theta[3] for b in top), [0.25, 0.6], rtol=1e-6)
    assert abs(top[0].target_mean[0] - top[1].target_mean[0]) > 1e-3


def test_linear_posterior_is_exact():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(8, 2))
    spec = make_spec("linear", 2)
    data = Dataset(X, X @ [1.0, -2.0] + 0.5)
    fits = fit_multistart(spec, data, 4, seed=0)
    target = rng.normal(size=(3, 2))
    post = estimate_posterior(spec, data, fits, target, prior_precision=0.0, sigma2=0.1)
    Phi = np.column_stack([np.ones(8), X])
    Jt = np.column_stack([np.ones(3), target])
    exact = Jt @ oracles.bayes_linear_cov(Phi, 0.1) @ Jt.T
    b = post.basins[0]
    got = b.target_jac @ b.sigma @ b.target_jac.T
    assert np.linalg.norm(got - exact) / np.linalg.norm(exact) < 1e-8
    np.testing.assert_allclose(b.theta, [0.5, 1.0, -2.0], atol=1e-8)


@given(st.integers(0, 10_000))
def test_posterior_invariants(seed):
    rng = np.random.default_rng(seed)
    X = np.exp(rng.uniform(0, 4, (9, 2)))
    theta = np.array([1.5, 3.0, 2.0, 0.5, 0.3])
    data = Dataset(X, predict(SPEC, theta, X) + 0.01 * rng.normal(size=9))
    fits = fit_multistart(SPEC, data, 12, seed=seed)
    post = estimate_posterior(SPEC, data, fits, np.array([[300.0, 300.0], [800.0, 100.0]]))
    assert abs(post.weights.sum() - 1) < 1e-12
    assert post.noise_var >= SIGMA2_FLOOR
    assert post.noise_var == estimate_noise(fits)
    for b in post.basins:
        assert np.linalg.eigvalsh(b.sigma).min() >= -1e-12
    # representatives are pairwise distinguishable
    reps = [LocalGaussian(b.theta, b.sigma, b.mse) for b in post.basins]
    for i in range(len(reps)):
        for j in range(i + 1, len(reps)):
            assert predictive_skl(SPEC, reps[i], reps[j], post.target, post.noise_var) >= DEDUP_FLOOR
