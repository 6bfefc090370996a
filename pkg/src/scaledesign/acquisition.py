"""Candidate scoring: expected reduction of target-region prediction variance.

``dv_intra`` is the closed-form within-basin variance reduction from a rank-one
Gaussian update.  ``dv_inter`` is the expected drop of the between-basin
disagreement, a one-dimensional integral over the predicted outcome that is
evaluated on a trapezoid grid.  Everything is vectorized over candidates.

Grid
----
For each candidate, every basin contributes ``n_nodes`` uniform nodes on
``[m_k - 6 s_k, m_k + 6 s_k]``.  The merged nodes form a composite trapezoid
rule whose panels are kept only where they fall inside one of those intervals,
so far-apart basins are integrated as separate pieces and narrow basins keep
their own resolution next to wide ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .laws import CostModel, predict, scaled_jacobians
from .posterior import LocalGaussian, Posterior, single_basin

DEFAULT_ALPHA = 0.4
QUAD_NODES = 257
QUAD_WIDTH = 6.0


@dataclass(frozen=True)
class GridConfig:
    n_nodes: int = QUAD_NODES
    width: float = QUAD_WIDTH
    # cap on the lattice size, in units of n_nodes per basin
    max_nodes_per_basin: int = 16


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class CandidateScore:
    pool_index: int
    dv_intra: float
    dv_inter: float
    cost: float
    score: float


@dataclass(frozen=True)
class BasinPredictions:
    """Per-candidate quantities of every basin: arrays indexed ``[k, c]``."""

    m: np.ndarray  # predicted mean, (K, C)
    s2: np.ndarray  # predictive variance, (K, C)
    G: np.ndarray  # J_k Sigma_k j_k(x), (K, T, C)


def _points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def basin_predictions(post: Posterior, X) -> BasinPredictions:
    X = _points(X)
    thetas = np.stack([b.theta for b in post.basins])
    m = predict(post.spec, thetas, X)  # (K, C)
    j = scaled_jacobians(post.spec, thetas, X)  # (K, C, p)
    sigmas = np.stack([b.sigma for b in post.basins])
    sj = np.einsum("kpq,kcq->kcp", sigmas, j)  # Sigma_k j_k
    s2 = post.noise_var + np.einsum("kcp,kcp->kc", j, sj)
    G = np.einsum("ktp,kcp->ktc", np.stack([b.target_jac for b in post.basins]), sj)
    return BasinPredictions(m, s2, G)


def _maybe_scalar(values: np.ndarray, X):
    return float(values[0]) if np.asarray(X).ndim == 1 else values


# ---------------------------------------------------------------------------
# within-basin term


def v_intra(post: Posterior) -> float:
    T = post.target.shape[0]
    return float(
        sum(b.weight * np.trace(b.target_jac @ b.sigma @ b.target_jac.T) for b in post.basins) / T
    )


def rank_one_update(sigma: np.ndarray, j: np.ndarray, sigma2: float) -> np.ndarray:
    """Covariance after one linear-Gaussian observation with sensitivity ``j``."""
    sj = sigma @ j
    s2 = sigma2 + j @ sj
    out = sigma - np.outer(sj, sj) / s2
    return 0.5 * (out + out.T)


def _intra_from(post: Posterior, bp: BasinPredictions) -> np.ndarray:
    T = post.target.shape[0]
    w = post.weights[:, None]
    return np.sum(w * np.sum(bp.G**2, axis=1) / bp.s2, axis=0) / T


def intra_utility(post: Posterior, X):
    """Expected within-basin variance reduction for one or many candidates."""
    return _maybe_scalar(_intra_from(post, basin_predictions(post, X)), X)


def predictive_mixture(post: Posterior, x) -> List[tuple]:
    """``(w_k, m_k, s_k^2)`` of the outcome distribution at a single candidate."""
    bp = basin_predictions(post, np.asarray(x, dtype=float).reshape(1, -1))
    return [(float(b.weight), float(bp.m[k, 0]), float(bp.s2[k, 0])) for k, b in enumerate(post.basins)]


# ---------------------------------------------------------------------------
# between-basin term


def v_inter(post: Posterior) -> float:
    """Between-basin disagreement in its pairwise form."""
    T = post.target.shape[0]
    total = 0.0
    for k in range(post.K):
        for l in range(k + 1, post.K):
            bk, bl = post.basins[k], post.basins[l]
            total += bk.weight * bl.weight * np.sum((bk.target_mean - bl.target_mean) ** 2)
    return float(total / T)


def v_inter_centered(post: Posterior) -> float:
    T = post.target.shape[0]
    means = np.stack([b.target_mean for b in post.basins])
    w = post.weights
    center = w @ means
    return float(np.sum(w * np.sum((means - center) ** 2, axis=1)) / T)


def _lattice(m: np.ndarray, s: np.ndarray, cfg: GridConfig):
    """Uniform lattice restricted to the union of ``[m_k - w s_k, m_k + w s_k]``."""
    lo, hi = m - cfg.width * s, m + cfg.width * s
    h = 2.0 * cfg.width * s.min() / (cfg.n_nodes - 1)
    order = np.argsort(lo)
    merged = []
    for a, b in zip(lo[order], hi[order]):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    length = sum(b - a for a, b in merged)
    h = max(h, length / (cfg.max_nodes_per_basin * cfg.n_nodes * m.size))
    origin = merged[0][0]
    nodes, weights = [], []
    for a, b in merged:
        i = np.arange(np.ceil((a - origin) / h), np.floor((b - origin) / h) + 1)
        x = np.unique(np.concatenate([[a], origin + h * i, [b]]))
        x = x[(x >= a) & (x <= b)]
        w = np.zeros_like(x)
        d = np.diff(x)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def quadrature_nodes(m: np.ndarray, s: np.ndarray, cfg: GridConfig = GridConfig()):
    """Trapezoid nodes and weights for each candidate; ``m`` and ``s`` are ``(K, C)``.

    Nodes lie on a uniform lattice whose spacing resolves the narrowest basin,
    restricted to the union of the basin intervals.  Rows are padded with the
    last node at zero weight, giving arrays of shape ``(C, N)``.
    """
    grids = [_lattice(m[:, c], s[:, c], cfg) for c in range(m.shape[1])]
    N = max(g[0].size for g in grids)
    nodes = np.empty((len(grids), N))
    weights = np.zeros((len(grids), N))
    for c, (x, w) in enumerate(grids):
        nodes[c, : x.size] = x
        nodes[c, x.size:] = x[-1]
        weights[c, : x.size] = w
    return nodes, weights


def quadrature_grid(means, sds, cfg: GridConfig = GridConfig()) -> QuadratureGrid:
    """Grid for a single candidate from its basin means and standard deviations."""
    m = np.asarray(means, dtype=float).reshape(-1, 1)
    s = np.asarray(sds, dtype=float).reshape(-1, 1)
    x, w = _lattice(m[:, 0], s[:, 0], cfg)
    return QuadratureGrid(x, w)


def _log_phi(y, m, s2):
    return -0.5 * (np.log(2.0 * np.pi * s2) + (y - m) ** 2 / s2)


def mixture_log_densities(post: Posterior, bp: BasinPredictions, nodes: np.ndarray):
    """Log of ``w_k phi_k(y)`` at the nodes, shape ``(K, C, N)``, and the mixture log density."""
    logw = np.log(np.maximum(post.weights, 1e-300))[:, None, None]
    lp = logw + _log_phi(nodes[None], bp.m[:, :, None], bp.s2[:, :, None])
    return lp, logsumexp(lp, axis=0)


def posterior_basin_weights(post: Posterior, bp: BasinPredictions, nodes: np.ndarray) -> np.ndarray:
    """Updated basin probabilities ``w_k^+(y)`` at the nodes, shape ``(K, C, N)``."""
    lp, lmix = mixture_log_densities(post, bp, nodes)
    return np.exp(lp - lmix[None])


def pair_coefficients(post: Posterior, bp: BasinPredictions, center: np.ndarray):
    """Quadratic coefficients of ``||f_k^+ - f_l^+||^2`` in ``y - center``.

    Returns ``(A, B, C)`` arrays of shape ``(K, K, C)``; only ``k < l`` is used.
    """
    g = bp.G / bp.s2[:, None, :]  # (K, T, C)
    means = np.stack([b.target_mean for b in post.basins])  # (K, T)
    # f_k^+ = means_k + g_k (y - m_k) = [means_k + g_k (center - m_k)] + g_k (y - center)
    base = means[:, :, None] + g * (center[None, None, :] - bp.m[:, None, :])
    a = base[:, None] - base[None, :]  # (K, K, T, C)
    b = g[:, None] - g[None, :]
    return np.sum(a * a, axis=2), 2.0 * np.sum(a * b, axis=2), np.sum(b * b, axis=2)


def _inter_chunk(post: Posterior, bp: BasinPredictions, cfg: GridConfig) -> np.ndarray:
    K, C = bp.m.shape
    nodes, weights = quadrature_nodes(bp.m, np.sqrt(bp.s2), cfg)
    lp, lmix = mixture_log_densities(post, bp, nodes)
    center = post.weights @ bp.m
    A, B, Cq = pair_coefficients(post, bp, center)
    y = nodes - center[:, None]
    expected = np.zeros(C)
    for k in range(K):
        for l in range(k + 1, K):
            # w_k w_l phi_k phi_l / p(y)
            dens = np.exp(lp[k] + lp[l] - lmix)
            poly = A[k, l][:, None] + B[k, l][:, None] * y + Cq[k, l][:, None] * y * y
            expected += np.sum(weights * dens * poly, axis=1)
    return expected


def _inter_from(post: Posterior, bp: BasinPredictions, cfg: GridConfig) -> np.ndarray:
    K, C = bp.m.shape
    if K == 1:
        return np.zeros(C)
    T = post.target.shape[0]
    expected = np.empty(C)
    step = 64
    for start in range(0, C, step):
        sl = slice(start, start + step)
        part = BasinPredictions(bp.m[:, sl], bp.s2[:, sl], bp.G[:, :, sl])
        expected[sl] = _inter_chunk(post, part, cfg)
    return v_inter(post) - expected / T


def inter_utility(post: Posterior, X, cfg: GridConfig = GridConfig()):
    """Expected between-basin variance reduction for one or many candidates."""
    return _maybe_scalar(_inter_from(post, basin_predictions(post, X), cfg), X)


def utilities(post: Posterior, X, cfg: GridConfig = GridConfig()):
    """``(dv_intra, dv_inter)`` arrays for the candidates in ``X``."""
    bp = basin_predictions(post, _points(X))
    return _intra_from(post, bp), _inter_from(post, bp, cfg)


# ---------------------------------------------------------------------------
# scores


def cost_scaled(utility: np.ndarray, costs: np.ndarray, alpha: float) -> np.ndarray:
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return utility / np.power(costs, alpha)


def score_candidates(
    post: Posterior,
    X,
    costs,
    alpha: float = DEFAULT_ALPHA,
    cfg: GridConfig = GridConfig(),
    pool_index=None,
) -> List[CandidateScore]:
    """Cost-aware scores ``(dv_intra + dv_inter) / cost**alpha`` in input order."""
    X = _points(X)
    if X.shape[0] == 0:
        return []
    costs = np.asarray(costs, dtype=float)
    pool_index = np.arange(X.shape[0]) if pool_index is None else np.asarray(pool_index)
    intra, inter = utilities(post, X, cfg)
    scores = cost_scaled(intra + inter, costs, alpha)
    return [
        CandidateScore(int(i), float(a), float(b), float(c), float(s))
        for i, a, b, c, s in zip(pool_index, intra, inter, costs, scores)
    ]


def candidate_costs(model: CostModel, X) -> np.ndarray:
    return model.costs(_points(X))


def dopt_utility(spec, best: LocalGaussian, X, sigma2: float):
    """Log-determinant gain of the Fisher information, ``log(1 + j' Sigma j / sigma2)``."""
    j = scaled_jacobians(spec, best.theta, _points(X))
    quad = np.einsum("cp,pq,cq->c", j, best.cov, j)
    return _maybe_scalar(np.log1p(quad / sigma2), X)


def dopt_score(best: LocalGaussian, spec, x, sigma2: float) -> float:
    return dopt_utility(spec, best, np.asarray(x, dtype=float).reshape(-1), sigma2)


def vopt_utility(spec, best: LocalGaussian, target, X, sigma2: float):
    """Target variance reduction under the single linearization at ``best``."""
    return intra_utility(single_basin(spec, best, target, sigma2), X)


def vopt_score(best: LocalGaussian, spec, target, x, sigma2: float) -> float:
    return vopt_utility(spec, best, target, np.asarray(x, dtype=float).reshape(-1), sigma2)
