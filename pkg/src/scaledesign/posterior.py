"""Basin-mixture posterior built from multi-start fits.

Each local optimum gets a Gauss-Newton Gaussian in the scaled (log for
positive parameters) parameterization.  Local optima are compared through the
symmetric KL divergence of their predictive Gaussians on the target region,
grouped by average-linkage agglomerative clustering with a silhouette-selected
cut, and each group is represented by its lowest-MSE member.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform
from scipy.special import logsumexp, softmax
from sklearn.metrics import silhouette_score

from .fitting import Dataset, FitResult, best_fit
from .laws import LawSpec, predict, scaled_jacobians

SIGMA2_FLOOR = 1e-8
PRIOR_PRECISION = 1e-6
EIG_FLOOR = 1e-10
JITTER = 1e-12
DEDUP_FLOOR = 1e-6
SILHOUETTE_FLOOR = 0.1
MAX_BASINS = 8
MSE_FLOOR = 1e-18


class PosteriorError(RuntimeError):
    """The basin approximation could not be built; reuse the previous posterior."""


@dataclass(frozen=True)
class WeightConfig:
    scheme: str = "bic"
    temperature: float = 1.0

    def __post_init__(self):
        if self.scheme not in ("bic", "laplace"):
            raise ValueError(f"unknown weight scheme {self.scheme!r}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class LocalGaussian:
    theta: np.ndarray
    cov: np.ndarray
    mse: float
    precision: Optional[np.ndarray] = None
    logdet_precision: float = 0.0


@dataclass(frozen=True)
class Basin:
    theta: np.ndarray
    sigma: np.ndarray
    weight: float
    target_mean: np.ndarray
    target_jac: np.ndarray
    mse: float = float("nan")
    logdet_precision: float = 0.0


@dataclass(frozen=True)
class Posterior:
    spec: LawSpec
    basins: Tuple[Basin, ...]
    noise_var: float
    target: np.ndarray
    n_locals: int = 0
    n_fits: int = 0

    @property
    def weights(self) -> np.ndarray:
        return np.array([b.weight for b in self.basins])

    @property
    def K(self) -> int:
        return len(self.basins)

    def summary(self) -> dict:
        return {
            "K": self.K,
            "weights": [float(b.weight) for b in self.basins],
            "thetas": [b.theta.tolist() for b in self.basins],
            "fit_mse": [float(b.mse) for b in self.basins],
            "noise_var": float(self.noise_var),
        }


def estimate_noise(fits: Sequence[FitResult]) -> float:
    return max(best_fit(fits).mse, SIGMA2_FLOOR)


def _prior_matrix(prior_precision, p):
    prior = np.asarray(prior_precision, dtype=float)
    if prior.ndim == 0:
        return np.eye(p) * float(prior)
    if prior.ndim == 1:
        return np.diag(prior)
    return prior


def _invert_floored(H: np.ndarray) -> Tuple[np.ndarray, float]:
    """Inverse and log-determinant of a symmetric matrix after eigenvalue flooring."""
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    try:
        evals, evecs = np.linalg.eigh(H)
    except np.linalg.LinAlgError:
        H = H + JITTER * np.eye(H.shape[-1])
        evals, evecs = np.linalg.eigh(H)
    top = np.max(evals, axis=-1, keepdims=True)
    if not np.all(np.isfinite(evals)) or np.any(top <= 0):
        raise PosteriorError("curvature matrix is singular even after flooring")
    evals = np.maximum(evals, EIG_FLOOR * top)
    cov = np.einsum("...ij,...j,...kj->...ik", evecs, 1.0 / evals, evecs)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    return cov, np.sum(np.log(evals), axis=-1)


def local_gaussians(
    spec: LawSpec,
    data: Dataset,
    fits: Sequence[FitResult],
    sigma2: float,
    prior_precision=PRIOR_PRECISION,
) -> List[LocalGaussian]:
    """Vectorized :func:`local_covariance` over a list of fits."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    thetas = np.stack([f.theta for f in fits])
    J = scaled_jacobians(spec, thetas, data.X)  # (m, n, p)
    if not np.all(np.isfinite(J)):
        raise PosteriorError("non-finite Jacobian at a local optimum")
    H = np.einsum("mnp,mnq->mpq", J, J) / sigma2 + _prior_matrix(prior_precision, spec.n_params)
    cov, logdet = _invert_floored(H)
    return [
        LocalGaussian(f.theta, cov[i], f.mse, H[i], float(logdet[i])) for i, f in enumerate(fits)
    ]


def local_covariance(
    spec: LawSpec,
    data: Dataset,
    fit: FitResult,
    sigma2: float,
    prior_precision=PRIOR_PRECISION,
) -> LocalGaussian:
    """Gauss-Newton Gaussian around one local optimum.

    ``H = J^T J / sigma2 + prior`` with ``J`` the scaled Jacobian on the
    observed points; the covariance is ``H^{-1}`` after flooring eigenvalues
    at ``1e-10 * lambda_max``.
    """
    return local_gaussians(spec, data, [fit], sigma2, prior_precision)[0]


def predictive_moments(spec: LawSpec, locals_: Sequence[LocalGaussian], X, sigma2: float):
    """Predictive means and variances, each of shape ``(m, n)``."""
    thetas = np.stack([g.theta for g in locals_])
    covs = np.stack([g.cov for g in locals_])
    mu = predict(spec, thetas, X)
    J = scaled_jacobians(spec, thetas, X)
    var = np.einsum("mnp,mpq,mnq->mn", J, covs, J) + sigma2
    return mu, var


def skl_matrix(mu: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Pairwise mean symmetric KL between predictive Gaussians (rows index optima)."""
    va, vb = var[:, None, :], var[None, :, :]
    dmu2 = (mu[:, None, :] - mu[None, :, :]) ** 2
    skl = 0.25 * (va / vb + vb / va - 2.0 + dmu2 * (1.0 / va + 1.0 / vb))
    d = np.mean(skl, axis=-1)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def predictive_skl(
    spec: LawSpec, a: LocalGaussian, b: LocalGaussian, eval_points, sigma2: float
) -> float:
    mu, var = predictive_moments(spec, [a, b], eval_points, sigma2)
    return float(skl_matrix(mu, var)[0, 1])


def cluster_labels(d: np.ndarray, max_k: int = MAX_BASINS) -> np.ndarray:
    """Cluster a dissimilarity matrix; labels are numbered by first appearance."""
    M = d.shape[0]
    if M <= 2 or not np.any(d > 0):
        return np.zeros(M, dtype=int)
    Z = linkage(squareform(d, checks=False), method="average")
    best_score, best = -np.inf, None
    for k in range(2, min(max_k, M - 1) + 1):
        labels = fcluster(Z, t=k, criterion="maxclust")
        n_found = np.unique(labels).size
        if n_found < 2 or n_found > min(max_k, M - 1):
            continue
        score = silhouette_score(d, labels, metric="precomputed")
        if score > best_score:
            best_score, best = score, labels
    if best is None or best_score < SILHOUETTE_FLOOR:
        return np.zeros(M, dtype=int)
    _, first = np.unique(best, return_index=True)
    order = np.argsort(first)
    remap = {best[first[i]]: rank for rank, i in enumerate(order)}
    return np.array([remap[label] for label in best])


def cluster_basins(
    spec: LawSpec,
    locals_: Sequence[LocalGaussian],
    eval_points,
    sigma2: float,
    max_k: int = MAX_BASINS,
) -> List[List[int]]:
    """Partition local optima into basins; returns member indices per basin."""
    if len(locals_) == 0:
        raise ValueError("need at least one local optimum")
    mu, var = predictive_moments(spec, locals_, eval_points, sigma2)
    labels = cluster_labels(skl_matrix(mu, var), max_k)
    return [list(np.flatnonzero(labels == k)) for k in range(labels.max() + 1)]


def select_representatives(
    partition: Sequence[Sequence[int]], locals_: Sequence[LocalGaussian]
) -> List[LocalGaussian]:
    reps = []
    for members in partition:
        members = sorted(members)
        best = min(members, key=lambda m: (locals_[m].mse, m))
        reps.append(locals_[best])
    return reps


def mixture_weights(
    reps: Sequence[LocalGaussian],
    n_obs: int,
    n_params: int,
    cfg: WeightConfig = WeightConfig(),
    sigma2: Optional[float] = None,
) -> np.ndarray:
    """Basin weights from a BIC-style score or a Laplace evidence approximation."""
    mse = np.maximum(np.array([r.mse for r in reps], dtype=float), MSE_FLOOR)
    if cfg.scheme == "bic":
        bic = n_obs * np.log(mse) + n_params * np.log(n_obs)
        return softmax(-bic / (2.0 * cfg.temperature))
    if sigma2 is None:
        raise ValueError("laplace weights need the noise variance")
    log_mass = -n_obs / (2.0 * sigma2) * mse - 0.5 * np.array([r.logdet_precision for r in reps])
    return np.exp(log_mass - logsumexp(log_mass))


def dedup_groups(d: np.ndarray, order: Sequence[int]) -> np.ndarray:
    """Map each optimum to the first earlier-ordered optimum closer than the dedup floor."""
    group = np.full(d.shape[0], -1)
    kept: List[int] = []
    for m in order:
        for k in kept:
            if d[m, k] < DEDUP_FLOOR:
                group[m] = k
                break
        else:
            kept.append(m)
            group[m] = m
    return group


def build_basins(
    spec: LawSpec,
    reps: Sequence[LocalGaussian],
    weights: np.ndarray,
    target: np.ndarray,
) -> Tuple[Basin, ...]:
    thetas = np.stack([r.theta for r in reps])
    means = predict(spec, thetas, target)
    jacs = scaled_jacobians(spec, thetas, target)
    return tuple(
        Basin(r.theta, r.cov, float(w), means[k], jacs[k], r.mse, r.logdet_precision)
        for k, (r, w) in enumerate(zip(reps, weights))
    )


def _curvature_ok(spec: LawSpec, data: Dataset, fit: FitResult, sigma2: float) -> bool:
    with np.errstate(all="ignore"):
        J = scaled_jacobians(spec, fit.theta, data.X)
        H = J.T @ J / sigma2
    return bool(np.all(np.isfinite(H)) and np.max(np.diag(H)) > 0)


def estimate_posterior(
    spec: LawSpec,
    data: Dataset,
    fits: Sequence[FitResult],
    target,
    cfg: WeightConfig = WeightConfig(),
    *,
    prior_precision=PRIOR_PRECISION,
    max_k: int = MAX_BASINS,
    sigma2: Optional[float] = None,
) -> Posterior:
    """Turn multi-start fits into a basin mixture over the target region."""
    if not fits:
        raise PosteriorError("no fits available; reuse the previous posterior")
    target = np.atleast_2d(np.asarray(target, dtype=float))
    sigma2 = estimate_noise(fits) if sigma2 is None else sigma2
    fits = sorted(fits, key=lambda f: (f.mse, f.start_index))
    fits = [f for f in fits if _curvature_ok(spec, data, f, sigma2)]
    if not fits:
        raise PosteriorError("every fit has a degenerate curvature matrix; reuse the previous posterior")
    locals_ = local_gaussians(spec, data, fits, sigma2, prior_precision)
    mu, var = predictive_moments(spec, locals_, target, sigma2)
    ok = np.all(np.isfinite(mu), axis=1) & np.all(np.isfinite(var), axis=1)
    if not np.any(ok):
        raise PosteriorError("every fit gives non-finite target predictions")
    keep = np.flatnonzero(ok)
    d = skl_matrix(mu[keep], var[keep])
    group = dedup_groups(d, range(len(keep)))
    # near-duplicates become exact copies of their group leader before clustering
    d = d[np.ix_(group, group)]
    labels = cluster_labels(d, max_k)
    partition = [[keep[i] for i in np.flatnonzero(labels == k)] for k in range(labels.max() + 1)]
    reps = select_representatives(partition, locals_)
    weights = mixture_weights(reps, len(data), spec.n_params, cfg, sigma2)
    basins = build_basins(spec, reps, weights, target)
    return Posterior(spec, basins, float(sigma2), target, int(np.unique(group).size), len(fits))


def single_basin(spec: LawSpec, local: LocalGaussian, target, sigma2: float) -> Posterior:
    """A one-component posterior around ``local`` (the V-opt linearization)."""
    target = np.atleast_2d(np.asarray(target, dtype=float))
    basins = build_basins(spec, [local], np.ones(1), target)
    return Posterior(spec, basins, float(sigma2), target, 1, 1)
