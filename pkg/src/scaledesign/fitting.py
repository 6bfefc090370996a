"""Multi-start bounded least-squares fitting of a scaling law.

All starts are advanced together by a projected Levenberg-Marquardt iteration.
Positive-flagged parameters are optimized in log space, so the Gauss-Newton
system is built from :func:`scaledesign.laws.log_scale` Jacobians; bounds are
handled by freezing variables that sit on an active bound and clipping steps.
Each start keeps its own damping and stopping state, so the trajectory of a
start does not depend on how many other starts run alongside it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .laws import LawSpec, jacobian, log_scale, predict

logger = logging.getLogger(__name__)

DEFAULT_N_STARTS = 64
GTOL = 1e-10
FTOL = 1e-15
XTOL = 1e-12
MAX_ITER = 500


@dataclass(frozen=True)
class Dataset:
    """Observed experiments: configurations ``X`` (n, d), outcomes ``y`` and pool indices."""

    X: np.ndarray
    y: np.ndarray
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y disagree on the number of observations")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcomes must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.index is not None:
            index = np.asarray(self.index, dtype=int).reshape(-1)
            if index.shape[0] != y.shape[0]:
                raise ValueError("index length must match the number of observations")
            if np.unique(index).size != index.size:
                raise ValueError("duplicate pool index in dataset")
            object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class FitResult:
    theta: np.ndarray
    mse: float
    converged: bool
    iterations: int
    start_index: int = 0


def mse(spec: LawSpec, theta, data: Dataset) -> float:
    resid = predict(spec, theta, data.X) - data.y
    return float(np.mean(resid**2))


def _to_internal(spec: LawSpec, theta: np.ndarray) -> np.ndarray:
    return np.where(spec.positive, np.log(np.where(spec.positive, theta, 1.0)), theta)


def _to_params(spec: LawSpec, u: np.ndarray) -> np.ndarray:
    theta = np.where(spec.positive, np.exp(np.where(spec.positive, u, 0.0)), u)
    return np.clip(theta, spec.bounds[:, 0], spec.bounds[:, 1])


def internal_bounds(spec: LawSpec):
    lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
    return (
        np.where(spec.positive, np.log(np.where(spec.positive, lo, 1.0)), lo),
        np.where(spec.positive, np.log(np.where(spec.positive, hi, 1.0)), hi),
    )


def sample_starts(spec: LawSpec, n_starts: int, seed) -> np.ndarray:
    """Initial parameters: log-uniform for positive parameters, uniform otherwise.

    Rows are drawn in order, so the first ``m`` starts are shared by every
    ``n_starts >= m`` with the same seed.
    """
    lo, hi = internal_bounds(spec)
    rng = np.random.default_rng(seed)
    unit = rng.uniform(size=(n_starts, spec.n_params))
    return _to_params(spec, lo + unit * (hi - lo))


def _residuals(spec, theta, data):
    with np.errstate(all="ignore"):
        r = predict(spec, theta, data.X) - data.y
        cost = np.mean(r**2, axis=-1)
    cost = np.where(np.isfinite(cost), cost, np.inf)
    return r, cost


def _projected_gradient(g, u, lo, hi):
    at_lo = (u <= lo) & (g > 0)
    at_hi = (u >= hi) & (g < 0)
    return np.where(at_lo | at_hi, 0.0, g)


def least_squares_batch(
    spec: LawSpec,
    data: Dataset,
    theta0: np.ndarray,
    *,
    gtol: float = GTOL,
    max_iter: int = MAX_ITER,
):
    """Run projected Levenberg-Marquardt from every row of ``theta0``.

    Returns ``(theta, mse, converged, iterations)`` arrays.  The gradient
    tolerance applies to the infinity norm of the projected MSE gradient in
    the internal (log for positive parameters) coordinates.
    """
    lo, hi = internal_bounds(spec)
    n = len(data)
    S, p = theta0.shape
    u = np.clip(_to_internal(spec, theta0), lo, hi)
    theta = _to_params(spec, u)
    r, cost = _residuals(spec, theta, data)
    lam = np.full(S, 1e-3)
    converged = np.zeros(S, dtype=bool)
    iterations = np.zeros(S, dtype=int)
    active = np.isfinite(cost)
    eye = np.eye(p)

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ua, ta, ra = u[idx], theta[idx], r[idx]
        with np.errstate(all="ignore"):
            J = log_scale(spec, ta, jacobian(spec, ta, data.X))  # (s, n, p)
        bad = ~np.all(np.isfinite(J), axis=(1, 2))
        J = np.where(np.isfinite(J), J, 0.0)
        g = np.einsum("snp,sn->sp", J, ra)
        pg = _projected_gradient(g, ua, lo, hi)
        grad_norm = 2.0 / n * np.max(np.abs(pg), axis=1)
        done = (grad_norm <= gtol) & ~bad
        converged[idx[done]] = True
        active[idx[done]] = False
        keep = ~done & ~bad
        active[idx[bad]] = False
        idx, ua, ta, J, g, pg = idx[keep], ua[keep], ta[keep], J[keep], g[keep], pg[keep]
        if idx.size == 0:
            break
        iterations[idx] += 1

        free = ~(((ua <= lo) & (g > 0)) | ((ua >= hi) & (g < 0)))
        with np.errstate(all="ignore"):
            JtJ = np.einsum("snp,snq->spq", J, J)
            diag = np.einsum("spp->sp", JtJ)
            damp = np.maximum(diag, 1e-12 * np.max(diag, axis=1, keepdims=True) + 1e-300)
            mask = free[:, :, None] & free[:, None, :]
            A = np.where(mask, JtJ, 0.0) + eye * np.where(free, lam[idx, None] * damp, 1.0)[:, None, :]
        rhs = -np.where(free, g, 0.0)
        # overflowed curvature: treat as a failed step for that start
        A = np.where(np.isfinite(A), A, 0.0) + eye * (~np.all(np.isfinite(A), axis=(1, 2)))[:, None, None]
        try:
            step = np.linalg.solve(A, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(a, b, rcond=None)[0] for a, b in zip(A, rhs)])
        u_new = np.clip(ua + step, lo, hi)
        theta_new = _to_params(spec, u_new)
        r_new, cost_new = _residuals(spec, theta_new, data)
        old = cost[idx]
        better = cost_new < old
        acc = idx[better]
        rel_drop = (old[better] - cost_new[better]) / np.maximum(old[better], 1e-300)
        dx = np.max(np.abs(u_new[better] - ua[better]), axis=1)
        u[acc], theta[acc], r[acc], cost[acc] = u_new[better], theta_new[better], r_new[better], cost_new[better]
        lam[acc] = np.maximum(lam[acc] / 3.0, 1e-12)
        small = (rel_drop <= FTOL) | (dx <= XTOL * (1.0 + np.max(np.abs(ua[better]), axis=1)))
        small |= cost_new[better] == 0.0
        converged[acc[small]] = True
        active[acc[small]] = False

        rej = idx[~better]
        lam[rej] *= 4.0
        stalled = rej[lam[rej] > 1e16]
        # damping blew up: no descent step exists at machine precision
        converged[stalled] = True
        active[stalled] = False

    return theta, cost, converged, iterations


def fit_multistart(
    spec: LawSpec,
    data: Dataset,
    n_starts: int = DEFAULT_N_STARTS,
    seed=0,
    *,
    starts: Optional[np.ndarray] = None,
    gtol: float = GTOL,
    max_iter: int = MAX_ITER,
) -> List[FitResult]:
    """Fit ``spec`` to ``data`` from ``n_starts`` random initializations.

    Returns the finite, feasible fits sorted by ascending MSE (ties by start
    index).  Starts that hit the iteration cap are kept with
    ``converged=False``; starts whose objective is non-finite are dropped.
    An empty list means no start produced a usable fit.
    """
    if len(data) == 0:
        raise ValueError("cannot fit an empty dataset")
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    theta0 = sample_starts(spec, n_starts, seed) if starts is None else np.atleast_2d(starts)
    theta, cost, conv, iters = least_squares_batch(spec, data, theta0, gtol=gtol, max_iter=max_iter)
    results = [
        FitResult(theta[i].copy(), float(cost[i]), bool(conv[i]), int(iters[i]), i)
        for i in range(theta.shape[0])
        if np.isfinite(cost[i]) and spec.within_bounds(theta[i])
    ]
    if not results:
        logger.warning("no start produced a finite fit (%d starts, %d points)", n_starts, len(data))
    results.sort(key=lambda fit: fit.mse)
    return results


def best_fit(results: Sequence[FitResult]) -> FitResult:
    """Lowest-MSE fit; ties go to the lowest start index."""
    if not results:
        raise ValueError("no fit results to choose from")
    return min(results, key=lambda fit: (fit.mse, fit.start_index))
