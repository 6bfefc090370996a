"""Parametric scaling-law families, parameter Jacobians and cost proxies.

Every family works on a batch of configurations ``X`` with shape ``(n, d)``
and a parameter array ``theta`` with shape ``(..., p)``; values come back with
shape ``(..., n)`` and Jacobians with shape ``(..., n, p)``.  The single-point
helpers :func:`evaluate`, :func:`param_jacobian` and :func:`scaled_jacobian`
wrap the batched versions.

The shipped families are generic stand-ins for the laws used in practice:

``sum_power``
    ``L = E + sum_i A_i * x[t_i] ** (-alpha_i)``, one additive power-law term per listed coordinate.
``log_quadratic``
    ``log L = c0 + sum_i c_i log x_i + sum_{i<=j} c_ij log x_i log x_j``.
``saturating``
    ``L = E + A * (x[t] + k) ** (-alpha)``.
``linear``
    ``f = theta_0 + sum_i theta_i x_i``; linear in its parameters, mostly
    useful for exactness checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

AMPLITUDE_BOUNDS = (1e-6, 1e6)
OFFSET_BOUNDS = (-1e3, 1e3)


class LawDomainError(ValueError):
    """A power or logarithm of a non-positive quantity was requested."""


@dataclass(frozen=True)
class Family:
    name: str
    value: Callable[..., np.ndarray]
    jacobian: Callable[..., np.ndarray]
    # (input_dim, options) -> (param_names, bounds, positive)
    describe: Callable[[int, Dict[str, Any]], Tuple[List[str], List[Tuple[float, float]], List[bool]]]


_REGISTRY: Dict[str, Family] = {}


def register_family(family: Family) -> Family:
    _REGISTRY[family.name] = family
    return family


def get_family(name: str) -> Family:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown law family {name!r}; registered: {sorted(_REGISTRY)}") from None


def registered_families() -> List[str]:
    return sorted(_REGISTRY)


@dataclass(frozen=True)
class LawSpec:
    """A law family bound to a configuration dimension, with parameter metadata."""

    family_id: str
    input_dim: int
    param_names: Tuple[str, ...]
    bounds: np.ndarray
    positive: np.ndarray
    options: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        positive = np.asarray(self.positive, dtype=bool).reshape(-1)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "positive", positive)
        object.__setattr__(self, "param_names", tuple(self.param_names))
        p = len(self.param_names)
        if p < 1:
            raise ValueError("a law needs at least one parameter")
        if bounds.shape != (p, 2) or positive.shape != (p,):
            raise ValueError(f"bounds/positive flags must have length {p}")
        if not np.all(bounds[:, 0] < bounds[:, 1]):
            raise ValueError("every lower bound must be strictly below its upper bound")
        if np.any(positive & (bounds[:, 0] <= 0)):
            raise ValueError("positive-flagged parameters need a strictly positive lower bound")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        get_family(self.family_id)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def family(self) -> Family:
        return get_family(self.family_id)

    def __hash__(self):
        return hash((self.family_id, self.input_dim, self.param_names))

    def __eq__(self, other):
        if not isinstance(other, LawSpec):
            return NotImplemented
        return (
            self.family_id == other.family_id
            and self.input_dim == other.input_dim
            and self.param_names == other.param_names
            and np.array_equal(self.bounds, other.bounds)
            and np.array_equal(self.positive, other.positive)
            and self.options == other.options
        )

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape[-1]}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameters must be finite")
        return theta

    def within_bounds(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.bounds[:, 0]) and np.all(theta <= self.bounds[:, 1]))

    def to_dict(self) -> dict:
        return {
            "family": self.family_id,
            "input_dim": self.input_dim,
            "options": dict(self.options),
            "param_names": list(self.param_names),
            "bounds": self.bounds.tolist(),
            "positive": self.positive.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LawSpec":
        family = data["family"]
        input_dim = int(data["input_dim"])
        options = dict(data.get("options") or {})
        default = make_spec(family, input_dim, **options)
        return cls(
            family_id=family,
            input_dim=input_dim,
            param_names=data.get("param_names", default.param_names),
            bounds=data.get("bounds", default.bounds),
            positive=data.get("positive", default.positive),
            options=options,
        )


def make_spec(
    family_id: str,
    input_dim: int,
    bounds: Optional[Sequence[Sequence[float]]] = None,
    **options,
) -> LawSpec:
    """Build a :class:`LawSpec` with the family's default names, bounds and flags."""
    names, default_bounds, positive = get_family(family_id).describe(input_dim, options)
    return LawSpec(
        family_id=family_id,
        input_dim=input_dim,
        param_names=names,
        bounds=default_bounds if bounds is None else bounds,
        positive=positive,
        options=options,
    )


# ---------------------------------------------------------------------------
# helpers


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if not np.all(np.isfinite(X)):
        raise ValueError("configuration coordinates must be finite")
    return X


def _log_positive(v: np.ndarray, what: str) -> np.ndarray:
    if np.any(v <= 0):
        raise LawDomainError(f"{what} must be > 0 for a power or log, got min {np.min(v)!r}")
    return np.log(v)


# ---------------------------------------------------------------------------
# sum of power laws


def _power_terms(d: int, options: dict) -> List[int]:
    terms = options.get("terms")
    terms = list(range(d)) if terms is None else [int(t) for t in terms]
    if not terms or any(t < 0 or t >= d for t in terms):
        raise ValueError(f"power-law terms must index covariates 0..{d - 1}")
    return terms


def _sum_power_describe(d, options):
    terms = _power_terms(d, options)
    m = len(terms)
    names = ["E"] + [f"A{i}" for i in range(m)] + [f"alpha{i}" for i in range(m)]
    bounds = [OFFSET_BOUNDS] + [AMPLITUDE_BOUNDS] * (2 * m)
    positive = [False] + [True] * (2 * m)
    return names, bounds, positive


def _sum_power_parts(theta, X, options):
    terms = _power_terms(X.shape[1], options)
    m = len(terms)
    theta = np.asarray(theta, dtype=float)
    logx = _log_positive(X[:, terms], "power-law covariate")  # (n, m)
    A = theta[..., 1 : 1 + m]
    alpha = theta[..., 1 + m : 1 + 2 * m]
    with np.errstate(over="ignore", under="ignore"):
        powers = np.exp(-alpha[..., None, :] * logx)  # (..., n, m)
    return theta, logx, A, alpha, powers


def _sum_power_value(theta, X, options):
    theta, logx, A, alpha, powers = _sum_power_parts(theta, X, options)
    with np.errstate(over="ignore", invalid="ignore"):
        return theta[..., 0:1] + np.sum(A[..., None, :] * powers, axis=-1)


def _sum_power_jacobian(theta, X, options):
    theta, logx, A, alpha, powers = _sum_power_parts(theta, X, options)
    n, m = logx.shape
    jac = np.empty(theta.shape[:-1] + (n, 1 + 2 * m))
    jac[..., 0] = 1.0
    jac[..., 1 : 1 + m] = powers
    with np.errstate(over="ignore", invalid="ignore"):
        jac[..., 1 + m :] = -A[..., None, :] * powers * logx
    return jac


register_family(Family("sum_power", _sum_power_value, _sum_power_jacobian, _sum_power_describe))


# ---------------------------------------------------------------------------
# log-space quadratic interaction


def _logquad_describe(d, options):
    names = ["c0"] + [f"c{i + 1}" for i in range(d)]
    names += [f"c{i + 1}{j + 1}" for i in range(d) for j in range(i, d)]
    return names, [OFFSET_BOUNDS] * len(names), [False] * len(names)


def _logquad_features(X):
    logx = _log_positive(X, "log-quadratic covariate")
    n, d = logx.shape
    cols = [np.ones(n)] + [logx[:, i] for i in range(d)]
    cols += [logx[:, i] * logx[:, j] for i in range(d) for j in range(i, d)]
    return np.stack(cols, axis=1)  # (n, p)


def _logquad_value(theta, X, options):
    phi = _logquad_features(X)
    with np.errstate(over="ignore"):
        return np.exp(np.asarray(theta, dtype=float) @ phi.T)


def _logquad_jacobian(theta, X, options):
    phi = _logquad_features(X)
    with np.errstate(over="ignore", invalid="ignore"):
        value = np.exp(np.asarray(theta, dtype=float) @ phi.T)
        return value[..., None] * phi


register_family(Family("log_quadratic", _logquad_value, _logquad_jacobian, _logquad_describe))


# ---------------------------------------------------------------------------
# saturating power law


def _saturating_describe(d, options):
    names = ["E", "A", "k", "alpha"]
    bounds = [OFFSET_BOUNDS, AMPLITUDE_BOUNDS, AMPLITUDE_BOUNDS, AMPLITUDE_BOUNDS]
    return names, bounds, [False, True, True, True]


def _saturating_parts(theta, X, options):
    col = int(options.get("covariate", 0))
    theta = np.asarray(theta, dtype=float)
    shifted = X[:, col] + theta[..., 2:3]  # (..., n)
    logs = _log_positive(shifted, "shifted saturating covariate")
    with np.errstate(over="ignore", under="ignore"):
        power = np.exp(-theta[..., 3:4] * logs)
    return theta, shifted, logs, power


def _saturating_value(theta, X, options):
    theta, shifted, logs, power = _saturating_parts(theta, X, options)
    with np.errstate(over="ignore", invalid="ignore"):
        return theta[..., 0:1] + theta[..., 1:2] * power


def _saturating_jacobian(theta, X, options):
    theta, shifted, logs, power = _saturating_parts(theta, X, options)
    A, alpha = theta[..., 1:2], theta[..., 3:4]
    with np.errstate(over="ignore", invalid="ignore"):
        return np.stack(
            [
                np.ones_like(power),
                power,
                -alpha * A * power / shifted,
                -A * power * logs,
            ],
            axis=-1,
        )


register_family(
    Family("saturating", _saturating_value, _saturating_jacobian, _saturating_describe)
)


# ---------------------------------------------------------------------------
# linear in parameters


def _linear_describe(d, options):
    names = [f"theta{i}" for i in range(d + 1)]
    return names, [(-1e6, 1e6)] * (d + 1), [False] * (d + 1)


def _linear_design(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _linear_value(theta, X, options):
    return np.asarray(theta, dtype=float) @ _linear_design(X).T


def _linear_jacobian(theta, X, options):
    theta = np.asarray(theta, dtype=float)
    phi = _linear_design(X)
    return np.broadcast_to(phi, theta.shape[:-1] + phi.shape).copy()


register_family(Family("linear", _linear_value, _linear_jacobian, _linear_describe))


# ---------------------------------------------------------------------------
# public evaluation API


def _check_dim(spec: LawSpec, X: np.ndarray) -> None:
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"configuration has {X.shape[1]} coordinates, law expects {spec.input_dim}")


def predict(spec: LawSpec, theta, X) -> np.ndarray:
    """Batched law values with shape ``theta.shape[:-1] + (n,)``."""
    X = _as_points(X)
    _check_dim(spec, X)
    return spec.family.value(theta, X, spec.options)


def jacobian(spec: LawSpec, theta, X) -> np.ndarray:
    """Batched parameter Jacobian with shape ``theta.shape[:-1] + (n, p)``."""
    X = _as_points(X)
    _check_dim(spec, X)
    return spec.family.jacobian(theta, X, spec.options)


def log_scale(spec: LawSpec, theta, jac: np.ndarray) -> np.ndarray:
    """Rescale Jacobian columns of positive parameters by the parameter value."""
    theta = np.asarray(theta, dtype=float)
    scale = np.where(spec.positive, theta, 1.0)
    return jac * scale[..., None, :]


def scaled_jacobians(spec: LawSpec, theta, X) -> np.ndarray:
    """Batched Jacobian with respect to ``log theta_i`` for positive parameters."""
    return log_scale(spec, theta, jacobian(spec, theta, X))


def evaluate(spec: LawSpec, theta, x) -> float:
    """Law value ``f(x; theta)`` at a single configuration."""
    theta = spec.check_theta(theta)
    value = float(predict(spec, theta, np.asarray(x, dtype=float).reshape(1, -1))[0])
    if not np.isfinite(value):
        raise LawDomainError("law evaluation overflowed")
    return value


def param_jacobian(spec: LawSpec, theta, x) -> np.ndarray:
    """Gradient of ``f(x; theta)`` with respect to ``theta`` at one configuration."""
    theta = spec.check_theta(theta)
    return jacobian(spec, theta, np.asarray(x, dtype=float).reshape(1, -1))[0]


def scaled_jacobian(spec: LawSpec, theta, x) -> np.ndarray:
    theta = spec.check_theta(theta)
    return scaled_jacobians(spec, theta, np.asarray(x, dtype=float).reshape(1, -1))[0]


# ---------------------------------------------------------------------------
# cost proxies

COST_KINDS = ("product_6ND", "product_NE", "single_N", "dual_sparse", "unit")
_COST_ARITY = {"product_6ND": 2, "product_NE": 2, "single_N": 1, "dual_sparse": 4, "unit": 0}


@dataclass(frozen=True)
class CostModel:
    """Cost proxy of one experiment, computed from selected coordinates."""

    kind: str
    indices: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in _COST_ARITY:
            raise ValueError(f"unknown cost kind {self.kind!r}; choose from {COST_KINDS}")
        indices = tuple(int(i) for i in self.indices)
        if len(indices) != _COST_ARITY[self.kind]:
            raise ValueError(f"{self.kind} cost needs {_COST_ARITY[self.kind]} coordinate indices")
        object.__setattr__(self, "indices", indices)

    def validate_for(self, input_dim: int) -> None:
        if any(i < 0 or i >= input_dim for i in self.indices):
            raise ValueError(f"cost indices {self.indices} out of range for {input_dim} coordinates")

    def costs(self, X) -> np.ndarray:
        X = _as_points(X)
        self.validate_for(X.shape[1])
        if self.kind == "unit":
            return np.ones(X.shape[0])
        cols = X[:, list(self.indices)]
        if np.any(cols <= 0):
            raise ValueError(f"{self.kind} cost needs strictly positive coordinates")
        if self.kind == "product_6ND":
            return 6.0 * cols[:, 0] * cols[:, 1]
        if self.kind == "product_NE":
            return cols[:, 0] * cols[:, 1]
        if self.kind == "single_N":
            return cols[:, 0].copy()
        return 6.0 * cols[:, 0] * cols[:, 1] + 6.0 * cols[:, 2] * cols[:, 3]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "indices": list(self.indices)}

    @classmethod
    def from_dict(cls, data: dict) -> "CostModel":
        return cls(data["kind"], tuple(data.get("indices", ())))


def cost(model: CostModel, x) -> float:
    return float(model.costs(np.asarray(x, dtype=float).reshape(1, -1))[0])
