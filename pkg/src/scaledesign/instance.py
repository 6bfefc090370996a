from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from .laws import CostModel, LawSpec


@dataclass(frozen=True)
class Instance:
    """A candidate pool with recorded outcomes and a held-out target region."""

    name: str
    spec: LawSpec
    cost_model: CostModel
    pool_X: np.ndarray
    pool_cost: np.ndarray
    pool_y: np.ndarray
    target_X: np.ndarray
    target_y: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("pool_X", "pool_cost", "pool_y", "target_X", "target_y"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.pool_X.ndim != 2 or self.target_X.ndim != 2:
            raise ValueError("pool and target coordinates must be 2-D arrays")
        n = self.pool_X.shape[0]
        if n == 0 or self.target_X.shape[0] == 0:
            raise ValueError("pool and target must be non-empty")
        if self.pool_cost.shape != (n,) or self.pool_y.shape != (n,):
            raise ValueError("pool costs and outcomes must match the pool size")
        if self.target_y.shape != (self.target_X.shape[0],):
            raise ValueError("target outcomes must match the target size")
        if np.any(self.pool_cost <= 0) or not np.all(np.isfinite(self.pool_cost)):
            raise ValueError("pool costs must be finite and positive")

    @property
    def n_pool(self) -> int:
        return self.pool_X.shape[0]

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.pool_cost))

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        arrays = ("pool_X", "pool_cost", "pool_y", "target_X", "target_y")
        return (
            self.name == other.name
            and self.spec == other.spec
            and self.cost_model == other.cost_model
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.metadata == other.metadata
        )

    __hash__ = None
