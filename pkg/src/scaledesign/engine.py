"""Sequential design episodes: warm start, refit, score, select, repeat.

Budget accounting
-----------------
``C_total`` is the summed cost of the whole pool and the episode budget is
``max(checkpoints) * C_total``.  A checkpoint at fraction ``f`` snapshots the
fit on the data held just before the first selection that would push spend
past ``f * C_total`` (or at the end of the episode), so every checkpoint
respects its own budget.

Refits use 64 fresh starts seeded by ``(seed, number of observations)``.
Because every data state has a single seed, model-free policies only fit at
checkpoints and still get exactly the fit an eager refit would produce.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .acquisition import DEFAULT_ALPHA, GridConfig, dopt_utility, utilities, vopt_utility
from .fitting import DEFAULT_N_STARTS, Dataset, FitResult, best_fit, fit_multistart
from .instance import Instance
from .laws import predict
from .posterior import (
    PRIOR_PRECISION,
    Posterior,
    PosteriorError,
    WeightConfig,
    estimate_noise,
    estimate_posterior,
    local_covariance,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "scaledesign.episode/1"
WARM_START_FACTOR = 2.5
DEFAULT_CHECKPOINTS = (0.01, 0.05, 0.10)
POLICIES = ("ours", "random", "cheapest", "cost_rand", "dopt", "vopt")
MODEL_POLICIES = ("ours", "dopt", "vopt")


@dataclass(frozen=True)
class DesignConfig:
    alpha: float = DEFAULT_ALPHA
    n_starts: int = DEFAULT_N_STARTS
    weights: WeightConfig = WeightConfig()
    grid: GridConfig = GridConfig()
    prior_precision: float = PRIOR_PRECISION
    warm_start_factor: float = WARM_START_FACTOR
    # drop one of the two utility terms (ablations)
    use_intra: bool = True
    use_inter: bool = True

    def to_dict(self) -> dict:
        out = asdict(self)
        return out


@dataclass(frozen=True)
class Policy:
    kind: str
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown policy {self.kind!r}; choose from {POLICIES}")

    @property
    def model_based(self) -> bool:
        return self.kind in MODEL_POLICIES


@dataclass
class Checkpoint:
    budget_fraction: float
    r2: float
    rounds_used: int
    spent_fraction: float
    best_theta: Optional[List[float]]


@dataclass
class PoolState:
    costs: np.ndarray
    budget: float
    selected: List[int] = field(default_factory=list)
    spent: float = 0.0

    def __post_init__(self):
        self.flags = np.zeros(len(self.costs), dtype=bool)
        for i in self.selected:
            self.flags[i] = True

    @property
    def remaining(self) -> float:
        return self.budget - self.spent

    def affordable(self, cost) -> np.ndarray:
        # relative slack absorbs rounding in the running sum of costs
        return cost <= self.remaining + 1e-12 * self.budget

    def feasible(self) -> np.ndarray:
        return np.flatnonzero(~self.flags & self.affordable(self.costs))

    def select(self, idx: int) -> None:
        if self.flags[idx]:
            raise ValueError(f"candidate {idx} was already selected")
        if not self.affordable(self.costs[idx]):
            raise ValueError(f"candidate {idx} exceeds the remaining budget")
        self.flags[idx] = True
        self.selected.append(int(idx))
        self.spent += float(self.costs[idx])


@dataclass
class EpisodeLog:
    header: dict
    rounds: List[dict] = field(default_factory=list)
    checkpoints: List[Checkpoint] = field(default_factory=list)
    footer: dict = field(default_factory=dict)

    def to_records(self) -> List[dict]:
        records = [{"type": "header", **self.header}]
        records += [{"type": "round", **r} for r in self.rounds]
        records.append(
            {"type": "footer", "checkpoints": [asdict(c) for c in self.checkpoints], **self.footer}
        )
        return records

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, allow_nan=True) + "\n" for r in self.to_records())

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeLog":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not records or records[0].get("type") != "header":
            raise ValueError("episode log must start with a header record")
        header = {k: v for k, v in records[0].items() if k != "type"}
        if header.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported episode schema {header.get('schema_version')!r}")
        rounds = [{k: v for k, v in r.items() if k != "type"} for r in records if r["type"] == "round"]
        footer_rec = [r for r in records if r["type"] == "footer"]
        if not footer_rec:
            raise ValueError("episode log has no footer record")
        footer = {k: v for k, v in footer_rec[-1].items() if k not in ("type", "checkpoints")}
        checkpoints = [Checkpoint(**c) for c in footer_rec[-1]["checkpoints"]]
        return cls(header, rounds, checkpoints, footer)

    def r2_at(self, fraction: float) -> float:
        for c in self.checkpoints:
            if math.isclose(c.budget_fraction, fraction):
                return c.r2
        raise KeyError(fraction)


# ---------------------------------------------------------------------------
# small pieces


def fit_seed(seed: int, n_obs: int) -> List[int]:
    return [int(seed), int(n_obs)]


def warm_start_size(n_params: int, factor: float = WARM_START_FACTOR) -> int:
    # 2.5p rounded up so the first linearization is never under-provisioned
    return int(math.ceil(factor * n_params - 1e-9))


def warm_start(costs: np.ndarray, n_params: int, budget: float = math.inf,
               factor: float = WARM_START_FACTOR) -> List[int]:
    """Indices of the cheapest candidates bought before design starts (ties by index)."""
    order = np.argsort(costs, kind="stable")
    chosen, spent = [], 0.0
    for idx in order[: warm_start_size(n_params, factor)]:
        if spent + costs[idx] > budget:
            break
        chosen.append(int(idx))
        spent += float(costs[idx])
    return chosen


def target_r2(spec, theta, target_X, target_y) -> float:
    """Target-region R^2 clipped to [-1, 1]."""
    target_y = np.asarray(target_y, dtype=float)
    if target_y.size == 0:
        raise ValueError("empty target")
    if theta is None:
        return -1.0
    with np.errstate(all="ignore"):
        pred = predict(spec, np.asarray(theta, dtype=float), target_X)
        ss_res = float(np.sum((pred - target_y) ** 2))
    if not np.isfinite(ss_res):
        return -1.0
    ss_tot = float(np.sum((target_y - target_y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -1.0
    return float(np.clip(1.0 - ss_res / ss_tot, -1.0, 1.0))


def dataset_for(instance: Instance, selected: Sequence[int]) -> Dataset:
    idx = np.sort(np.asarray(selected, dtype=int))
    return Dataset(instance.pool_X[idx], instance.pool_y[idx], idx)


def all_data_reference(instance: Instance, seed: int = 0, n_starts: int = DEFAULT_N_STARTS) -> float:
    """Target R^2 of the law fitted on the entire pool."""
    data = dataset_for(instance, range(instance.n_pool))
    fits = fit_multistart(instance.spec, data, n_starts, fit_seed(seed, len(data)))
    theta = best_fit(fits).theta if fits else None
    return target_r2(instance.spec, theta, instance.target_X, instance.target_y)


# ---------------------------------------------------------------------------
# per-round selection


@dataclass
class Decision:
    index: int
    info: dict


class Designer:
    """Fits and scores for one instance; caches fits per data state."""

    def __init__(self, instance: Instance, seed: int, cfg: DesignConfig = DesignConfig()):
        self.instance = instance
        self.seed = seed
        self.cfg = cfg
        self._fits: Dict[tuple, List[FitResult]] = {}
        self._last_fits: Optional[List[FitResult]] = None
        self._last_post: Optional[Posterior] = None

    def fits(self, selected: Sequence[int]):
        """Fits for the current data and whether a previous fit had to be reused."""
        key = tuple(sorted(selected))
        if key not in self._fits:
            data = dataset_for(self.instance, key)
            self._fits[key] = fit_multistart(
                self.instance.spec, data, self.cfg.n_starts, fit_seed(self.seed, len(key))
            )
        fits = self._fits[key]
        if fits:
            self._last_fits = fits
            return fits, False
        return self._last_fits, True

    def best_theta(self, selected: Sequence[int]):
        if not selected:
            return None
        fits, _ = self.fits(selected)
        return best_fit(fits).theta if fits else None

    def choose(self, policy: Policy, selected: Sequence[int], feasible: np.ndarray) -> Decision:
        inst, cfg = self.instance, self.cfg
        fits, reused = self.fits(selected)
        data = dataset_for(inst, selected)
        Xc, costs = inst.pool_X[feasible], inst.pool_cost[feasible]
        info: dict = {"fit_reused": reused}
        if fits is None:
            # nothing fitted yet: fall back to the cheapest candidate
            pick = int(np.argmin(costs))
            info["fallback"] = "no_fit"
            return Decision(int(feasible[pick]), info)
        best = best_fit(fits)
        info["best_mse"] = best.mse
        sigma2 = estimate_noise(fits)
        if policy.kind == "ours":
            try:
                post = estimate_posterior(
                    inst.spec, data, fits, inst.target_X, cfg.weights,
                    prior_precision=cfg.prior_precision,
                )
                self._last_post = post
            except PosteriorError:
                if self._last_post is None:
                    raise
                post = self._last_post
                info["posterior_reused"] = True
            intra, inter = utilities(post, Xc, cfg.grid)
            utility = intra * cfg.use_intra + inter * cfg.use_inter
            info["K"] = post.K
            info["weights"] = [float(w) for w in post.weights]
        else:
            local = local_covariance(inst.spec, data, best, sigma2, cfg.prior_precision)
            if policy.kind == "vopt":
                utility = vopt_utility(inst.spec, local, inst.target_X, Xc, sigma2)
            else:
                utility = dopt_utility(inst.spec, local, Xc, sigma2)
            intra = inter = None
        score = utility / np.power(costs, policy.alpha)
        pick = int(np.argmax(score))
        info["score"] = float(score[pick])
        if intra is not None:
            info["dv_intra"] = float(intra[pick])
            info["dv_inter"] = float(inter[pick])
        else:
            info["utility"] = float(utility[pick])
        return Decision(int(feasible[pick]), info)


def choose_model_free(policy: Policy, costs: np.ndarray, feasible: np.ndarray, rng) -> int:
    if policy.kind == "random":
        return int(rng.choice(feasible))
    if policy.kind == "cheapest":
        c = costs[feasible]
        ties = feasible[c == c.min()]
        return int(ties[0]) if ties.size == 1 else int(rng.choice(ties))
    if policy.kind == "cost_rand":
        inv = 1.0 / costs[feasible]
        return int(rng.choice(feasible, p=inv / inv.sum()))
    raise ValueError(f"{policy.kind} is not a model-free policy")


# ---------------------------------------------------------------------------
# episodes


def run_episode(
    instance: Instance,
    policy: Policy,
    checkpoints: Sequence[float] = DEFAULT_CHECKPOINTS,
    seed: int = 0,
    cfg: Optional[DesignConfig] = None,
) -> EpisodeLog:
    """Run one budgeted design episode and record checkpoint R^2 values."""
    checkpoints = [float(f) for f in checkpoints]
    if not checkpoints or any(not 0 < f <= 1 for f in checkpoints):
        raise ValueError("checkpoint fractions must lie in (0, 1]")
    if checkpoints != sorted(checkpoints):
        raise ValueError("checkpoint fractions must be sorted ascending")
    cfg = cfg or DesignConfig(alpha=policy.alpha)
    spec = instance.spec
    c_total = instance.total_cost
    state = PoolState(instance.pool_cost.copy(), checkpoints[-1] * c_total)
    designer = Designer(instance, seed, cfg)
    rng = np.random.default_rng([int(seed), 0x5EED])
    pending = list(checkpoints)
    log = EpisodeLog(
        header={
            "schema_version": SCHEMA_VERSION,
            "instance": instance.name,
            "policy": policy.kind,
            "alpha": policy.alpha,
            "seed": int(seed),
            "checkpoints": checkpoints,
            "total_cost": c_total,
            "budget": state.budget,
            "n_pool": instance.n_pool,
            "n_params": spec.n_params,
            "config": cfg.to_dict(),
        }
    )

    def snapshot(fraction: float) -> None:
        theta = designer.best_theta(state.selected)
        log.checkpoints.append(
            Checkpoint(
                budget_fraction=fraction,
                r2=target_r2(spec, theta, instance.target_X, instance.target_y),
                rounds_used=len(state.selected),
                spent_fraction=state.spent / c_total,
                best_theta=None if theta is None else [float(v) for v in theta],
            )
        )

    def buy(idx: int, phase: str, info: Optional[dict] = None) -> None:
        cost = float(state.costs[idx])
        while pending and state.spent + cost > pending[0] * c_total * (1 + 1e-12):
            snapshot(pending.pop(0))
        state.select(idx)
        record = {
            "round": len(state.selected) - 1,
            "phase": phase,
            "index": int(idx),
            "cost": cost,
            "spent": state.spent,
        }
        if info:
            record.update(info)
        log.rounds.append(record)

    warm_incomplete = False
    if policy.model_based:
        target_n = warm_start_size(spec.n_params, cfg.warm_start_factor)
        chosen = warm_start(state.costs, spec.n_params, state.budget, cfg.warm_start_factor)
        warm_incomplete = len(chosen) < target_n
        for idx in chosen:
            buy(idx, "warm")

    while True:
        feasible = state.feasible()
        if feasible.size == 0:
            break
        if policy.model_based:
            decision = designer.choose(policy, state.selected, feasible)
            buy(decision.index, "design", decision.info)
        else:
            buy(choose_model_free(policy, state.costs, feasible, rng), "design")

    while pending:
        snapshot(pending.pop(0))
    log.footer = {
        "spent": state.spent,
        "n_selected": len(state.selected),
        "warm_start_incomplete": warm_incomplete,
        "pool_exhausted": bool(np.all(state.flags)),
    }
    return log
