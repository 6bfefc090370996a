"""Advisory sessions: one design step at a time against a live pool.

A session file holds the law, the cost model, the candidate configurations,
the target region and the outcomes recorded so far.  Each ``advise`` call
rebuilds the state from the file, so a session whose observations equal a
replayed episode prefix gets the same next pick as the engine.
"""

from __future__ import annotations

import json
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .acquisition import DEFAULT_ALPHA, GridConfig
from .engine import (
    DesignConfig,
    Designer,
    Policy,
    PoolState,
    warm_start,
    warm_start_size,
)
from .fitting import DEFAULT_N_STARTS
from .instance import Instance
from .laws import CostModel, LawSpec
from .posterior import WeightConfig

SESSION_SCHEMA = "scaledesign.session/1"


class SessionError(ValueError):
    pass


class SessionLocked(RuntimeError):
    pass


@dataclass
class Session:
    spec: LawSpec
    cost_model: CostModel
    candidates: np.ndarray
    costs: np.ndarray
    target: np.ndarray
    budget: float = math.inf
    policy: str = "ours"
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    n_starts: int = DEFAULT_N_STARTS
    weight_scheme: str = "bic"
    quad_nodes: int = GridConfig().n_nodes
    observed: List[int] = field(default_factory=list)
    outcomes: List[float] = field(default_factory=list)

    @property
    def spent(self) -> float:
        return float(sum(self.costs[i] for i in self.observed))

    def config(self) -> DesignConfig:
        return DesignConfig(
            alpha=self.alpha,
            n_starts=self.n_starts,
            weights=WeightConfig(self.weight_scheme),
            grid=GridConfig(n_nodes=self.quad_nodes),
        )

    def to_dict(self) -> dict:
        out = {
            "schema_version": SESSION_SCHEMA,
            "law": self.spec.to_dict(),
            "cost_model": self.cost_model.to_dict(),
            "candidates": [{"coords": x.tolist(), "cost": float(c)} for x, c in zip(self.candidates, self.costs)],
            "target": [{"coords": x.tolist()} for x in self.target],
            "budget": None if math.isinf(self.budget) else self.budget,
            "policy": self.policy,
            "alpha": self.alpha,
            "seed": self.seed,
            "n_starts": self.n_starts,
            "weight_scheme": self.weight_scheme,
            "quad_nodes": self.quad_nodes,
            "observations": [{"candidate": i, "outcome": y} for i, y in zip(self.observed, self.outcomes)],
        }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Session":
        if not isinstance(data, dict) or data.get("schema_version") != SESSION_SCHEMA:
            raise SessionError(f"session schema_version must be {SESSION_SCHEMA!r}")
        try:
            spec = LawSpec.from_dict(data["law"])
            cost_model = CostModel.from_dict(data["cost_model"])
            X = np.array([c["coords"] for c in data["candidates"]], dtype=float)
            if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] != spec.input_dim:
                raise SessionError(f"candidates need {spec.input_dim} coordinates each")
            given = [c.get("cost") for c in data["candidates"]]
            computed = cost_model.costs(X) if any(c is None for c in given) else None
            costs = np.array([computed[i] if c is None else c for i, c in enumerate(given)], dtype=float)
            target = np.array([t["coords"] for t in data["target"]], dtype=float)
            if target.ndim != 2 or target.shape[0] == 0 or target.shape[1] != spec.input_dim:
                raise SessionError(f"target points need {spec.input_dim} coordinates each")
            budget = data.get("budget")
            obs = data.get("observations", [])
            session = cls(
                spec=spec,
                cost_model=cost_model,
                candidates=X,
                costs=costs,
                target=target,
                budget=math.inf if budget is None else float(budget),
                policy=str(data.get("policy", "ours")),
                alpha=float(data.get("alpha", DEFAULT_ALPHA)),
                seed=int(data.get("seed", 0)),
                n_starts=int(data.get("n_starts", DEFAULT_N_STARTS)),
                weight_scheme=str(data.get("weight_scheme", "bic")),
                quad_nodes=int(data.get("quad_nodes", GridConfig().n_nodes)),
                observed=[int(o["candidate"]) for o in obs],
                outcomes=[float(o["outcome"]) for o in obs],
            )
        except SessionError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SessionError(f"malformed session: {exc!r}") from None
        if not np.all(np.isfinite(costs)) or np.any(costs <= 0):
            raise SessionError("candidate costs must be finite and positive")
        if Policy(session.policy).model_based is False:
            raise SessionError("advisory sessions need a model-based policy (ours, dopt, vopt)")
        for i in session.observed:
            if not 0 <= i < X.shape[0]:
                raise SessionError(f"observation refers to unknown candidate {i}")
        if len(set(session.observed)) != len(session.observed):
            raise SessionError("a candidate was recorded twice")
        if not all(math.isfinite(y) for y in session.outcomes):
            raise SessionError("recorded outcomes must be finite")
        return session

    def instance(self) -> Instance:
        y = np.full(self.candidates.shape[0], np.nan)
        y[self.observed] = self.outcomes
        return Instance(
            name="session",
            spec=self.spec,
            cost_model=self.cost_model,
            pool_X=self.candidates,
            pool_cost=self.costs,
            pool_y=y,
            target_X=self.target,
            target_y=np.zeros(self.target.shape[0]),
        )


def session_from_instance(instance: Instance, budget: float, policy: str = "ours",
                          seed: int = 0, observed=(), **settings) -> Session:
    """A session over an instance's pool, optionally pre-filled with recorded outcomes."""
    observed = [int(i) for i in observed]
    return Session(
        spec=instance.spec,
        cost_model=instance.cost_model,
        candidates=instance.pool_X.copy(),
        costs=instance.pool_cost.copy(),
        target=instance.target_X.copy(),
        budget=float(budget),
        policy=policy,
        seed=seed,
        observed=observed,
        outcomes=[float(instance.pool_y[i]) for i in observed],
        **settings,
    )


def load_session(path) -> Session:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SessionError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return Session.from_dict(data)


def save_session(session: Session, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(session.to_dict(), indent=1) + "\n")
    os.replace(tmp, path)


@contextmanager
def session_lock(path):
    """Exclusive access to a session file through a sibling ``.lock`` file."""
    lock = Path(str(path) + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise SessionLocked(f"{path} is locked by another process ({lock} exists)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


@dataclass
class Advice:
    status: str  # "warm", "design" or "exhausted"
    index: Optional[int] = None
    coords: Optional[List[float]] = None
    cost: Optional[float] = None
    dv_intra: Optional[float] = None
    dv_inter: Optional[float] = None
    score: Optional[float] = None
    notice: str = ""

    def lines(self) -> List[str]:
        if self.status == "exhausted":
            return ["budget exhausted: no affordable candidate is left"]
        out = []
        if self.notice:
            out.append(f"notice: {self.notice}")
        out.append(f"candidate\t{self.index}")
        out.append("coords\t" + "\t".join(f"{v:.6g}" for v in self.coords))
        out.append(f"cost\t{self.cost:.6g}")
        for name in ("dv_intra", "dv_inter", "score"):
            value = getattr(self, name)
            out.append(f"{name}\t{'n/a' if value is None else f'{value:.6e}'}")
        return out


def advise(session: Session) -> Advice:
    """Next experiment to run: a warm-start point until the warm start is complete."""
    state = PoolState(session.costs, session.budget, list(session.observed), session.spent)
    p = session.spec.n_params
    cfg = session.config()
    warm = warm_start(session.costs, p, session.budget, cfg.warm_start_factor)
    pending = [i for i in warm if not state.flags[i]]
    if pending:
        idx = pending[0]
        return Advice(
            "warm", idx, session.candidates[idx].tolist(), float(session.costs[idx]),
            notice=(f"{len(session.observed)} of {warm_start_size(p, cfg.warm_start_factor)} "
                    "warm-start observations recorded; suggesting the next cheapest candidate"),
        )
    feasible = state.feasible()
    if feasible.size == 0:
        return Advice("exhausted")
    designer = Designer(session.instance(), session.seed, cfg)
    decision = designer.choose(Policy(session.policy, session.alpha), state.selected, feasible)
    idx = decision.index
    info = decision.info
    return Advice(
        "design", idx, session.candidates[idx].tolist(), float(session.costs[idx]),
        dv_intra=info.get("dv_intra"), dv_inter=info.get("dv_inter"), score=info.get("score"),
    )


def record(session: Session, index: int, outcome: float) -> Session:
    """Append an observed outcome; refuses repeats and purchases beyond the budget."""
    index = int(index)
    if not 0 <= index < session.candidates.shape[0]:
        raise SessionError(f"unknown candidate {index}")
    if index in session.observed:
        raise SessionError(f"candidate {index} was already recorded")
    if not math.isfinite(outcome):
        raise SessionError("outcome must be finite")
    state = PoolState(session.costs, session.budget, list(session.observed), session.spent)
    if not state.affordable(session.costs[index]):
        raise SessionError(f"candidate {index} costs more than the remaining budget")
    session.observed.append(index)
    session.outcomes.append(float(outcome))
    return session
