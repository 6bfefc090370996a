"""Instance files, synthetic instance generation and budget/R^2 reports.

Instance file (JSON)::

    {
      "schema_version": "scaledesign.instance/1",
      "name": "...",
      "law": {"family": ..., "input_dim": d, "options": {...},
              "param_names": [...], "bounds": [[lo, hi], ...], "positive": [...]},
      "cost_model": {"kind": "product_6ND", "indices": [0, 1]},
      "pool": [{"coords": [...], "cost": c, "outcome": y}, ...],   # cost optional
      "target": [{"coords": [...], "outcome": y}, ...],
      "metadata": {"synthetic": true, "noise_sigma": s, "true_theta": [...]}
    }

Report files: ``report.tsv`` (tab-delimited, one row per budget fraction and
policy) and ``curves.csv`` (``policy,fraction,mean_r2,std_r2,n``).
Standard deviations are sample standard deviations (``n - 1``), pooled over
every (instance, seed) log of a policy.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .instance import Instance
from .laws import CostModel, LawSpec, predict

INSTANCE_SCHEMA = "scaledesign.instance/1"
RECIPE_SCHEMA = "scaledesign.recipe/1"
TABLE_HEADER = ("budget_fraction", "policy", "n", "mean_r2", "std_r2", "r2")
CURVE_HEADER = ("policy", "fraction", "mean_r2", "std_r2", "n")

PathLike = Union[str, Path]


class InstanceError(ValueError):
    """An instance or recipe file violates the schema."""


# ---------------------------------------------------------------------------
# serialization


def instance_to_dict(inst: Instance) -> dict:
    return {
        "schema_version": INSTANCE_SCHEMA,
        "name": inst.name,
        "law": inst.spec.to_dict(),
        "cost_model": inst.cost_model.to_dict(),
        "pool": [
            {"coords": x.tolist(), "cost": float(c), "outcome": float(y)}
            for x, c, y in zip(inst.pool_X, inst.pool_cost, inst.pool_y)
        ],
        "target": [
            {"coords": x.tolist(), "outcome": float(y)} for x, y in zip(inst.target_X, inst.target_y)
        ],
        "metadata": inst.metadata,
    }


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1) + "\n"


def save_instance(inst: Instance, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_instance(inst))
    return path


def _finite_list(values, where: str, length: Optional[int] = None) -> List[float]:
    if not isinstance(values, list):
        raise InstanceError(f"{where}: expected a list")
    if length is not None and len(values) != length:
        raise InstanceError(f"{where}: expected {length} coordinates, got {len(values)}")
    try:
        out = [float(v) for v in values]
    except (TypeError, ValueError):
        raise InstanceError(f"{where}: non-numeric value") from None
    if not all(math.isfinite(v) for v in out):
        raise InstanceError(f"{where}: non-finite value")
    return out


def _finite(value, where: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise InstanceError(f"{where}: non-numeric value {value!r}") from None
    if not math.isfinite(out):
        raise InstanceError(f"{where}: non-finite value")
    return out


def instance_from_dict(data: dict) -> Instance:
    """Validate a parsed instance file; the first violation raises :class:`InstanceError`."""
    if not isinstance(data, dict):
        raise InstanceError("instance file must hold a JSON object")
    if data.get("schema_version") != INSTANCE_SCHEMA:
        raise InstanceError(
            f"schema_version: expected {INSTANCE_SCHEMA!r}, got {data.get('schema_version')!r}"
        )
    for key in ("name", "law", "cost_model", "pool", "target"):
        if key not in data:
            raise InstanceError(f"missing field {key!r}")
    try:
        spec = LawSpec.from_dict(data["law"])
    except (KeyError, ValueError, TypeError) as exc:
        raise InstanceError(f"law: {exc}") from None
    try:
        cost_model = CostModel.from_dict(data["cost_model"])
        cost_model.validate_for(spec.input_dim)
    except (KeyError, ValueError, TypeError) as exc:
        raise InstanceError(f"cost_model: {exc}") from None
    d = spec.input_dim
    pool, target = data["pool"], data["target"]
    if not isinstance(pool, list) or not pool:
        raise InstanceError("pool: must be a non-empty list")
    if not isinstance(target, list) or not target:
        raise InstanceError("target: must be a non-empty list")

    pool_X, pool_y, pool_cost = [], [], []
    for i, entry in enumerate(pool):
        where = f"pool[{i}]"
        if not isinstance(entry, dict) or "coords" not in entry or "outcome" not in entry:
            raise InstanceError(f"{where}: needs 'coords' and 'outcome'")
        pool_X.append(_finite_list(entry["coords"], f"{where}.coords", d))
        pool_y.append(_finite(entry["outcome"], f"{where}.outcome"))
        if entry.get("cost") is None:
            try:
                pool_cost.append(float(cost_model.costs(np.array(pool_X[-1]))[0]))
            except ValueError as exc:
                raise InstanceError(f"{where}.cost: {exc}") from None
        else:
            c = _finite(entry["cost"], f"{where}.cost")
            if c <= 0:
                raise InstanceError(f"{where}.cost: must be positive, got {c!r}")
            pool_cost.append(c)
    target_X, target_y = [], []
    for i, entry in enumerate(target):
        where = f"target[{i}]"
        if not isinstance(entry, dict) or "coords" not in entry or "outcome" not in entry:
            raise InstanceError(f"{where}: needs 'coords' and 'outcome'")
        target_X.append(_finite_list(entry["coords"], f"{where}.coords", d))
        target_y.append(_finite(entry["outcome"], f"{where}.outcome"))

    metadata = dict(data.get("metadata") or {})
    inst = Instance(
        name=str(data["name"]),
        spec=spec,
        cost_model=cost_model,
        pool_X=np.array(pool_X),
        pool_cost=np.array(pool_cost),
        pool_y=np.array(pool_y),
        target_X=np.array(target_X),
        target_y=np.array(target_y),
        metadata=metadata,
    )
    if metadata.get("synthetic"):
        check_extrapolation(inst)
    return inst


def check_extrapolation(inst: Instance) -> None:
    target_cost = inst.cost_model.costs(inst.target_X)
    if not np.min(target_cost) > np.median(inst.pool_cost):
        raise InstanceError(
            f"{inst.name}: cheapest target point ({np.min(target_cost):.3g}) must cost more than "
            f"the pool median ({np.median(inst.pool_cost):.3g})"
        )


def load_validate(path: PathLike) -> Instance:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    try:
        return instance_from_dict(data)
    except InstanceError as exc:
        raise InstanceError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class SyntheticRecipe:
    """How to build a synthetic instance.

    ``pool`` and ``target`` are designs: ``{"design": "grid" | "zip" | "random",
    "axes": [{"min", "max", "count", "scale": "log" | "linear"}, ...], "n": ...}``
    or ``{"design": "points", "points": [[...], ...]}`` or
    ``{"design": "concat", "parts": [design, ...]}``.
    ``generator`` optionally names a different law (family, options, theta) that
    produces the outcomes, which makes the declared law misspecified.
    """

    name: str
    law: LawSpec
    true_theta: np.ndarray
    cost_model: CostModel
    pool: dict
    target: dict
    noise_sigma: float = 0.0
    seed: int = 0
    generator: Optional[dict] = None
    tags: List[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticRecipe":
        try:
            if data.get("schema_version", RECIPE_SCHEMA) != RECIPE_SCHEMA:
                raise InstanceError(f"unsupported recipe schema {data['schema_version']!r}")
            return cls(
                name=str(data["name"]),
                law=LawSpec.from_dict(data["law"]),
                true_theta=np.asarray(data.get("true_theta", []), dtype=float),
                cost_model=CostModel.from_dict(data["cost_model"]),
                pool=dict(data["pool"]),
                target=dict(data["target"]),
                noise_sigma=float(data.get("noise_sigma", 0.0)),
                seed=int(data.get("seed", 0)),
                generator=data.get("generator"),
                tags=list(data.get("tags", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InstanceError):
                raise
            raise InstanceError(f"recipe: {exc!r}") from None


def _axis_values(axis: dict, count: Optional[int] = None, rng=None) -> np.ndarray:
    lo, hi = float(axis["min"]), float(axis["max"])
    n = int(axis.get("count", 0) if count is None else count)
    log = axis.get("scale", "log") == "log"
    if n < 1 or not lo <= hi or (log and lo <= 0):
        raise InstanceError(f"invalid axis {axis!r}")
    if rng is not None:
        u = rng.uniform(size=n)
        return np.exp(np.log(lo) + u * np.log(hi / lo)) if log else lo + u * (hi - lo)
    return np.geomspace(lo, hi, n) if log else np.linspace(lo, hi, n)


def design_points(design: dict, rng) -> np.ndarray:
    kind = design.get("design", "grid")
    if kind == "concat":
        parts = [design_points(part, rng) for part in design["parts"]]
        if not parts or len({p.shape[1] for p in parts}) != 1:
            raise InstanceError("concat design needs parts with equal dimension")
        return np.vstack(parts)
    if kind == "points":
        pts = np.asarray(design["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0 or not np.all(np.isfinite(pts)):
            raise InstanceError("points design needs a non-empty list of finite coordinate lists")
        return pts
    axes = design["axes"]
    if kind == "grid":
        return np.array(list(itertools.product(*[_axis_values(a) for a in axes])), dtype=float)
    if kind == "zip":
        cols = [_axis_values(a) for a in axes]
        if len({c.size for c in cols}) != 1:
            raise InstanceError("zip design needs equal axis counts")
        return np.stack(cols, axis=1)
    if kind == "random":
        n = int(design["n"])
        return np.stack([_axis_values(a, n, rng) for a in axes], axis=1)
    raise InstanceError(f"unknown design {kind!r}")


def _generator_outcomes(recipe: SyntheticRecipe, X: np.ndarray) -> np.ndarray:
    if recipe.generator is None:
        return predict(recipe.law, recipe.true_theta, X)
    gen_spec = LawSpec.from_dict(recipe.generator["law"])
    return predict(gen_spec, np.asarray(recipe.generator["theta"], dtype=float), X)


def generate_instance(recipe: SyntheticRecipe) -> Instance:
    """Sample pool and target outcomes ``f(x; theta*) + noise`` deterministically."""
    rng = np.random.default_rng(recipe.seed)
    pool_X = design_points(recipe.pool, rng)
    target_X = design_points(recipe.target, rng)
    d = recipe.law.input_dim
    if pool_X.shape[1] != d or target_X.shape[1] != d:
        raise InstanceError(f"designs must have {d} coordinates")
    if recipe.generator is None and recipe.true_theta.shape != (recipe.law.n_params,):
        raise InstanceError("true_theta must match the law's parameter count")
    pool_f = _generator_outcomes(recipe, pool_X)
    target_f = _generator_outcomes(recipe, target_X)
    if not (np.all(np.isfinite(pool_f)) and np.all(np.isfinite(target_f))):
        raise InstanceError("generator produced non-finite outcomes")
    sigma = recipe.noise_sigma
    pool_y = pool_f + (sigma * rng.standard_normal(pool_f.shape) if sigma > 0 else 0.0)
    target_y = target_f + (sigma * rng.standard_normal(target_f.shape) if sigma > 0 else 0.0)
    metadata = {
        "synthetic": True,
        "noise_sigma": sigma,
        "seed": recipe.seed,
        "tags": list(recipe.tags),
    }
    if recipe.generator is None:
        metadata["true_theta"] = recipe.true_theta.tolist()
    else:
        metadata["generator"] = recipe.generator
    inst = Instance(
        name=recipe.name,
        spec=recipe.law,
        cost_model=recipe.cost_model,
        pool_X=pool_X,
        pool_cost=recipe.cost_model.costs(pool_X),
        pool_y=pool_y,
        target_X=target_X,
        target_y=target_y,
        metadata=metadata,
    )
    check_extrapolation(inst)
    return inst


def load_recipe(path: PathLike) -> SyntheticRecipe:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InstanceError(f"{path}: recipe must be a JSON object")
    return SyntheticRecipe.from_dict(data)


def _data_dir(kind: str):
    return resources.files("scaledesign") / "data" / kind


def shipped_recipe_paths() -> List[Path]:
    return sorted(Path(str(p)) for p in _data_dir("recipes").iterdir() if p.name.endswith(".json"))


def shipped_instance_paths() -> List[Path]:
    return sorted(Path(str(p)) for p in _data_dir("instances").iterdir() if p.name.endswith(".json"))


def shipped_instances() -> List[Instance]:
    return [load_validate(p) for p in shipped_instance_paths()]


# ---------------------------------------------------------------------------
# reports


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


def aggregate(logs: Sequence) -> Dict[Tuple[str, float], List[float]]:
    """Checkpoint R^2 values grouped by (policy, fraction), in log order."""
    if not logs:
        raise ValueError("no episode logs to aggregate")
    reference = [c.budget_fraction for c in logs[0].checkpoints]
    offenders = [
        f"{log.header.get('instance')}/{log.header.get('policy')}/seed{log.header.get('seed')}"
        for log in logs
        if [c.budget_fraction for c in log.checkpoints] != reference
    ]
    if offenders:
        raise ValueError(f"inconsistent checkpoint sets (expected {reference}): {', '.join(offenders)}")
    groups: Dict[Tuple[str, float], List[float]] = defaultdict(list)
    for log in logs:
        for c in log.checkpoints:
            groups[(log.header["policy"], c.budget_fraction)].append(c.r2)
    return groups


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def report_rows(logs: Sequence, policy_order: Optional[Sequence[str]] = None):
    groups = aggregate(logs)
    policies = list(dict.fromkeys(policy_order or [log.header["policy"] for log in logs]))
    fractions = sorted({f for _, f in groups})
    rows = []
    for f in fractions:
        for policy in policies:
            values = groups.get((policy, f))
            if values:
                mean, std = mean_std(values)
                rows.append((f, policy, len(values), mean, std))
    return rows


def emit_report(
    logs: Sequence,
    out_dir: PathLike,
    references: Optional[Dict[str, float]] = None,
    policy_order: Optional[Sequence[str]] = None,
) -> Dict[str, Path]:
    """Write ``report.tsv`` and ``curves.csv`` into ``out_dir``.

    ``references`` maps instance name to its all-data R^2 and adds an
    ``all_data`` row (fraction ``1``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = report_rows(logs, policy_order)

    table = io.StringIO()
    table.write("\t".join(TABLE_HEADER) + "\n")
    for f, policy, n, mean, std in rows:
        table.write(f"{f:g}\t{policy}\t{n}\t{mean:.6f}\t{std:.6f}\t{format_cell(mean, std)}\n")
    if references:
        instances = sorted({log.header["instance"] for log in logs} & set(references))
        if instances:
            mean, std = mean_std([references[i] for i in instances])
            table.write(f"1\tall_data\t{len(instances)}\t{mean:.6f}\t{std:.6f}\t{format_cell(mean, std)}\n")
    table_path = out_dir / "report.tsv"
    table_path.write_text(table.getvalue(), encoding="utf-8")

    curves = io.StringIO()
    writer = csv.writer(curves, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for f, policy, n, mean, std in sorted(rows, key=lambda r: (r[1], r[0])):
        writer.writerow([policy, f"{f:g}", f"{mean:.6f}", f"{std:.6f}", n])
    curves_path = out_dir / "curves.csv"
    curves_path.write_text(curves.getvalue(), encoding="utf-8")
    return {"table": table_path, "curves": curves_path}


def read_curves(path: PathLike) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {
                "policy": row["policy"],
                "fraction": float(row["fraction"]),
                "mean_r2": float(row["mean_r2"]),
                "std_r2": float(row["std_r2"]),
                "n": int(row["n"]),
            }
            for row in csv.DictReader(fh)
        ]


def load_logs(paths: Iterable[PathLike]):
    from .engine import EpisodeLog

    return [EpisodeLog.from_jsonl(Path(p).read_text()) for p in paths]
