"""Sweeps over instances x policies x seeds, with logs and an aggregated report."""

from __future__ import annotations

import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .acquisition import DEFAULT_ALPHA, GridConfig
from .bench_io import emit_report, load_validate, shipped_instance_paths
from .engine import (
    DEFAULT_CHECKPOINTS,
    POLICIES,
    DesignConfig,
    EpisodeLog,
    Policy,
    all_data_reference,
    run_episode,
)
from .fitting import DEFAULT_N_STARTS
from .posterior import WeightConfig

OUTPUT_DIR_ENV = "SCALEDESIGN_OUTPUT_DIR"
DEFAULT_SEEDS = 10


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    instances: List[str]
    policies: List[str] = field(default_factory=lambda: list(POLICIES))
    seeds: List[int] = field(default_factory=lambda: list(range(DEFAULT_SEEDS)))
    checkpoints: List[float] = field(default_factory=lambda: list(DEFAULT_CHECKPOINTS))
    alpha: float = DEFAULT_ALPHA
    n_starts: int = DEFAULT_N_STARTS
    quad_nodes: int = GridConfig().n_nodes
    weight_scheme: str = "bic"
    output_dir: str = "runs"
    jobs: int = 1

    def __post_init__(self):
        if not self.instances:
            raise ConfigError("instances: at least one instance path is needed")
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"policies: unknown policy {p!r}; choose from {POLICIES}")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        if not self.checkpoints or any(not 0 < f <= 1 for f in self.checkpoints):
            raise ConfigError("checkpoints: fractions must lie in (0, 1]")
        if list(self.checkpoints) != sorted(self.checkpoints):
            raise ConfigError("checkpoints: fractions must be sorted ascending")
        if self.alpha < 0 or self.n_starts < 1 or self.quad_nodes < 3 or self.jobs < 1:
            raise ConfigError("alpha >= 0, n_starts >= 1, quad_nodes >= 3 and jobs >= 1 are required")
        WeightConfig(self.weight_scheme)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[Path] = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        instances = data.get("instances")
        if instances == "shipped":
            data["instances"] = [str(p) for p in shipped_instance_paths()]
        elif isinstance(instances, list):
            base = base_dir or Path(".")
            data["instances"] = [str(p if Path(p).is_absolute() else base / p) for p in instances]
        else:
            raise ConfigError('instances: a list of paths or "shipped"')
        seeds = data.get("seeds", DEFAULT_SEEDS)
        if isinstance(seeds, int):
            if seeds < 1:
                raise ConfigError("seeds: count must be >= 1")
            data["seeds"] = list(range(seeds))
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def design_config(self) -> DesignConfig:
        return DesignConfig(
            alpha=self.alpha,
            n_starts=self.n_starts,
            weights=WeightConfig(self.weight_scheme),
            grid=GridConfig(n_nodes=self.quad_nodes),
        )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return RunConfig.from_dict(data, base_dir=path.parent)


def resolve_output_dir(cfg: RunConfig, override: Optional[str] = None) -> Path:
    return Path(override or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir)


def log_name(instance: str, policy: str, seed: int) -> str:
    return f"{instance}__{policy}__seed{seed}.jsonl"


def _episode_task(args) -> Tuple[str, Optional[str], Optional[str]]:
    inst_path, policy, seed, checkpoints, cfg = args
    try:
        inst = load_validate(inst_path)
        log = run_episode(inst, Policy(policy, cfg.alpha), checkpoints, seed, cfg)
        return inst.name, log.to_jsonl(), None
    except Exception:  # recorded and reported, the sweep goes on
        return Path(inst_path).stem, None, traceback.format_exc()


@dataclass
class SweepResult:
    log_paths: List[Path]
    failures: List[dict]
    report: Dict[str, Path]
    references: Dict[str, float]

    @property
    def ok(self) -> bool:
        return not self.failures


def run_sweep(cfg: RunConfig, out_dir: Path, progress=None) -> SweepResult:
    out_dir = Path(out_dir)
    log_dir = out_dir / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    design = cfg.design_config()
    tasks = [
        (path, policy, seed, list(cfg.checkpoints), design)
        for path in cfg.instances
        for policy in cfg.policies
        for seed in cfg.seeds
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_episode_task, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_episode_task(task))
            if progress:
                progress(task, results[-1])

    log_paths, failures, logs = [], [], []
    for (path, policy, seed, _, _), (name, text, error) in zip(tasks, results):
        if error is not None:
            failures.append({"instance": path, "policy": policy, "seed": seed, "error": error})
            continue
        p = log_dir / log_name(name, policy, seed)
        p.write_text(text)
        log_paths.append(p)
        logs.append(EpisodeLog.from_jsonl(text))

    references = {}
    for path in cfg.instances:
        try:
            inst = load_validate(path)
            references[inst.name] = all_data_reference(inst, seed=0, n_starts=cfg.n_starts)
        except Exception:
            failures.append({"instance": path, "policy": "all_data", "seed": 0, "error": traceback.format_exc()})
    (out_dir / "references.json").write_text(json.dumps(references, indent=1, sort_keys=True) + "\n")
    if failures:
        (out_dir / "failures.jsonl").write_text("".join(json.dumps(f) + "\n" for f in failures))
    report = emit_report(logs, out_dir, references, cfg.policies) if logs else {}
    return SweepResult(log_paths, failures, report, references)
