"""Command-line interface.

Exit codes: 0 success, 1 partial failure (some episodes failed, session
locked, record refused), 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .bench_io import InstanceError, emit_report, generate_instance, load_logs, load_recipe, save_instance
from .sweep import OUTPUT_DIR_ENV, ConfigError, load_run_config, resolve_output_dir, run_sweep

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def instance_summary(inst) -> List[str]:
    q = np.quantile(inst.pool_cost, [0.0, 0.25, 0.5, 0.75, 1.0])
    tq = inst.cost_model.costs(inst.target_X)
    return [
        f"instance\t{inst.name}",
        f"law\t{inst.spec.family_id} ({inst.spec.n_params} parameters)",
        f"pool_size\t{inst.n_pool}",
        "pool_cost_quantiles\t" + "\t".join(f"{v:.4g}" for v in q),
        f"total_cost\t{inst.total_cost:.6g}",
        f"target_size\t{inst.target_X.shape[0]}",
        f"target_cost_min\t{tq.min():.4g}",
    ]


def cmd_generate(args) -> int:
    try:
        recipe = load_recipe(args.recipe)
        inst = generate_instance(recipe)
    except (InstanceError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    save_instance(inst, args.out)
    print("\n".join(instance_summary(inst)))
    print(f"written\t{args.out}")
    return EXIT_OK


def _figure(report: dict, out_dir: Path, references: Optional[dict] = None) -> Optional[Path]:
    from .plotting import plot_curves

    ref = float(np.mean(list(references.values()))) if references else None
    return plot_curves(report["curves"], out_dir / "budget_r2.png", reference=ref)


def cmd_run(args) -> int:
    try:
        cfg = load_run_config(args.config)
        if args.jobs:
            cfg.jobs = args.jobs
    except (ConfigError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    out_dir = resolve_output_dir(cfg, args.output_dir)

    def progress(task, result):
        if not args.quiet:
            status = "ok" if result[2] is None else "FAILED"
            print(f"episode\t{result[0]}\t{task[1]}\tseed{task[2]}\t{status}", file=sys.stderr)

    result = run_sweep(cfg, out_dir, progress)
    for f in result.failures:
        _err(f"{f['instance']} {f['policy']} seed {f['seed']} failed:\n{f['error']}")
    if result.report:
        figure = _figure(result.report, out_dir, result.references)
        print(Path(result.report["table"]).read_text(encoding="utf-8"), end="")
        print(f"logs\t{len(result.log_paths)}\t{out_dir / 'logs'}")
        print(f"report\t{result.report['table']}\t{result.report['curves']}\t{figure}")
    return EXIT_OK if result.ok else EXIT_PARTIAL


def cmd_report(args) -> int:
    paths: List[Path] = []
    for p in args.logs:
        p = Path(p)
        paths.extend(sorted(p.glob("*.jsonl")) if p.is_dir() else [p])
    if not paths:
        _err("no episode logs found")
        return EXIT_USAGE
    try:
        logs = load_logs(paths)
        references = None
        if args.references:
            references = json.loads(Path(args.references).read_text())
        report = emit_report(logs, args.out, references)
    except (ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    figure = None if args.no_figure else _figure(report, Path(args.out), references)
    print(Path(report["table"]).read_text(encoding="utf-8"), end="")
    print(f"report\t{report['table']}\t{report['curves']}" + (f"\t{figure}" if figure else ""))
    return EXIT_OK


def cmd_advise(args) -> int:
    from .session import SessionError, SessionLocked, advise, load_session, session_lock

    try:
        with session_lock(args.session):
            advice = advise(load_session(args.session))
    except SessionLocked as exc:
        _err(str(exc))
        return EXIT_PARTIAL
    except (SessionError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    print("\n".join(advice.lines()))
    return EXIT_OK


def cmd_record(args) -> int:
    from .session import SessionError, SessionLocked, load_session, record, save_session, session_lock

    try:
        with session_lock(args.session):
            session = load_session(args.session)
            try:
                record(session, args.candidate, args.outcome)
            except SessionError as exc:
                _err(str(exc))
                return EXIT_PARTIAL
            save_session(session, args.session)
    except SessionLocked as exc:
        _err(str(exc))
        return EXIT_PARTIAL
    except (SessionError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(f"recorded\t{args.candidate}\t{args.outcome!r}\tobservations\t{len(session.observed)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scaledesign", description="Budgeted experiment selection for scaling-law fits.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="build a synthetic instance file from a recipe")
    p.add_argument("--recipe", required=True, help="recipe JSON file")
    p.add_argument("--out", required=True, help="instance JSON file to write")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run a sweep of design episodes and write logs plus a report")
    p.add_argument("--config", required=True, help="run config JSON file")
    p.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_DIR_ENV} and the config)")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.add_argument("--quiet", action="store_true", help="no per-episode progress lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-aggregate existing episode logs")
    p.add_argument("--logs", nargs="+", required=True, help="log files or directories of *.jsonl logs")
    p.add_argument("--out", required=True, help="directory for report.tsv, curves.csv and the figure")
    p.add_argument("--references", help="JSON map of instance name to all-data R^2")
    p.add_argument("--no-figure", action="store_true", help="skip the budget/R^2 figure")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("advise", help="suggest the next experiment for a session file")
    p.add_argument("--session", required=True, help="session JSON file")
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("record", help="append an observed outcome to a session file")
    p.add_argument("--session", required=True, help="session JSON file")
    p.add_argument("--candidate", type=int, required=True, help="candidate index")
    p.add_argument("--outcome", type=float, required=True, help="measured outcome")
    p.set_defaults(func=cmd_record)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
