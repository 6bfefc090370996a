"""Freeze the end-to-end baseline used by the acceptance suite.

Usage: python3 tools/freeze_baseline.py RUN_DIR

RUN_DIR is the output of ``scaledesign run`` over the shipped instances with
policies ours, vopt, random and cheapest, 10 seeds, checkpoint 0.10.
"""

import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from scaledesign.bench_io import load_logs

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "acceptance_baseline.json"
# allowed drift of a policy's overall mean R^2 across platforms and BLAS builds
TOLERANCE = 0.05


def main(run_dir):
    logs = load_logs(sorted(Path(run_dir, "logs").glob("*.jsonl")))
    per = defaultdict(list)
    for log in logs:
        per[log.header["policy"], log.header["instance"]].append(log.r2_at(0.10))
    policies = sorted({p for p, _ in per})
    per_instance = {p: {i: float(np.mean(v)) for (q, i), v in sorted(per.items()) if q == p} for p in policies}
    data = {
        "checkpoint": 0.10,
        "seeds": sorted({log.header["seed"] for log in logs}),
        "tolerance": TOLERANCE,
        "mean_r2_at_10pct": {p: float(np.mean(list(per_instance[p].values()))) for p in policies},
        "per_instance": per_instance,
    }
    OUT.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    print(json.dumps(data["mean_r2_at_10pct"], indent=1))


if __name__ == "__main__":
    main(sys.argv[1])
