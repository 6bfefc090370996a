"""Write the recipe files of the shipped synthetic suite.

Run from the repository root; then regenerate instances with
``scaledesign generate`` (see README).
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "scaledesign" / "data" / "recipes"


def ax(lo, hi, n=0, scale="log"):
    return {"min": lo, "max": hi, "count": n, "scale": scale}


def grid(*axes):
    return {"design": "grid", "axes": list(axes)}


def zip_(*axes):
    return {"design": "zip", "axes": list(axes)}


def rand(n, *axes):
    return {"design": "random", "n": n, "axes": list(axes)}


def concat(*parts):
    return {"design": "concat", "parts": list(parts)}


SP1 = {"family": "sum_power", "input_dim": 1, "bounds": [[-10, 10], [1e-3, 1e3], [0.05, 2.0]]}
SP2 = {"family": "sum_power", "input_dim": 2,
       "bounds": [[-10, 10], [1e-3, 1e3], [1e-3, 1e3], [0.05, 1.5], [0.05, 1.5]]}
SP3 = {"family": "sum_power", "input_dim": 3,
       "bounds": [[-10, 10]] + [[1e-3, 1e3]] * 3 + [[0.05, 1.5]] * 3}
SAT = {"family": "saturating", "input_dim": 1,
       "bounds": [[-10, 10], [1e-3, 1e3], [1e-3, 1e2], [0.05, 2.0]]}
LQ = {"family": "log_quadratic", "input_dim": 2, "bounds": [[-10, 10]] * 6}
C6 = {"kind": "product_6ND", "indices": [0, 1]}
CNE = {"kind": "product_NE", "indices": [0, 1]}
CN = {"kind": "single_N", "indices": [0]}

# two cheap regimes for the misspecified instances: a steep extra term that
# only matters at small scale, fitted by a law that lacks it
PILOT_GEN = {"law": {"family": "sum_power", "input_dim": 1, "options": {"terms": [0, 0]}},
             "theta": [1.5, 6.0, 0.3, 0.4, 1.5]}
PILOT_POOL = concat(rand(400, ax(1, 6)), zip_(ax(10, 60, 12)))

SP2_GRID = grid(ax(1, 100, 8), ax(1, 100, 8))
SP2_TARGET = grid(ax(300, 1000, 3), ax(300, 1000, 3))
SAT_POOL = zip_(ax(1, 200, 60))
SAT_TARGET = zip_(ax(1000, 5000, 8))
# equal-N-and-D ladder: the two power terms are exchangeable on it; only the
# four off-diagonal probes can tell them apart
LADDER = concat(zip_(ax(1, 100, 46), ax(1, 100, 46)),
                {"design": "points", "points": [[10, 100], [100, 10], [30, 100], [100, 30]]})

RECIPES = [
    ("sp2_clean", SP2, [1.7, 4.0, 2.5, 0.35, 0.3], C6, SP2_GRID, SP2_TARGET, 0.0,
     ["well_specified", "zero_noise"], None),
    ("sat_clean", SAT, [1.5, 6.0, 5.0, 0.5], CN, SAT_POOL, SAT_TARGET, 0.0,
     ["well_specified", "zero_noise"], None),
    ("lq_clean", LQ, [1.5, -0.12, -0.08, 0.004, 0.002, 0.003], C6, SP2_GRID, SP2_TARGET, 0.0,
     ["well_specified", "zero_noise"], None),
    ("sp2_noisy", SP2, [1.7, 4.0, 2.5, 0.35, 0.3], C6, SP2_GRID, SP2_TARGET, 0.005,
     ["well_specified", "noisy"], None),
    ("sat_noisy", SAT, [1.5, 6.0, 5.0, 0.5], CN, SAT_POOL, SAT_TARGET, 0.005,
     ["well_specified", "noisy"], None),
    ("lq_noisy", LQ, [1.5, -0.12, -0.08, 0.004, 0.002, 0.003], C6, SP2_GRID, SP2_TARGET, 0.01,
     ["well_specified", "noisy"], None),
    ("lq_noisy_ne", LQ, [1.2, -0.15, -0.05, 0.006, 0.001, 0.002], CNE,
     grid(ax(1, 100, 9), ax(1, 50, 7)), grid(ax(300, 1000, 3), ax(200, 500, 3)), 0.005,
     ["well_specified", "noisy"], None),
    ("sp3_vocab", SP3, [1.6, 4.0, 2.5, 0.8, 0.35, 0.3, 0.5], C6,
     rand(90, ax(1, 100), ax(1, 100), ax(1, 50)),
     grid(ax(300, 1000, 2), ax(300, 1000, 2), ax(2, 50, 3)), 0.003,
     ["well_specified", "noisy"], None),
    ("sp2_bimodal_a", SP2, [1.5, 3.0, 3.0, 0.6, 0.25], C6, LADDER,
     grid(ax(100, 300, 3), ax(1000, 3000, 3)), 0.002, ["well_specified", "multimodal"], None),
    ("sp2_bimodal_b", SP2, [2.0, 5.0, 2.0, 0.45, 0.2], C6, LADDER,
     grid(ax(1000, 3000, 3), ax(100, 300, 3)), 0.002, ["well_specified", "multimodal"], None),
    ("sp1_pilot_misspec", SP1, [], CN, PILOT_POOL, zip_(ax(200, 2000, 8)), 0.002,
     ["misspecified"], PILOT_GEN),
    ("sat_pilot_misspec", SAT, [], CN, PILOT_POOL, zip_(ax(200, 2000, 8)), 0.002,
     ["misspecified"], PILOT_GEN),
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for seed, (name, law, theta, cost, pool, target, sigma, tags, gen) in enumerate(RECIPES, start=1):
        recipe = {
            "schema_version": "scaledesign.recipe/1",
            "name": name,
            "law": law,
            "true_theta": theta,
            "cost_model": cost,
            "pool": pool,
            "target": target,
            "noise_sigma": sigma,
            "seed": seed,
            "tags": tags,
        }
        if gen is not None:
            recipe["generator"] = gen
        (OUT / f"{name}.json").write_text(json.dumps(recipe, indent=1) + "\n")
        print(OUT / f"{name}.json")


if __name__ == "__main__":
    main()
