"""Regenerate the stored Asian-option reference value.

The arithmetic-mean Asian call has no closed form, so the reference is a
2^22-sample quasi-Monte Carlo estimate: 8 independently shifted and scrambled
Sobol' replicates of 2^19 points each.  The half-width recorded with the
value is 2.58 times the standard error over replicates.

Usage: python tools/build_option_reference.py [out_path]
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bayescub.nodes import make_sobol
from bayescub.problems import asian_option_problem

SEED = 424242
REPLICATES = 8
M = 19


def main(out_path: str) -> None:
    problem = asian_option_problem()
    estimates = []
    for rep in range(REPLICATES):
        gen = make_sobol(problem.d, seed=SEED + rep, scramble=True)
        pts = gen.points(0, 1 << M).points
        estimates.append(float(problem.evaluator(pts).mean()))
    estimates = np.asarray(estimates)
    value = float(estimates.mean())
    half_width = float(2.58 * estimates.std(ddof=1) / np.sqrt(REPLICATES))
    assert half_width < 1e-3, f"reference not tight enough: {half_width:.2e}"
    payload = {
        "asian_option": {
            "params": {k: problem.params[k] for k in ("T", "d", "S0", "r", "sigma", "K")},
            "value": value,
            "half_width": half_width,
            "method": f"{REPLICATES} x 2^{M} scrambled Sobol' replicates",
            "seed": SEED,
        }
    }
    with open(out_path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"value={value:.8f} half_width={half_width:.2e} -> {out_path}")


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "src", "bayescub", "data", "option_reference.json")
    main(os.path.abspath(out))
