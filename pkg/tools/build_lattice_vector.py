"""Regenerate the shipped extensible rank-1 lattice generating vector.

Component-by-component search for a base-2 extensible generating vector
supporting up to 2^20 points in up to 20 dimensions.  Quality criterion is
the classical order-2 shift-averaged worst-case error

    e_m^2(h) = -1 + 2^-m * sum_i prod_l [1 + gamma_l * 2 pi^2 B_2({i h_l / 2^m})]

summed as log(e_m^2) over m in {10, 12, 14, 16, 18, 20} so the embedded rule
stays good at every doubling.  Product weights gamma_l = 1/l.  Candidates per
component are a fixed random pool of odd integers below 2^20 (Philox seed
20230517), h_1 = 1 since every odd first component generates the same 1-d
projection.

The search is deterministic; re-running reproduces the shipped file bit for
bit.  Runtime is a couple of minutes.

Usage: python tools/build_lattice_vector.py [out_path]
"""

import os
import sys

import numpy as np

M_MAX = 20
D_MAX = 20
M_LEVELS = (10, 12, 14, 16, 18, 20)
POOL_SIZE = 255
SEED = 20230517


def bernoulli2(x):
    return x * x - x + 1.0 / 6.0


def search_vector():
    n = 1 << M_MAX
    mask = n - 1
    idx = np.arange(n, dtype=np.uint64)
    # order-2 kernel values on the full grid
    w = 2.0 * np.pi**2 * bernoulli2(np.arange(n, dtype=np.float64) / n)

    rng = np.random.Generator(np.random.Philox(SEED))
    pool = rng.integers(1, n // 2, size=POOL_SIZE * 4, dtype=np.uint64) * 2 + 1
    pool = np.unique(pool)[:POOL_SIZE]

    h = [1]
    prod = 1.0 + 1.0 * w  # gamma_1 = 1, h_1 = 1
    for ell in range(2, D_MAX + 1):
        gamma = 1.0 / ell
        best_score, best_h, best_fac = np.inf, None, None
        for cand in pool:
            if int(cand) in h:
                continue
            lag = (cand * idx) & mask
            fac = 1.0 + gamma * w[lag]
            tmp = prod * fac
            score = 0.0
            for m in M_LEVELS:
                e2 = tmp[:: 1 << (M_MAX - m)].mean() - 1.0
                score += np.log(max(e2, 1e-300))
            if score < best_score:
                best_score, best_h, best_fac = score, int(cand), fac
        h.append(best_h)
        prod *= best_fac
        print(f"dim {ell:2d}: h = {best_h:7d}  score = {best_score:.4f}")
    return h


def main(out_path: str) -> None:
    h = search_vector()
    with open(out_path, "w") as fh:
        fh.write("# Extensible rank-1 lattice generating vector, base 2, d <= 20, n <= 2^20.\n")
        fh.write("# Built by tools/build_lattice_vector.py (deterministic CBC-style search,\n")
        fh.write(f"# order-2 criterion, product weights 1/l, Philox seed {SEED}).\n")
        fh.write("# One odd integer per line, dimension 1 first.\n")
        for v in h:
            fh.write(f"{v}\n")
    print(f"wrote {len(h)} components to {out_path}")


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "src", "bayescub", "data", "lattice_base2_m20_d20.txt"
    )
    main(os.path.abspath(out))
