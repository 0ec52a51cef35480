"""Regenerate the shipped Sobol' direction-number table.

Writes the first 20 dimensions of the published Joe-Kuo D(6) table in the
standard "d s a m_i" text format.  The values are copied from the table
bundled with scipy (scipy/stats/_sobol_direction_numbers.npz), which is the
same published dataset; encoding them as text keeps the package free of a
runtime dependency on scipy's private data layout.

Usage: python tools/build_sobol_table.py [out_path]
"""

import os
import sys

import numpy as np


def joe_kuo_rows(max_dim: int):
    from scipy.stats import _sobol

    data = np.load(
        os.path.join(os.path.dirname(_sobol.__file__), "_sobol_direction_numbers.npz")
    )
    poly, vinit = data["poly"], data["vinit"]
    # Row k of the npz arrays is dimension k+1; the text format starts at d=2
    # (dimension 1 is the plain van der Corput column and carries no row).
    rows = []
    for d in range(2, max_dim + 1):
        p = int(poly[d - 1])
        s = p.bit_length() - 1
        a = (p - (1 << s) - 1) >> 1
        m = [int(v) for v in vinit[d - 1][:s]]
        assert all(mi % 2 == 1 and mi < (1 << (i + 1)) for i, mi in enumerate(m))
        rows.append((d, s, a, m))
    return rows


def main(out_path: str) -> None:
    rows = joe_kuo_rows(20)
    with open(out_path, "w") as fh:
        fh.write("# Sobol' direction numbers, dimensions 2..20.\n")
        fh.write("# Source: Joe & Kuo D(6) table (new-joe-kuo-6.21201),\n")
        fh.write("# copied from the copy distributed with scipy.stats.qmc.\n")
        fh.write("# Format: d s a m_1 ... m_s (dimension 1 is van der Corput).\n")
        fh.write("d\ts\ta\tm_i\n")
        for d, s, a, m in rows:
            fh.write(f"{d}\t{s}\t{a}\t" + " ".join(str(v) for v in m) + "\n")
    print(f"wrote {len(rows)} rows to {out_path}")


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "src", "bayescub", "data", "sobol_joe_kuo_d20.txt"
    )
    main(os.path.abspath(out))
