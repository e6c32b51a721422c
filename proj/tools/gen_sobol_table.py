#!/usr/bin/env python3
"""Writes the first 1111 dimensions of the Joe-Kuo (new-joe-kuo-6.21201)
Sobol direction numbers.

Two outputs are produced:
  data/new-joe-kuo-1111.txt        the table in the original "d s a m_i" format
  include/pmlm/sobol_table.hpp     the same table as a constexpr array

The source is the copy of the table that ships with scipy.
"""
import os
import sys

import numpy as np
import scipy

N_DIM = 1111
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    src = os.path.join(os.path.dirname(scipy.__file__), "stats",
                       "_sobol_direction_numbers.npz")
    tab = np.load(src)
    poly, vinit = tab["poly"], tab["vinit"]

    rows = []
    # dimension 1 is the van der Corput sequence and is not in the table
    for d in range(1, N_DIM):
        p = int(poly[d])
        s = p.bit_length() - 1
        a = (p >> 1) & ((1 << (s - 1)) - 1) if s > 1 else 0
        m = [int(v) for v in vinit[d, :s]]
        rows.append((d + 1, s, a, m))

    with open(os.path.join(ROOT, "data", "new-joe-kuo-1111.txt"), "w") as f:
        f.write("d s a m_i\n")
        for d, s, a, m in rows:
            f.write(f"{d} {s} {a} {' '.join(map(str, m))}\n")

    max_s = max(r[1] for r in rows)
    with open(os.path.join(ROOT, "include", "pmlm", "sobol_table.hpp"), "w") as f:
        f.write("#pragma once\n\n")
        f.write("// Generated by tools/gen_sobol_table.py from data/new-joe-kuo-1111.txt.\n")
        f.write("// Do not edit by hand.\n\n")
        f.write("#include <cstdint>\n\nnamespace pmlm::detail {\n\n")
        f.write("struct sobol_dir_entry {\n  std::uint16_t s;\n  std::uint32_t a;\n")
        f.write(f"  std::uint32_t m[{max_s}];\n}};\n\n")
        f.write(f"inline constexpr int sobol_max_degree = {max_s};\n")
        f.write(f"inline constexpr int sobol_table_dims = {N_DIM};\n\n")
        f.write("// entry i holds dimension i + 2\n")
        f.write(f"inline constexpr sobol_dir_entry sobol_dirs[{len(rows)}] = {{\n")
        for d, s, a, m in rows:
            f.write(f"  {{{s}, {a}, {{{', '.join(map(str, m))}}}}},\n")
        f.write("};\n\n} // namespace pmlm::detail\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
