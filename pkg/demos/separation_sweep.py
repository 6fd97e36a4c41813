"""Grow the block length and watch the sandwiched error of the randomized
separation shrink.

For each l the construction samples N sub-POVMs supported on at most M
outcome strings; their uniform mixture approximates the product
measurement. cm is the sandwiched error; the last column is the smallest
margin cm - cp over sampled sources. It sits at rounding level because
some sampled sources attain the cm value.
"""

import numpy as np

from qmd.quantum import chrysler_povm
from qmd.separation import SeparationParams, build_separation, sampled_cp_errors

rho = np.eye(2) / 2
a = chrysler_povm()

print(f"{'l':>2} {'M':>7} {'N':>4} {'mean cm':>9} {'min cm-cp':>10}")
for l in range(3, 8):
    cms, margins = [], []
    for seed in range(3):
        res = build_separation(rho, a, SeparationParams(l=l, seed=seed))
        cms.append(res.cm_error)
        margins.append(res.cm_error - sampled_cp_errors(res, 9, np.random.default_rng(seed)).max())
    p = res.params
    print(f"{l:>2} {p.M:>7} {p.N:>4} {np.mean(cms):>9.4f} {np.min(margins):>10.1e}")
