"""Kraus-representation freedom and the block decomposition of a channel.

The entropy exchange does not depend on the Kraus representation, while
the entropy defect of the outcome ensemble does; sigma_search looks for the
representation that minimizes it. The measurement channel of the pentagon
POVM is then split into a mixture of channels with few Kraus operators.
"""

import numpy as np

from qmd.channels import (
    chrysler_channel,
    decompose_channel,
    entropy_exchange,
    kraus_remix,
    random_channel,
    representation_information,
    sigma_search,
)
from qmd.numerics import haar_unitary
from qmd.quantum import random_density
from qmd.separation import SeparationParams

rng = np.random.default_rng(1)
ch = random_channel(2, 2, 3, rng)
rho = random_density(2, rng)

print(f"entropy exchange               {entropy_exchange(ch, rho):.6f}")
for _ in range(3):
    other = kraus_remix(ch, haar_unitary(3, rng))
    print(f"  remixed: S_e {entropy_exchange(other, rho):.6f}, "
          f"defect {representation_information(other, rho):.6f}")
sig = sigma_search(ch, rho, restarts=4, seed=0)
print(f"smallest defect found          {sig.value:.6f} (over {sig.restarts} starts)")

print()
print(f"{'l':>2} {'seed':>4} {'M':>5} {'N':>3} {'co*':>8} {'bound':>8}")
for l in (2, 3):
    for seed in range(2):
        dec = decompose_channel(chrysler_channel(), np.eye(2) / 2, SeparationParams(l=l, seed=seed))
        print(f"{l:>2} {seed:>4} {dec.M:>5} {dec.N:>3} {dec.co_star_error:>8.4f} {dec.string_bound:>8.4f}")
