"""Density ratio of a Gaussian policy across a small action interval.

Xi = pi(a|s) / pi(a'|s) for a' within delta/2 of a stays inside the bracket
given by the Lipschitz constant of the density and tends to 1 linearly in delta.
"""
import numpy as np

from lfoeq.analysis import xi_bound_check
from lfoeq.neural import GaussianPolicy

policy = GaussianPolicy.create(3, 1, hidden=(16, 16), rng=0, input_norm=False)
states = np.random.default_rng(1).standard_normal((10_000, 3))
prev = None
for delta in (0.2, 0.1, 0.05, 0.025):
    rep = xi_bound_check(policy, states, delta, rng=2)
    ratio = "" if prev is None else f"  (previous / this = {prev / rep.max_xi_deviation:.2f})"
    print(f"delta {delta:<6} max |Xi - 1| = {rep.max_xi_deviation:.4f}  violations {rep.bound_violations}{ratio}")
    prev = rep.max_xi_deviation
