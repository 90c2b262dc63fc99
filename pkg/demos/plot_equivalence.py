"""
Two different trees, one kernel
===============================

The two shapes below share the leaf profile {2: 2, 3: 4} but are not
isomorphic. Their limiting kernels coincide, so large ensembles of either
shape train along the same trajectory.
"""

import numpy as np

from treetangent import shared_profile_pair, profile_of
from treetangent.experiments import train_compare

a, b = shared_profile_pair()
print("profiles:", profile_of(a).counts, profile_of(b).counts)

res = train_compare(a, b, trees=(16, 1024), eta=0.1, steps=50, seeds=2)
for m in (16, 1024):
    gaps = [r["gap_ab"] for r in res.summary if r["trees"] == m]
    print(f"M={m:5d}  max gap between shapes {np.median(gaps):.4f}")

an = res.info["analytic"]
print("analytic trajectories identical:", np.array_equal(an["steps_A"], an["steps_B"]))
