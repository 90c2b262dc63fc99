"""
Deep perfect binary trees forget the input
==========================================

At a right angle between inputs the normalized perfect-binary kernel
collapses with depth, while the decision-list kernel settles on a
non-trivial limit.
"""

import numpy as np

from treetangent import ScaledErf, normalized_kernel

f = ScaledErf(2.0)
xi, xj = np.array([1.0, 0.0]), np.array([0.0, 1.0])

for depth in (2, 8, 32, 128):
    pb = normalized_kernel(f, "pb", xi, xj, depth)
    dl = normalized_kernel(f, "dl", xi, xj, depth)
    print(f"D={depth:4d}   PB {pb:10.3e}   DL {dl:.6f}")

print(f"D=inf        DL {normalized_kernel(f, 'dlinf', xi, xj):.6f}")
