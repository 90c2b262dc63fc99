"""
Limiting kernels along a circle of inputs
=========================================

Evaluate the closed-form tree NTKs between (1, 0) and (cos b, sin b) and
write an SVG of the normalized curves.
"""

import numpy as np

from treetangent import ScaledErf, LeafProfile, kernel, normalized_kernel
from treetangent.svg import line_plot

f = ScaledErf(alpha=2.0)
betas = np.linspace(0, np.pi, 64)
xi = np.array([1.0, 0.0])
xj = np.c_[np.cos(betas), np.sin(betas)]

# every architecture enters only through its leaf profile
archs = {
    "perfect binary D=3": ("pb", 3),
    "decision list D=3": ("dl", 3),
    "decision list D=inf": ("dlinf", None),
    "profile {2: 2, 3: 4}": (LeafProfile({2: 2, 3: 4}), None),
}
series = {}
for label, (arch, depth) in archs.items():
    series[label] = (betas, normalized_kernel(f, arch, xi, xj, depth))
    print(f"{label:22s} k(beta=0) = {kernel(f, arch, xi, xj[0], depth):.4f}")

with open("kernel_curves.svg", "w") as fh:
    fh.write(line_plot(series, title="normalized limiting kernels", xlabel="beta", ylabel="k / sqrt(kii kjj)"))
