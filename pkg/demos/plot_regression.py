"""
Kernel regression with tree NTKs
================================

Four-fold cross-validated classification on a synthetic separable problem,
comparing shallow and deep architectures.
"""

from treetangent import separable_classes
from treetangent.experiments import regress

d = separable_classes(200, n_features=10, margin=0.1, seed=0)
res = regress(d, archs=("pb", "dl"), depths=(2, 128), alphas=(2.0, 16.0))
for row in res.rows:
    print(f"{row['arch']:6s} depth={str(row['depth']):4s} alpha={row['alpha']:5.1f}  accuracy {row['accuracy']:.3f}")
