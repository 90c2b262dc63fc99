"""
The kernel barely moves in wide ensembles
=========================================

Train with gradient descent and record how much the empirical NTK changes.
"""

from treetangent.experiments import drift

res = drift("pb", depth=3, trees=(16, 64, 256, 1024), eta=0.1, steps=50, seeds=3)
for row in res.summary:
    print(f"M={row['trees']:5d}  median sup drift {row['median_drift']:.5f}")
print(f"fitted exponent {res.info['exponent']:.3f}  (step-size bound {res.info['eta_max']:.3f})")
