"""Weighted boosting on two Iris features.

A single flipout layer is trained on sepal length and petal length. After
each level the 25% of samples with the largest MC variance get one extra
unit of loss weight. Setosa (class 0) sits far from the other two classes,
so its samples should never be promoted.

Run with ``python demos/iris_weights.py``.
"""

import numpy as np

from proboost.experiment import iris_trace

rows, boosted = iris_trace(seed=0, levels=3)
labels = np.array([r["class"] for r in rows])

# %% sizes and promoted samples per level
for v, trace in enumerate(boosted.traces, start=1):
    if trace.selected is None:
        print(f"level {v}: last level, no transform")
        continue
    counts = np.bincount(labels[trace.selected], minlength=3)
    print(f"level {v}: promoted per class {counts.tolist()}")

# %% weight against uncertainty for the second level
w = np.array([r["weight_L3"] for r in rows])
u = np.array([r["uncertainty_L2"] for r in rows])
for c in range(3):
    m = labels == c
    print(f"class {c}: mean final weight {w[m].mean():.2f}, mean level-2 uncertainty {u[m].mean():.2e}")

# %% the hardest samples by final weight
order = np.argsort(-w, kind="stable")[:5]
for i in order:
    r = rows[i]
    print(f"#{i:3d} sepal={r['sepal_length']:.1f} petal={r['petal_length']:.1f} class={r['class']} weight={w[i]:.0f}")
