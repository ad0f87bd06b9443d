"""
Group fidelity and the Gini coefficient
=======================================

NRMSE compares a model with the best constant guess inside each group, so
values near one mean the model adds little there.  The Gini coefficient of
the per-group NRMSE values summarizes how unevenly fidelity is spread.
"""

import numpy as np

from remcal.metrics import equity, gini, group_metrics, nrmse

rng = np.random.default_rng(0)

# three groups of 400 records; the model is noisier on the last one
labels = np.repeat([0, 1, 2], 400)
y = rng.normal(42, 6, labels.size)
pred = y + rng.normal(0, 1, labels.size) * np.array([1.0, 1.5, 4.0])[labels]

# predicting the group mean scores exactly one
print("group-mean predictor:", nrmse(np.full(400, y[:400].mean()), y[:400]))

# per-group fidelity
gm = group_metrics(pred, y, labels)
print(gm.to_frame())

# inequality across groups: zero when every group scores the same
print("Gini over groups:", round(equity(gm).gini, 4))
print("Gini of equal values:", gini([0.3, 0.3, 0.3]))
print("Gini of [1, 2, 3]:", round(gini([1.0, 2.0, 3.0]), 4))
