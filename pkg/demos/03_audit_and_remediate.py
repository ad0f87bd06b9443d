"""
Auditing a regressor and rebalancing its training data
======================================================

The audit flags the largest latent groups in the worst NRMSE quartile and
tests which variables set them apart.  Remediation then oversamples the
groups scoring above the median NRMSE and retrains.  Everything here runs
at a reduced size; the command-line tool runs the full configuration.
"""

from dataclasses import replace

import numpy as np

from remcal.calibration import CalibrationConfig, calibrate
from remcal.dataset import (
    SyntheticConfig,
    apply_normalization,
    generate_synthetic,
    normalize,
    reference_planted_group,
    split,
)
from remcal.neuralnet import TrainConfig, train_autoencoder, train_regressor
from remcal.remediation import RemediationConfig, multiplier_sweep
from remcal.segmentation import EmConfig, fit_gmm

cohort = generate_synthetic(SyntheticConfig(n=6000, seed=4, planted_groups=(reference_planted_group(),)))
train, val = split(cohort, 0.75, seed=5)
train, stats = normalize(train)
val = apply_normalization(val, stats)

# target model and segmentation
regressor, history = train_regressor(train, val, config=TrainConfig(epochs=10, seed=6))
autoencoder = train_autoencoder(train, config=TrainConfig(epochs=20, seed=7))
gmm = fit_gmm(autoencoder.encode(train.features), 12, EmConfig(seed=8))

# the audit
report = calibrate(regressor, train, autoencoder, gmm, CalibrationConfig(rounds=199, seed=9))
print("Gini over groups:", round(report.equity.gini, 4))
print("flagged groups:", report.worst_quartile_groups)
print("planted recall:", round(report.planted_recall(train.oracle_labels), 3))
for g in report.worst_quartile_groups:
    print(f"  group {g}: differs in", report.characterization.rejected_variables(g))

# remediation across multipliers, sharing the same baseline models
config = RemediationConfig(trials=3, seed=10, train_config=TrainConfig(epochs=10))
sweep = multiplier_sweep(train, val, None, autoencoder, gmm, [1, 2, 4], config)
print(sweep.table()[["multiplier", "nrmse_train_underserved", "nrmse_train_base", "gini_train"]])
print("Gini-minimizing multiplier:", sweep.best_multiplier())

# deltas are before minus after: positive means the NRMSE went down
best = next(o for o in sweep.outcomes if o.multiplier == sweep.best_multiplier())
print(best.delta_table())
print(np.round(best.gini_table().set_index("row")["mean_train"], 4))
