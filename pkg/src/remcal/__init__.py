"""Representational model calibration for tabular regression models.

Train a target regressor, embed the cohort with an autoencoder, segment the
embedding with a Gaussian mixture, measure per-segment fidelity and equity,
characterize the worst segments and remediate by oversampled retraining.
"""

__version__ = "0.1.0"
