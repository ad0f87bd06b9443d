"""
Finding subpopulations in a 2-D latent space
============================================

An autoencoder squeezes the 20 encoded features through a two-unit
bottleneck.  A Gaussian mixture fitted in that plane splits the cohort into
subpopulations, and the regressor's error is then broken down by component.
"""

import numpy as np

from remcal.dataset import SyntheticConfig, generate_synthetic, normalize, reference_planted_group
from remcal.neuralnet import TrainConfig, train_autoencoder
from remcal.segmentation import EmConfig, assign, fit_gmm, silhouette
from remcal.svg import emit_latent_plot

# a small cohort with one planted under-served group (women with high BMI)
cohort = generate_synthetic(SyntheticConfig(n=4000, seed=1, planted_groups=(reference_planted_group(),)))
cohort, _ = normalize(cohort)
print("planted prevalence:", round(float(np.mean(cohort.oracle_labels == 1)), 3))

# the encoder half of the trained network gives each record a point in 2-D
autoencoder = train_autoencoder(cohort, config=TrainConfig(epochs=20, seed=2))
latent = autoencoder.encode(cohort.features)

# mixture components in the latent plane
gmm = fit_gmm(latent, 8, EmConfig(seed=3))
labels = assign(gmm, latent)
print("component sizes:", np.bincount(labels, minlength=8))
print("silhouette:", round(silhouette(latent, labels, subsample=2000, seed=0), 3))

# where do the planted members land?
planted = cohort.oracle_labels == 1
share = np.bincount(labels[planted], minlength=8) / planted.sum()
print("share of planted members per component:", np.round(share, 2))

# colour the latent plane by sex; the file opens in any browser
emit_latent_plot(latent, cohort.variable("sex"), "latent_sex_demo.svg", "latent space", "sex")
