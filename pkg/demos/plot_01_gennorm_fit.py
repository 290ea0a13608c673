"""
Fitting a generalized normal to gradient-like data
==================================================

Gradients of a trained network are peaked at zero with heavy tails. A
three-parameter generalized normal (GenNorm) captures that shape through
its exponent ``beta``: 2 is a Gaussian, 1 a Laplacian, below 1 spikier still.
"""

import numpy as np

from gradcomp import gennorm, moments, sample
from gradcomp.gennorm import GenNormParams

# Draw a synthetic "gradient" vector from a Laplacian with a small scale.
truth = GenNormParams(mu=0.0, alpha=1e-3, beta=1.0)
x = sample(truth, 100_000, seed=0)

# The moment-ratio estimator matches E|x - mu|^2 / E(x - mu)^2 to its
# closed form in beta, then sets alpha from the variance.
details = gennorm.fit_details(x)
print("estimated", details.params)
print("moment ratio", round(details.moment_ratio, 5), "bisection steps", details.iterations)

# A normal fit (beta pinned to 2) for comparison.
print("normal fit", gennorm.fit_norm(x))

# Kurtosis tells the shapes apart: 6 for the Laplacian, 3 for any normal.
for name, p in [("gennorm", details.params), ("normal", gennorm.fit_norm(x))]:
    print(f"{name:8s} model kurtosis {moments(p).kurtosis:.3f}")
print(f"sample kurtosis  {np.mean((x - x.mean())**4) / x.var()**2:.3f}")

# Sweep the true shape and watch the estimate track it.
for beta in (0.6, 0.8, 1.0, 1.5, 2.0, 3.0):
    est = gennorm.fit(sample(GenNormParams(0.0, 1.0, beta), 100_000, seed=1))
    print(f"beta {beta:.1f} -> {est.beta:.3f}")
