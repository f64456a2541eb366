"""Normal rectangle probabilities: closed forms, quadrature and quasi-Monte Carlo.

Run with ``python3 demos/05_rectangle_probabilities.py``.
"""

import math

import numpy as np
from scipy import stats

from mselect.matcore import bvn_cdf, mvn_rect_prob, tvn_cdf

# bivariate orthant: 1/4 + arcsin(r) / (2 pi)
print("orthant r=0.6:", bvn_cdf(0.0, 0.0, 0.6), "closed form", 0.25 + math.asin(0.6) / (2 * math.pi))

# trivariate by one-dimensional quadrature
corr = np.array([[1.0, 0.5, 0.3], [0.5, 1.0, -0.2], [0.3, -0.2, 1.0]])
p, err = tvn_cdf(np.array([0.5, -0.3, 1.0]), corr)
print("trivariate:", p, "error estimate", err, "scipy", stats.multivariate_normal.cdf([0.5, -0.3, 1.0], np.zeros(3), corr, abseps=1e-10, releps=1e-10))

# five dimensions: seeded randomised QMC with an error estimate
rng = np.random.default_rng(0)
a = rng.normal(size=(5, 5))
cov = a @ a.T + np.eye(5)
res = mvn_rect_prob(-np.ones(5), 2 * np.ones(5), np.zeros(5), cov, tol=1e-5, seed=1)
print("5-dim rectangle:", res.probability, "+/-", res.error_estimate, f"({res.evaluations} evaluations)")
