"""A single outcome: the multivariate model reduces to the classical selection model.

Run with ``python3 demos/01_single_outcome.py``.
"""

import numpy as np

from mselect import ModelParams, fit, loglik
from mselect.likelihood import classical_heckman_loglik
from mselect.model import Dataset
from mselect.sim import custom_scenario, generate

# one outcome, sigma = 1.5, rho = 0.5, about 30% of outcomes missing
truth = ModelParams(beta=([1.0, 0.5],), gamma=([0.3, 0.8, -1.0],), sigma=1.5, rho=0.5, psi=[[1.0]])
data = generate(custom_scenario(truth, n=500, missing_rate=0.3), seed=1)
ds: Dataset = data.dataset
print("missing rate:", round(data.empirical_rate, 3))

# the matrix-variate likelihood equals the textbook two-part likelihood
p = data.params
print("matrix-variate loglik:", loglik(p, ds).total)
print("classical loglik:     ", classical_heckman_loglik(p.beta[0], p.gamma[0], p.sigma, p.rho, ds))

# maximum likelihood by ECM
res = fit(ds)
print("converged after", res.iterations, "iterations")
print("beta  :", np.round(res.params.beta[0], 3), "truth", p.beta[0])
print("gamma :", np.round(res.params.gamma[0], 3), "truth", p.gamma[0])
print("sigma :", round(res.params.sigma, 3), " rho:", round(res.params.rho, 3))

# ignoring selection biases the outcome intercept
obs = ds.C[:, 0] == 1
ols, *_ = np.linalg.lstsq(ds.X[0][obs], ds.Y[obs, 0], rcond=None)
print("OLS on the selected sample:", np.round(ols, 3))
