"""Mean correction for selected outcomes, checked against rejection sampling.

Run with ``python3 demos/03_selection_correction.py``.
"""

import numpy as np

from mselect import ModelParams, ObservationRecord
from mselect.sun import conditional_mean_mc_oracle, mills_correction, sun_params

params = ModelParams(
    beta=([0.5, 1.0], [-0.2, 0.4]),
    gamma=([0.1, 0.7, -0.3], [0.4, -0.2, 0.5]),
    sigma=1.2,
    rho=0.7,
    psi=np.diag([1.0, 0.6]),
)
rec = ObservationRecord(
    x=([1.0, 0.3], [1.0, -0.5]),
    w=([1.0, 0.3, 1.1], [1.0, -0.5, 0.2]),
    c=[1, 1],
    y=[0.0, 0.0],  # values are irrelevant for the conditional mean
)

sp = sun_params(params, rec)
print("location xi:", sp.xi, " selection means tau:", sp.tau)

corr = mills_correction(params, rec)
print("uncorrected mean:", np.round(sp.xi, 4))
print("corrected mean:  ", np.round(corr.corrected_mean, 4))

oracle = conditional_mean_mc_oracle(params, rec, draws=1_000_000, seed=3)
print("rejection sampler:", np.round(oracle.mean, 4), "+/-", np.round(oracle.std_error, 4))
print("z-scores:", np.round((corr.corrected_mean - oracle.mean) / oracle.std_error, 2))

# with correlated outcomes the whitened correction is an approximation
corr_psi = params.replace(psi=np.array([[1.0, 0.6], [0.6, 1.0]]))
approx = mills_correction(corr_psi, rec).corrected_mean
truth = conditional_mean_mc_oracle(corr_psi, rec, draws=1_000_000, seed=4)
print("\ncorrelated Psi: correction", np.round(approx, 4), "sampler", np.round(truth.mean, 4))
