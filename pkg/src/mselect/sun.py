"""Unified skew-normal view of the observed outcomes.

Given the selection pattern, the observed outcomes of a record follow a
unified skew-normal (SUN) law whose parameters are simple functions of the
model parameters restricted to the observed outcomes ``S``:

    xi = mu1[S],  Omega = rho sigma Psi[S, S],  Delta = Psi[S, S]^{1/2},
    tau = mu2[S], Gamma = Psi[S, S].

:func:`mills_correction` gives the matrix analogue of the inverse Mills ratio
mean correction.  It whitens the selection means with the symmetric inverse
square root of ``Psi[S, S]``, which is exact when that matrix is diagonal and
an approximation otherwise; :func:`conditional_mean_mc_oracle` measures the
truth by rejection sampling.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DimensionError
from .matcore import cholesky
from .model import ModelParams, ObservationRecord, mean_matrix

__all__ = [
    "SUNParams",
    "SelectionCorrection",
    "OracleEstimate",
    "inverse_mills",
    "sym_sqrt",
    "sun_params",
    "mills_correction",
    "conditional_mean_mc_oracle",
]


@dataclass(frozen=True)
class SUNParams:
    xi: np.ndarray
    omega: np.ndarray
    delta: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    observed: np.ndarray  # 0-based outcome indices in S


@dataclass(frozen=True)
class SelectionCorrection:
    """``corrected_mean = mu1[S] + rho * sigma * delta_obs``."""

    delta_obs: np.ndarray
    corrected_mean: np.ndarray


@dataclass(frozen=True)
class OracleEstimate:
    """Monte Carlo estimate of ``E[y1[S] | selection pattern]``."""

    mean: np.ndarray
    std_error: np.ndarray
    accepted: int
    acceptance_rate: float


def inverse_mills(a):
    """``phi(a) / Phi(a)``, stable for large negative ``a``."""
    a = np.asarray(a, dtype=float)
    return np.exp(-0.5 * a * a - 0.5 * math.log(2 * math.pi) - special.log_ndtr(a))


def sym_sqrt(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Symmetric square root (or inverse square root) of an SPD matrix."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    cholesky(a)
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    vals = np.maximum(vals, 0.0)
    root = np.sqrt(vals)
    if inverse:
        root = 1.0 / root
    out = (vecs * root) @ vecs.T
    return 0.5 * (out + out.T)


def _observed(record: ObservationRecord) -> np.ndarray:
    s = np.flatnonzero(record.c == 1)
    if s.size == 0:
        raise DimensionError("the record has no observed outcome")
    return s


def sun_params(params: ModelParams, record: ObservationRecord) -> SUNParams:
    """SUN parameters of the observed outcomes given the selection pattern."""
    s = _observed(record)
    m = mean_matrix(params, record)
    psi_obs = params.psi[np.ix_(s, s)]
    return SUNParams(
        xi=m[0, s],
        omega=params.rho * params.sigma * psi_obs,
        delta=sym_sqrt(psi_obs),
        tau=m[1, s],
        gamma=psi_obs.copy(),
        observed=s,
    )


def mills_correction(params: ModelParams, record: ObservationRecord) -> SelectionCorrection:
    """Mean of the observed outcomes corrected for selection.

    ``delta_obs = Psi_S^{1/2} lambda(Psi_S^{-1/2} mu2[S])`` with ``lambda``
    applied componentwise.
    """
    s = _observed(record)
    m = mean_matrix(params, record)
    psi_obs = params.psi[np.ix_(s, s)]
    u = sym_sqrt(psi_obs, inverse=True) @ m[1, s]
    delta_obs = sym_sqrt(psi_obs) @ inverse_mills(u)
    return SelectionCorrection(delta_obs, m[0, s] + params.rho * params.sigma * delta_obs)


def conditional_mean_mc_oracle(
    params: ModelParams, record: ObservationRecord, draws: int = 1_000_000, seed: int = 0, chunk: int = 250_000
) -> OracleEstimate:
    """Rejection-sampling estimate of the selected outcomes' conditional mean.

    Latent matrices are drawn at the record's covariates and kept when every
    selection propensity has the sign given by ``record.c``.
    """
    if draws < 100_000:
        raise ValueError("the oracle needs at least 1e5 draws")
    s = _observed(record)
    m = mean_matrix(params, record)
    a = cholesky(params.Sigma)
    c = cholesky(params.psi)
    rng = np.random.default_rng(seed)
    R = params.R
    want = record.c == 1
    total = np.zeros(s.size)
    total2 = np.zeros(s.size)
    kept = 0
    left = int(draws)
    while left > 0:
        k = min(chunk, left)
        left -= k
        u = rng.standard_normal((k, 2, R))
        e = np.einsum("ab,nbs,rs->nar", a, u, c)
        y = m[None] + e
        ok = np.all((y[:, 1, :] > 0) == want[None, :], axis=1)
        sel = y[ok][:, 0, s]
        kept += sel.shape[0]
        total += sel.sum(axis=0)
        total2 += (sel * sel).sum(axis=0)
    rate = kept / draws
    if rate < 1e-4:
        warnings.warn(f"oracle acceptance rate {rate:.2e} is below 1e-4", RuntimeWarning, stacklevel=2)
    if kept < 2:
        nan = np.full(s.size, np.nan)
        return OracleEstimate(nan, nan, kept, rate)
    mean = total / kept
    var = (total2 - kept * mean * mean) / (kept - 1)
    return OracleEstimate(mean, np.sqrt(np.maximum(var, 0.0) / kept), kept, rate)
