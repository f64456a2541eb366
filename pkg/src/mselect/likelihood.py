"""Observed-data log-likelihood.

A record contributes the density of its observed outcomes times the
probability that its censored block falls in the rectangle fixed by the
selection indicators, conditional on those outcomes.  Unobserved outcomes are
unrestricted and integrate out, so the rectangle has one dimension per
outcome (the selection propensities).

Records are processed in groups sharing a censoring pattern; within a group
the conditional covariance and the regression of the censored block on the
observed block are shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DimensionError, PDViolationError, RecordError
from .matcore import LOG_2PI, cholesky, rect_prob_batch
from .model import Dataset, ModelParams, ObservationRecord, as_dataset, check_params_design

__all__ = [
    "LoglikBreakdown",
    "LOG_ZERO",
    "loglik",
    "loglik_record",
    "classical_heckman_loglik",
    "record_seeds",
]

#: per-record value used in place of log(0)
LOG_ZERO = -1e300


@dataclass(frozen=True)
class LoglikBreakdown:
    """Total and per-record log-likelihood.

    ``rect_error_bound`` sums the rectangle-probability error estimates
    divided by the probabilities, a first-order bound on the error in
    ``total``.  ``zero_mass`` lists records whose rectangle had no mass;
    their contribution is :data:`LOG_ZERO`.
    """

    total: float
    per_record: np.ndarray
    rect_error_bound: float
    zero_mass: tuple = ()


def record_seeds(seed: int, n: int) -> np.ndarray:
    """Per-record integrator seeds, a fixed function of ``(seed, index)``."""
    ss = np.random.SeedSequence(int(seed))
    return ss.generate_state(n, dtype=np.uint32).astype(np.int64)


@dataclass
class PatternBlock:
    """Shared quantities for records with one censoring pattern.

    Positions refer to the column-stacked ``2R`` vector.
    """

    idx: np.ndarray  # record indices
    obs: np.ndarray
    cens: np.ndarray
    lower: np.ndarray  # bounds over cens (shared by the group)
    upper: np.ndarray
    gain: np.ndarray  # Lambda_co Lambda_oo^{-1}
    cond_cov: np.ndarray  # Lambda_cc.o
    cond_mean: np.ndarray  # (n_g, |cens|)
    y_obs: np.ndarray  # (n_g, |obs|)
    log_dens: np.ndarray  # (n_g,) log phi(y_o; mu_o, Lambda_oo)


def pattern_blocks(params: ModelParams, ds: Dataset, mu=None):
    """Yield a :class:`PatternBlock` for each distinct censoring pattern."""
    R = ds.R
    lam = params.Lambda
    if mu is None:
        mu = ds.mean_vec(params)
    keys, inverse = np.unique(ds.C, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    for g, key in enumerate(keys):
        idx = np.flatnonzero(inverse == g)
        obs = np.array([2 * r for r in range(R) if key[r] == 1], dtype=int)
        cens = np.array(sorted([2 * r for r in range(R) if key[r] == 0] + [2 * r + 1 for r in range(R)]), dtype=int)
        lower = np.array([(0.0 if key[j // 2] == 1 else -np.inf) if j % 2 else -np.inf for j in cens])
        upper = np.array([(np.inf if key[j // 2] == 1 else 0.0) if j % 2 else np.inf for j in cens])
        s_cc = lam[np.ix_(cens, cens)]
        mu_c = mu[np.ix_(idx, cens)]
        if obs.size:
            y_obs = ds.Y[np.ix_(idx, obs // 2)]
            s_oo = lam[np.ix_(obs, obs)]
            s_co = lam[np.ix_(cens, obs)]
            L = cholesky(s_oo)
            gain = np.linalg.solve(L.T, np.linalg.solve(L, s_co.T)).T
            resid = y_obs - mu[np.ix_(idx, obs)]
            cond_mean = mu_c + resid @ gain.T
            cond_cov = s_cc - gain @ s_co.T
            z = np.linalg.solve(L, resid.T)
            log_dens = -0.5 * obs.size * LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * np.sum(z * z, axis=0)
        else:
            y_obs = np.zeros((idx.size, 0))
            gain = np.zeros((cens.size, 0))
            cond_mean = mu_c
            cond_cov = s_cc
            log_dens = np.zeros(idx.size)
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        yield PatternBlock(idx, obs, cens, lower, upper, gain, cond_cov, cond_mean, y_obs, log_dens)


def _selection_positions(block: PatternBlock) -> np.ndarray:
    """Positions within ``block.cens`` of the bounded (selection) coordinates."""
    return np.flatnonzero(block.cens % 2 == 1)


def loglik(params: ModelParams, data, tol: float = 1e-6, seed: int = 0) -> LoglikBreakdown:
    """Observed-data log-likelihood of ``data`` (records or a :class:`Dataset`)."""
    ds = as_dataset(data)
    check_params_design(params, ds.design)
    n = ds.n
    if n == 0:
        raise ValueError("no records")
    seeds = record_seeds(seed, n) if ds.R >= 4 else None
    per = np.empty(n)
    err_bound = 0.0
    zero = []
    for blk in pattern_blocks(params, ds):
        sel = _selection_positions(blk)
        a = blk.lower[sel][None, :] - blk.cond_mean[:, sel]
        b = blk.upper[sel][None, :] - blk.cond_mean[:, sel]
        cov = blk.cond_cov[np.ix_(sel, sel)]
        try:
            cholesky(cov)
        except PDViolationError as exc:
            raise RecordError(f"conditional covariance: {exc}", index=int(blk.idx[0])) from None
        sub = None if seeds is None else seeds[blk.idx]
        p, e, _ = rect_prob_batch(a, b, cov, tol=tol, seeds=sub)
        ok = p > 0
        with np.errstate(divide="ignore"):
            per[blk.idx] = np.where(ok, np.log(np.where(ok, p, 1.0)) + blk.log_dens, LOG_ZERO)
        err_bound += float(np.sum(np.where(ok, e / np.where(ok, p, 1.0), 0.0)))
        zero += [int(i) for i in blk.idx[~ok]]
    return LoglikBreakdown(float(np.sum(per)), per, err_bound, tuple(sorted(zero)))


def loglik_record(params: ModelParams, record: ObservationRecord, tol: float = 1e-6, seed: int = 0) -> float:
    """Log-likelihood contribution of one record.

    A zero-probability rectangle gives :data:`LOG_ZERO`.
    """
    ds = Dataset.from_records([record])
    check_params_design(params, ds.design)
    seeds = np.array([seed]) if ds.R >= 4 else None
    blk = next(pattern_blocks(params, ds))
    sel = _selection_positions(blk)
    a = blk.lower[sel][None, :] - blk.cond_mean[:, sel]
    b = blk.upper[sel][None, :] - blk.cond_mean[:, sel]
    p, _, _ = rect_prob_batch(a, b, blk.cond_cov[np.ix_(sel, sel)], tol=tol, seeds=seeds)
    if not p[0] > 0:
        return LOG_ZERO
    return float(np.log(p[0]) + blk.log_dens[0])


def classical_heckman_loglik(beta, gamma, sigma: float, rho: float, data) -> float:
    """Log-likelihood of the single-outcome selection model from univariate formulas.

    ``data`` is a sequence of single-outcome records or a single-outcome
    :class:`Dataset`.
    """
    sigma = float(sigma)
    rho = float(rho)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not abs(rho) < 1:
        raise ValueError("rho must lie in (-1, 1)")
    ds = as_dataset(data)
    if ds.R != 1:
        raise DimensionError("classical_heckman_loglik needs single-outcome data")
    xb = ds.X[0] @ np.asarray(beta, dtype=float)
    wg = ds.W[0] @ np.asarray(gamma, dtype=float)
    c = ds.C[:, 0] == 1
    total = float(np.sum(special.log_ndtr(-wg[~c])))
    v = ds.Y[c, 0]
    e = (v - xb[c]) / sigma
    total += float(np.sum(-0.5 * LOG_2PI - np.log(sigma) - 0.5 * e * e))
    total += float(np.sum(special.log_ndtr((wg[c] + rho * e) / np.sqrt(1.0 - rho * rho))))
    return total
