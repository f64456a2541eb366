"""Moments of a multivariate normal restricted to an axis-aligned rectangle.

First and second moments follow the classical reduction (Tallis; Manjunath
and Wilhelm): with centred bounds ``a = lower - mu`` and ``b = upper - mu``
and ``alpha`` the rectangle probability, define

    F_k(x)      = phi(x; 0, S_kk) * P(rest | X_k = x)
    F_kq(x, y)  = phi_2((x, y); S_[kq]) * P(rest | X_k = x, X_q = y)

which need rectangle probabilities of dimension d-1 and d-2 only.  Then

    E[X_i]     = sum_k S_ik (F_k(a_k) - F_k(b_k)) / alpha
    E[X_i X_j] = S_ij
                 + sum_k S_ik S_jk (a_k F_k(a_k) - b_k F_k(b_k)) / (S_kk alpha)
                 + sum_k S_ik sum_{q != k} (S_jq - S_kq S_jk / S_kk)
                       * [F_kq(a_k,a_q) - F_kq(a_k,b_q) - F_kq(b_k,a_q) + F_kq(b_k,b_q)] / alpha

Terms evaluated at an infinite bound vanish.  Coordinates that are
unrestricted on both sides are handled by regression on the truncated ones,
which keeps the rectangle dimension at the number of genuinely bounded
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTruncationError, DimensionError
from .matcore import _TWOPI, _orthant_cdf, cholesky, rect_prob_batch

__all__ = [
    "TruncMoments",
    "tmvn_moments",
    "tmvn_moments_batch",
    "conditional_censored_moments",
    "LOW_MASS",
]

LOW_MASS = 1e-12
_ZERO_MASS = 1e-300


@dataclass(frozen=True)
class TruncMoments:
    """Moments of a truncated normal vector.

    Attributes
    ----------
    mean, cov : ndarray
        Mean and covariance about the mean under truncation.
    second_moment : ndarray
        ``E[y y^T]``, i.e. ``cov + outer(mean, mean)``.
    probability : float
        Mass of the rectangle under the untruncated law.
    low_mass : bool
        True when ``probability`` is below ``1e-12``.
    """

    mean: np.ndarray
    cov: np.ndarray
    second_moment: np.ndarray
    probability: float = 1.0
    low_mass: bool = False
    empty: bool = field(default=False)


def _cond_rect(a, b, s, keep, given, xg):
    """Bounds and covariance of coordinates ``keep`` given ``X[given] = xg``.

    ``a, b``: (n, t) centred bounds; ``s``: (t, t) shared covariance;
    ``xg``: (n, len(given)) conditioning values.
    """
    s_kg = s[np.ix_(keep, given)]
    s_gg = s[np.ix_(given, given)]
    coef = np.linalg.solve(s_gg, s_kg.T).T  # (|keep|, |given|)
    shift = xg @ coef.T
    ccov = s[np.ix_(keep, keep)] - coef @ s_kg.T
    ccov = 0.5 * (ccov + ccov.T)
    return a[:, keep] - shift, b[:, keep] - shift, ccov


def _prob_or_one(lo, hi, cov, tol, seeds):
    if lo.shape[1] == 0:
        return np.ones(lo.shape[0])
    p, _, _ = rect_prob_batch(lo, hi, cov, tol=tol, seeds=seeds)
    return p


def _truncated_block(a, b, s, tol, seeds):
    """Moments for a group of records sharing covariance ``s`` (t x t).

    Every coordinate has at least one finite bound somewhere in the batch.
    Returns centred means (n, t), second moments (n, t, t) and alpha (n,).
    """
    n, t = a.shape
    alpha, _, _ = rect_prob_batch(a, b, s, tol=tol, seeds=seeds)
    dead = alpha < _ZERO_MASS
    safe_alpha = np.where(dead, 1.0, alpha)
    sd = np.sqrt(np.diag(s))
    fa = np.zeros((n, t))
    fb = np.zeros((n, t))
    # F_k at the lower and upper bound
    for k in range(t):
        rest = [j for j in range(t) if j != k]
        for bound, out in ((a, fa), (b, fb)):
            x = bound[:, k]
            fin = np.isfinite(x)
            if not np.any(fin):
                continue
            xf = x[fin]
            dens = np.exp(-0.5 * (xf / sd[k]) ** 2) / (math.sqrt(_TWOPI) * sd[k])
            lo, hi, cc = _cond_rect(a[fin], b[fin], s, rest, [k], xf[:, None])
            sub = None if seeds is None else np.asarray(seeds)[fin]
            out[fin, k] = dens * _prob_or_one(lo, hi, cc, tol, sub)
    # F_kq for each unordered pair and each combination of bounds
    fkq = np.zeros((n, t, t))
    for k in range(t):
        for q in range(k + 1, t):
            rest = [j for j in range(t) if j not in (k, q)]
            s2 = s[np.ix_([k, q], [k, q])]
            det = s2[0, 0] * s2[1, 1] - s2[0, 1] ** 2
            inv = np.array([[s2[1, 1], -s2[0, 1]], [-s2[0, 1], s2[0, 0]]]) / det
            acc = np.zeros(n)
            for bk, sk in ((a, 1.0), (b, -1.0)):
                for bq, sq in ((a, 1.0), (b, -1.0)):
                    xk = bk[:, k]
                    xq = bq[:, q]
                    fin = np.isfinite(xk) & np.isfinite(xq)
                    if not np.any(fin):
                        continue
                    xy = np.stack([xk[fin], xq[fin]], axis=1)
                    quad = np.einsum("ni,ij,nj->n", xy, inv, xy)
                    dens = np.exp(-0.5 * quad) / (_TWOPI * math.sqrt(det))
                    lo, hi, cc = _cond_rect(a[fin], b[fin], s, rest, [k, q], xy)
                    sub = None if seeds is None else np.asarray(seeds)[fin]
                    acc[fin] += sk * sq * dens * _prob_or_one(lo, hi, cc, tol, sub)
            fkq[:, k, q] = acc
            fkq[:, q, k] = acc

    diff = (fa - fb) / safe_alpha[:, None]
    mean = diff @ s.T
    # a_k F_k(a_k) - b_k F_k(b_k), with zero at infinite bounds
    afa = np.where(np.isfinite(a), a, 0.0) * fa
    bfb = np.where(np.isfinite(b), b, 0.0) * fb
    g = (afa - bfb) / (np.diag(s)[None, :] * safe_alpha[:, None])
    second = s[None, :, :] + np.einsum("ik,jk,nk->nij", s, s, g)
    # coefficient C[k, j, q] = S_jq - S_kq S_jk / S_kk
    coef = s[None, :, :] - s[:, None, :] * s[:, :, None] / np.diag(s)[:, None, None]
    h = fkq / safe_alpha[:, None, None]
    second = second + np.einsum("ik,kjq,nkq->nij", s, coef, h)
    second = 0.5 * (second + np.swapaxes(second, 1, 2))
    return mean, second, alpha


def _orthant_prob(u, cov):
    """P(X < u) for X ~ N(0, cov) with ``u`` of shape (n, k), k <= 3."""
    n, k = u.shape
    if k == 0:
        return np.ones(n)
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    return _orthant_cdf(u / sd, np.broadcast_to(corr, (n, k, k)))[0]


def _orthant_block(h, s):
    """Moments of X ~ N(0, s) truncated to {X < h}, h finite, dimension <= 3.

    Special case of :func:`_truncated_block` with every lower bound at
    minus infinity; skips the generic grouping for speed.
    """
    n, t = h.shape
    alpha = _orthant_prob(h, s)
    dead = alpha < _ZERO_MASS
    safe_alpha = np.where(dead, 1.0, alpha)
    sd = np.sqrt(np.diag(s))
    fb = np.empty((n, t))
    for k in range(t):
        rest = [j for j in range(t) if j != k]
        x = h[:, k]
        dens = np.exp(-0.5 * (x / sd[k]) ** 2) / (math.sqrt(_TWOPI) * sd[k])
        coef = s[rest, k] / s[k, k]
        ccov = s[np.ix_(rest, rest)] - np.outer(coef, s[k, rest])
        fb[:, k] = dens * _orthant_prob(h[:, rest] - x[:, None] * coef[None, :], 0.5 * (ccov + ccov.T))
    fkq = np.zeros((n, t, t))
    for k in range(t):
        for q in range(k + 1, t):
            rest = [j for j in range(t) if j not in (k, q)]
            s2 = s[np.ix_([k, q], [k, q])]
            det = s2[0, 0] * s2[1, 1] - s2[0, 1] ** 2
            inv = np.array([[s2[1, 1], -s2[0, 1]], [-s2[0, 1], s2[0, 0]]]) / det
            xy = h[:, [k, q]]
            quad = np.einsum("ni,ij,nj->n", xy, inv, xy)
            dens = np.exp(-0.5 * quad) / (_TWOPI * math.sqrt(det))
            if rest:
                coef = s[np.ix_(rest, [k, q])] @ inv
                ccov = s[np.ix_(rest, rest)] - coef @ s[np.ix_([k, q], rest)]
                p = _orthant_prob(h[:, rest] - xy @ coef.T, 0.5 * (ccov + ccov.T))
            else:
                p = 1.0
            fkq[:, k, q] = fkq[:, q, k] = dens * p
    mean = -(fb / safe_alpha[:, None]) @ s.T
    g = -(h * fb) / (np.diag(s)[None, :] * safe_alpha[:, None])
    second = s[None, :, :] + np.einsum("ik,jk,nk->nij", s, s, g)
    coef = s[None, :, :] - s[:, None, :] * s[:, :, None] / np.diag(s)[:, None, None]
    second = second + np.einsum("ik,kjq,nkq->nij", s, coef, fkq / safe_alpha[:, None, None])
    second = 0.5 * (second + np.swapaxes(second, 1, 2))
    return mean, second, alpha


def tmvn_moments_batch(mu, cov, lower, upper, tol: float = 1e-6, seeds=None):
    """Truncated moments for many rectangles at once.

    Parameters
    ----------
    mu : ndarray, shape (n, d)
    cov : ndarray, shape (d, d)
        Shared covariance.  Records are grouped by which bounds are finite, so
        loops run over patterns rather than records.
    lower, upper : ndarray, shape (n, d)
    tol : float
        Target accuracy; inner rectangle probabilities use ``tol / 10``.
    seeds : array of int, optional
        Per-record seeds for the quasi-Monte Carlo integrator.

    Returns
    -------
    mean : ndarray, shape (n, d)
    cov : ndarray, shape (n, d, d)
    prob : ndarray, shape (n,)
        Rectangle probabilities; moments for records with probability below
        ``1e-300`` are returned as NaN.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    cov = np.asarray(cov, dtype=float)
    n, d = mu.shape
    if lower.shape != (n, d) or upper.shape != (n, d) or cov.shape != (d, d):
        raise DimensionError("dimension mismatch in tmvn_moments_batch")
    mean = np.empty((n, d))
    out_cov = np.empty((n, d, d))
    prob = np.ones(n)
    if n == 0:
        return mean, out_cov, prob
    a = lower - mu
    b = upper - mu
    bounded = np.isfinite(a) | np.isfinite(b)
    keys, inverse = np.unique(bounded, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    seeds = None if seeds is None else np.asarray(seeds)
    inner_tol = tol / 10.0
    for g, key in enumerate(keys):
        idx = np.flatnonzero(inverse == g)
        T = np.flatnonzero(key)
        U = np.flatnonzero(~key)
        if T.size == 0:
            mean[idx] = mu[idx]
            out_cov[idx] = cov
            continue
        s_tt = cov[np.ix_(T, T)]
        sub_seeds = None if seeds is None else seeds[idx]
        a_t, b_t = a[np.ix_(idx, T)], b[np.ix_(idx, T)]
        fa_t, fb_t = np.isfinite(a_t), np.isfinite(b_t)
        one_sided = np.all(fa_t != fb_t, axis=0) & np.all(fa_t == fa_t[:1], axis=0)
        if T.size <= 3 and np.all(one_sided):
            # flip lower-bounded coordinates so the region is an upper orthant
            sgn = np.where(fb_t[0], 1.0, -1.0)
            m_t, e2_t, alpha = _orthant_block(np.where(fb_t, b_t, -a_t), s_tt * np.outer(sgn, sgn))
            m_t = m_t * sgn
            e2_t = e2_t * np.outer(sgn, sgn)
        else:
            m_t, e2_t, alpha = _truncated_block(a_t, b_t, s_tt, inner_tol, sub_seeds)
        c_t = e2_t - m_t[:, :, None] * m_t[:, None, :]
        # keep the mean inside the closed rectangle
        m_t = np.clip(m_t, a[np.ix_(idx, T)], b[np.ix_(idx, T)])
        prob[idx] = alpha
        full_m = np.empty((idx.size, d))
        full_c = np.empty((idx.size, d, d))
        full_m[:, T] = mu[np.ix_(idx, T)] + m_t
        full_c[:, T[:, None], T[None, :]] = c_t
        if U.size:
            reg = np.linalg.solve(s_tt, cov[np.ix_(T, U)]).T  # (|U|, |T|)
            full_m[:, U] = mu[np.ix_(idx, U)] + m_t @ reg.T
            cu = cov[np.ix_(U, U)] - reg @ cov[np.ix_(T, U)] + np.einsum("ut,ntv,wv->nuw", reg, c_t, reg)
            cut = np.einsum("ut,ntv->nuv", reg, c_t)
            full_c[:, U[:, None], U[None, :]] = cu
            full_c[:, U[:, None], T[None, :]] = cut
            full_c[:, T[:, None], U[None, :]] = np.swapaxes(cut, 1, 2)
        full_c = 0.5 * (full_c + np.swapaxes(full_c, 1, 2))
        dead = alpha < _ZERO_MASS
        full_m[dead] = np.nan
        full_c[dead] = np.nan
        mean[idx] = full_m
        out_cov[idx] = full_c
    return mean, out_cov, prob


def tmvn_moments(mu, cov, lower, upper, tol: float = 1e-6, seed: int = 0) -> TruncMoments:
    """Mean and covariance of ``N(mu, cov)`` conditioned on ``lower < y < upper``.

    Raises
    ------
    DegenerateTruncationError
        If the rectangle has probability below ``1e-300``.
    PDViolationError
        If ``cov`` is not positive definite.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = mu.size
    if lower.shape != (d,) or upper.shape != (d,) or cov.shape != (d, d):
        raise DimensionError("dimension mismatch in tmvn_moments")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    cholesky(cov)
    m, c, p = tmvn_moments_batch(mu[None], cov, lower[None], upper[None], tol=tol, seeds=[seed])
    prob = float(p[0])
    if not prob >= _ZERO_MASS:
        raise DegenerateTruncationError(f"rectangle probability {prob:.3g} is numerically zero")
    mean = m[0]
    cv = c[0]
    return TruncMoments(mean, cv, cv + np.outer(mean, mean), prob, prob < LOW_MASS)


def conditional_censored_moments(mu_full, cov_full, partition, y_obs, tol: float = 1e-6, seed: int = 0) -> TruncMoments:
    """Moments of the censored block given the observed block and its rectangle.

    ``partition`` needs ``obs_idx``, ``cens_idx``, ``lower`` and ``upper``
    attributes (see :class:`mselect.model.CensorPartition`).  A partition with
    no censored components returns empty moments with ``empty=True``.
    """
    mu_full = np.asarray(mu_full, dtype=float)
    cov_full = np.asarray(cov_full, dtype=float)
    obs = np.asarray(partition.obs_idx, dtype=int)
    cens = np.asarray(partition.cens_idx, dtype=int)
    y_obs = np.asarray(y_obs, dtype=float)
    if y_obs.shape != (obs.size,):
        raise DimensionError("observed vector does not match the partition")
    if cens.size == 0:
        z = np.zeros(0)
        return TruncMoments(z, np.zeros((0, 0)), np.zeros((0, 0)), 1.0, False, True)
    mu_c = mu_full[cens]
    s_cc = cov_full[np.ix_(cens, cens)]
    if obs.size:
        s_oo = cov_full[np.ix_(obs, obs)]
        s_co = cov_full[np.ix_(cens, obs)]
        L = cholesky(s_oo)
        k = np.linalg.solve(L.T, np.linalg.solve(L, s_co.T)).T
        mu_c = mu_c + k @ (y_obs - mu_full[obs])
        s_cc = s_cc - k @ s_co.T
        s_cc = 0.5 * (s_cc + s_cc.T)
    return tmvn_moments(mu_c, s_cc, partition.lower, partition.upper, tol=tol, seed=seed)
