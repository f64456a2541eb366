"""ECM estimation of the matrix-variate selection model.

One iteration:

1. E-step: conditional mean ``yhat_i`` and covariance ``vhat_i`` of the
   column-stacked latent vector given the observed outcomes and the
   selection rectangle.  The log-likelihood at the current parameters is a
   by-product (rectangle probability times observed density).
2. CM-step 1: regression coefficients by generalised least squares on
   ``yhat_i`` with weight ``(Psi (x) Sigma)^{-1}``.
3. CM-step 2: ``Sigma`` then ``Psi`` from the Cholesky columns ``D_ij`` of
   ``Delta*_i = (yhat_i - mu_i)(yhat_i - mu_i)' + vhat_i``, followed by the
   normalisations ``Sigma_22 = 1`` and ``tr(Psi) = R``.

Both normalisations leave the likelihood unchanged: the first moves a scalar
between the Kronecker factors, the second rescales the unobservable
selection propensities (``sigma -> a sigma``, ``gamma -> gamma / a``,
``Psi -> Psi / a^2``), which the indicators cannot detect.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import (
    CovarianceUpdateError,
    DegenerateTruncationError,
    FitError,
    InsufficientDataError,
    MselectError,
    PDViolationError,
    RankDeficiencyError,
)
from .likelihood import LOG_ZERO, pattern_blocks, record_seeds
from .matcore import cholesky, psd_cholesky
from .model import (
    RHO_BOUND,
    Dataset,
    ModelParams,
    ObservationRecord,
    OutcomeDesign,
    as_dataset,
    check_params_design,
)
from .truncmoments import LOW_MASS, tmvn_moments_batch

__all__ = [
    "EStepResult",
    "EStepBatch",
    "FitConfig",
    "FitResult",
    "e_step",
    "e_step_batch",
    "delta_hat",
    "delta_star_batch",
    "cm_step_regression",
    "theorem1_columns",
    "cm_step_covariance",
    "q_kronecker",
    "q_columns",
    "initialize",
    "fit",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EStepResult:
    """Conditional moments of one record's latent vector (length ``2R``)."""

    yhat: np.ndarray
    vhat: np.ndarray
    low_mass_flag: bool = False


@dataclass
class EStepBatch:
    """E-step output for a whole dataset.

    Attributes
    ----------
    yhat : ndarray, shape (n, 2R)
    vhat : ndarray, shape (n, 2R, 2R)
    loglik : ndarray, shape (n,)
        Per-record log-likelihood at the parameters used for the E-step.
    low_mass : ndarray of bool, shape (n,)
    """

    yhat: np.ndarray
    vhat: np.ndarray
    loglik: np.ndarray
    low_mass: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.loglik))

    def record(self, i: int) -> EStepResult:
        return EStepResult(self.yhat[i], self.vhat[i], bool(self.low_mass[i]))


@dataclass(frozen=True)
class FitConfig:
    """Settings of the ECM loop.

    ``regression`` picks CM-step 1: ``"joint"`` (GLS with the full
    ``Psi (x) Sigma`` weight, the exact conditional maximiser),
    ``"per_outcome"`` (separate GLS per outcome with ``Sigma`` weight) or
    ``"explicit"`` (the scalar closed forms that also drop the cross terms).
    ``constraint`` picks how ``Sigma_22 = 1`` is restored: ``"rescale"``
    moves the scalar into ``Psi``; ``"overwrite"`` sets the entry to one.
    """

    tol: float = 1e-6
    max_iter: int = 500
    rect_tol: float = 1e-6
    seed: int = 0
    monotonicity_slack: float = 1e-6
    regression: str = "joint"
    constraint: str = "rescale"
    normalize_psi: bool = True
    record_q: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.rect_tol > 0:
            raise ValueError("rect_tol must be positive")
        if self.monotonicity_slack < 0:
            raise ValueError("monotonicity_slack must be non-negative")
        if self.regression not in ("joint", "per_outcome", "explicit"):
            raise ValueError(f"unknown regression update {self.regression!r}")
        if self.constraint not in ("rescale", "overwrite"):
            raise ValueError(f"unknown constraint handling {self.constraint!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit`.

    ``loglik_trace[k]`` is the log-likelihood after iteration ``k + 1``;
    the value at the starting point is ``initial_loglik``.
    ``diagnostics`` holds one dict per iteration.
    """

    params: ModelParams
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    warnings: tuple = ()
    initial_loglik: float = float("nan")
    initial_params: ModelParams | None = None
    diagnostics: tuple = field(default=(), repr=False)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1]) if len(self.loglik_trace) else self.initial_loglik


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


def e_step_batch(params: ModelParams, data, rect_tol: float = 1e-6, seed: int = 0) -> EStepBatch:
    """Conditional first and second moments for every record."""
    ds = as_dataset(data)
    check_params_design(params, ds.design)
    n, R = ds.n, ds.R
    d = 2 * R
    yhat = np.empty((n, d))
    vhat = np.zeros((n, d, d))
    ll = np.empty(n)
    low = np.zeros(n, dtype=bool)
    seeds = record_seeds(seed, n) if R >= 4 else None
    for blk in pattern_blocks(params, ds):
        ng = blk.idx.size
        lo = np.broadcast_to(blk.lower, (ng, blk.cens.size))
        hi = np.broadcast_to(blk.upper, (ng, blk.cens.size))
        sub = None if seeds is None else seeds[blk.idx]
        m, c, p = tmvn_moments_batch(blk.cond_mean, blk.cond_cov, lo, hi, tol=rect_tol, seeds=sub)
        dead = ~(p >= 1e-300) | ~np.all(np.isfinite(m), axis=1)
        if np.any(dead):
            # no usable mass: put the mean on the nearest point of the rectangle
            m[dead] = np.clip(blk.cond_mean[dead], lo[dead], hi[dead])
            c[dead] = 0.0
        yhat[np.ix_(blk.idx, blk.obs)] = blk.y_obs
        yhat[np.ix_(blk.idx, blk.cens)] = m
        vhat[blk.idx[:, None, None], blk.cens[None, :, None], blk.cens[None, None, :]] = c
        with np.errstate(divide="ignore"):
            ll[blk.idx] = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)) + blk.log_dens, LOG_ZERO)
        low[blk.idx] = p < LOW_MASS
    return EStepBatch(yhat, vhat, ll, low)


def e_step(params: ModelParams, record: ObservationRecord, rect_tol: float = 1e-6, seed: int = 0) -> EStepResult:
    """E-step moments for a single record."""
    ds = Dataset.from_records([record])
    check_params_design(params, ds.design)
    n, R = 1, ds.R
    seeds = np.array([seed]) if R >= 4 else None
    blk = next(pattern_blocks(params, ds))
    lo = blk.lower[None]
    hi = blk.upper[None]
    m, c, p = tmvn_moments_batch(blk.cond_mean, blk.cond_cov, lo, hi, tol=rect_tol, seeds=seeds)
    yhat = np.empty(2 * R)
    vhat = np.zeros((2 * R, 2 * R))
    if not p[0] >= 1e-300:
        m = np.clip(blk.cond_mean, lo, hi)
        c = np.zeros_like(c)
    yhat[blk.obs] = blk.y_obs[0]
    yhat[blk.cens] = m[0]
    vhat[np.ix_(blk.cens, blk.cens)] = c[0]
    return EStepResult(yhat, vhat, bool(p[0] < LOW_MASS))


def _as_batch(estep) -> EStepBatch:
    if isinstance(estep, EStepBatch):
        return estep
    estep = list(estep)
    yhat = np.array([e.yhat for e in estep])
    vhat = np.array([e.vhat for e in estep])
    low = np.array([e.low_mass_flag for e in estep])
    return EStepBatch(yhat, vhat, np.zeros(len(estep)), low)


def delta_hat(params: ModelParams, estep: EStepResult, record: ObservationRecord) -> np.ndarray:
    """``(yhat - mu)(yhat - mu)' + vhat`` with ``mu`` the record's mean under ``params``."""
    mu = Dataset.from_records([record]).mean_vec(params)[0]
    r = estep.yhat - mu
    return np.outer(r, r) + estep.vhat


def delta_star_batch(params: ModelParams, estep: EStepBatch, ds: Dataset) -> np.ndarray:
    r = estep.yhat - ds.mean_vec(params)
    out = r[:, :, None] * r[:, None, :] + estep.vhat
    return 0.5 * (out + np.swapaxes(out, 1, 2))


# ---------------------------------------------------------------------------
# CM-step 1
# ---------------------------------------------------------------------------


def _stacked_design(ds: Dataset, design: OutcomeDesign) -> np.ndarray:
    """``Zt`` of shape ``(n, 2R, p+q)`` with ``Zt_i b = vec(Z_i B)``."""
    off_b, off_g = design.offsets()
    z = np.zeros((ds.n, 2 * ds.R, design.n_coef))
    for r in range(ds.R):
        z[:, 2 * r, off_b[r] : off_b[r] + design.p[r]] = ds.X[r]
        z[:, 2 * r + 1, off_g[r] : off_g[r] + design.q[r]] = ds.W[r]
    return z


def _check_rank(ds: Dataset) -> None:
    for r in range(ds.R):
        for name, m in (("outcome", ds.X[r]), ("selection", ds.W[r])):
            if np.linalg.matrix_rank(m) < m.shape[1]:
                raise RankDeficiencyError(f"{name} covariates of outcome {r + 1} are rank deficient", outcome=r + 1)


def _solve_normal(a: np.ndarray, rhs: np.ndarray, outcome=None) -> np.ndarray:
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError(
            "normal equations are singular" + (f" for outcome {outcome}" if outcome else ""), outcome=outcome
        ) from None
    if np.min(np.diag(L)) ** 2 < 1e-13 * np.max(np.diag(a)):
        raise RankDeficiencyError(
            "normal equations are numerically singular" + (f" for outcome {outcome}" if outcome else ""),
            outcome=outcome,
        )
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


def _split_coef(b: np.ndarray, design: OutcomeDesign):
    off_b, off_g = design.offsets()
    beta = tuple(b[off_b[r] : off_b[r] + design.p[r]].copy() for r in range(design.R))
    gamma = tuple(b[off_g[r] : off_g[r] + design.q[r]].copy() for r in range(design.R))
    return beta, gamma


def cm_step_regression(params: ModelParams, estep, data, method: str = "joint"):
    """Update the regression coefficients given E-step moments.

    Returns
    -------
    beta, gamma : tuple of ndarray
    """
    ds = as_dataset(data)
    est = _as_batch(estep)
    design = ds.design
    R = ds.R
    if method == "joint":
        zt = _stacked_design(ds, design)
        lam_inv = np.linalg.inv(params.Lambda)
        lam_inv = 0.5 * (lam_inv + lam_inv.T)
        wz = np.einsum("ab,nbk->nak", lam_inv, zt)
        a = np.einsum("nak,nal->kl", zt, wz)
        rhs = np.einsum("nak,na->k", wz, est.yhat)
        try:
            b = _solve_normal(a, rhs)
        except RankDeficiencyError:
            _check_rank(ds)
            raise
        return _split_coef(b, design)
    sig = params.Sigma
    beta, gamma = [], []
    for r in range(R):
        y1 = est.yhat[:, 2 * r]
        y2 = est.yhat[:, 2 * r + 1]
        x, w = ds.X[r], ds.W[r]
        if method == "per_outcome":
            si = np.linalg.inv(sig)
            pr, qr = x.shape[1], w.shape[1]
            a = np.zeros((pr + qr, pr + qr))
            a[:pr, :pr] = si[0, 0] * x.T @ x
            a[:pr, pr:] = si[0, 1] * x.T @ w
            a[pr:, :pr] = a[:pr, pr:].T
            a[pr:, pr:] = si[1, 1] * w.T @ w
            rhs = np.concatenate([x.T @ (si[0, 0] * y1 + si[0, 1] * y2), w.T @ (si[1, 0] * y1 + si[1, 1] * y2)])
            b = _solve_normal(a, rhs, outcome=r + 1)
            beta.append(b[:pr])
            gamma.append(b[pr:])
        elif method == "explicit":
            rs = params.rho * params.sigma
            beta.append(_solve_normal(x.T @ x, x.T @ (y1 - rs * y2), outcome=r + 1))
            gamma.append(_solve_normal(w.T @ w, w.T @ (y2 - params.rho / params.sigma * y1), outcome=r + 1))
        else:
            raise ValueError(f"unknown regression update {method!r}")
    return tuple(beta), tuple(gamma)


# ---------------------------------------------------------------------------
# CM-step 2
# ---------------------------------------------------------------------------


def theorem1_columns(delta_star) -> np.ndarray:
    """The ``2 x R`` matrices ``D_ij`` with ``vec(D_ij)`` the ``j``-th Cholesky column.

    Accepts one ``2R x 2R`` matrix or a stack ``(n, 2R, 2R)`` and returns
    ``(2R, 2, R)`` or ``(n, 2R, 2, R)`` respectively.  Positive semidefinite
    inputs are allowed: a vanishing pivot gives a zero column.
    """
    ds = np.asarray(delta_star, dtype=float)
    single = ds.ndim == 2
    if single:
        ds = ds[None]
    n, d, _ = ds.shape
    if d % 2:
        raise ValueError("delta_star must have even dimension")
    L = psd_cholesky(ds)
    # column j of L is vec(D_j) with column stacking: D_j[a, r] = L[2r + a, j]
    D = np.transpose(L.reshape(n, d // 2, 2, d), (0, 3, 2, 1))
    return D[0] if single else D


def _sum_dpd(D: np.ndarray, psi_inv: np.ndarray) -> np.ndarray:
    """``sum_{i,j} D_ij Psi^{-1} D_ij'``."""
    return np.einsum("njar,rs,njbs->ab", D, psi_inv, D)


def _sum_dsd(D: np.ndarray, sig_inv: np.ndarray) -> np.ndarray:
    """``sum_{i,j} D_ij' Sigma^{-1} D_ij``."""
    return np.einsum("njar,ab,njbs->rs", D, sig_inv, D)


def cm_step_covariance(params: ModelParams, columns, constraint: str = "rescale", normalize_psi: bool = True):
    """Closed-form updates of ``Sigma`` and ``Psi``.

    ``Sigma`` is updated with the current ``Psi``; ``Psi`` with the new
    ``Sigma``, so each is a conditional maximiser of the ``Q`` function.

    Returns
    -------
    sigma, rho, psi, gamma_scale
        ``gamma_scale`` is the factor the selection coefficients must be
        multiplied by to keep the likelihood unchanged under the ``Psi``
        normalisation (1 when ``normalize_psi`` is False).
    """
    D = np.asarray(columns, dtype=float)
    if D.ndim == 3:
        D = D[None]
    n = D.shape[0]
    R = D.shape[-1]
    psi_inv = np.linalg.inv(params.psi)
    sig = _sum_dpd(D, 0.5 * (psi_inv + psi_inv.T)) / (n * R)
    sig = 0.5 * (sig + sig.T)
    try:
        cholesky(sig)
    except PDViolationError as exc:
        raise CovarianceUpdateError(f"Sigma update is not positive definite: {exc}") from None
    sig_inv = np.linalg.inv(sig)
    psi = _sum_dsd(D, 0.5 * (sig_inv + sig_inv.T)) / (2 * n)
    psi = 0.5 * (psi + psi.T)
    if constraint == "rescale":
        s22 = sig[1, 1]
        sig = sig / s22
        psi = psi * s22
    elif constraint == "overwrite":
        sig = sig.copy()
        sig[1, 1] = 1.0
    else:
        raise ValueError(f"unknown constraint handling {constraint!r}")
    if not (sig[0, 0] > 0 and sig[0, 0] * sig[1, 1] - sig[0, 1] ** 2 > 0):
        raise CovarianceUpdateError("Sigma is not positive definite after the constraint reset")
    try:
        cholesky(psi)
    except PDViolationError as exc:
        raise CovarianceUpdateError(f"Psi update is not positive definite: {exc}") from None
    sigma = math.sqrt(sig[0, 0])
    rho = float(np.clip(sig[0, 1] / sigma, -RHO_BOUND, RHO_BOUND))
    scale = 1.0
    if normalize_psi:
        a = math.sqrt(np.trace(psi) / R)
        psi = psi / (a * a)
        sigma = sigma * a
        scale = 1.0 / a
    return sigma, rho, psi, scale


def q_kronecker(sigma_mat, psi, delta_stars) -> float:
    """``Q`` through the Kronecker form ``-1/2 sum tr((Psi (x) Sigma)^{-1} Delta*)`` plus log terms."""
    delta_stars = np.asarray(delta_stars, dtype=float)
    n = delta_stars.shape[0]
    R = psi.shape[0]
    lam_inv = np.linalg.inv(np.kron(psi, sigma_mat))
    tr = np.einsum("ab,nba->", lam_inv, delta_stars)
    return float(-n * np.linalg.slogdet(psi)[1] - 0.5 * n * R * np.linalg.slogdet(sigma_mat)[1] - 0.5 * tr)


def q_columns(sigma_mat, psi, columns) -> float:
    """``Q`` through the Cholesky-column form ``-1/2 sum tr(Sigma^{-1} D Psi^{-1} D')`` plus log terms."""
    D = np.asarray(columns, dtype=float)
    n = D.shape[0]
    R = psi.shape[0]
    tr = np.einsum("ab,njbr,rs,njas->", np.linalg.inv(sigma_mat), D, np.linalg.inv(psi), D)
    return float(-n * np.linalg.slogdet(psi)[1] - 0.5 * n * R * np.linalg.slogdet(sigma_mat)[1] - 0.5 * tr)


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def _probit_irls(w: np.ndarray, c: np.ndarray, max_iter: int = 100):
    """Probit maximum likelihood by Fisher scoring.  Returns ``(gamma, ok)``."""
    g = np.zeros(w.shape[1])
    for _ in range(max_iter):
        eta = w @ g
        p = np.clip(special.ndtr(eta), 1e-12, 1 - 1e-12)
        dens = np.exp(-0.5 * eta * eta) / math.sqrt(2 * math.pi)
        wt = dens * dens / (p * (1 - p))
        z = eta + (c - p) / np.maximum(dens, 1e-300)
        a = w.T @ (wt[:, None] * w)
        try:
            g_new = np.linalg.solve(a, w.T @ (wt * z))
        except np.linalg.LinAlgError:
            return g, False
        if not np.all(np.isfinite(g_new)) or np.max(np.abs(g_new)) > 30:
            return g_new, False
        if np.max(np.abs(g_new - g)) < 1e-10 * (1 + np.max(np.abs(g))):
            return g_new, True
        g = g_new
    return g, True


def _mills(a):
    return np.exp(-0.5 * a * a - special.log_ndtr(a)) / math.sqrt(2 * math.pi)


def _flipflop(mats: np.ndarray, iters: int = 50):
    """Maximum likelihood row/column covariances of centred ``2 x R`` matrices."""
    n, p, q = mats.shape
    psi = np.eye(q)
    sig = np.eye(p)
    for _ in range(iters):
        pi = np.linalg.inv(psi)
        sig = np.einsum("nar,rs,nbs->ab", mats, pi, mats) / (n * q)
        si = np.linalg.inv(sig)
        psi_new = np.einsum("nar,ab,nbs->rs", mats, si, mats) / (n * p)
        if np.max(np.abs(psi_new - psi)) < 1e-10:
            psi = psi_new
            break
        psi = psi_new
    return 0.5 * (sig + sig.T), 0.5 * (psi + psi.T)


def initialize(data, design: OutcomeDesign | None = None, seed: int = 0, warn: list | None = None) -> ModelParams:
    """Starting values.

    (i) Unobserved outcomes are replaced by the outcome's observed mean and
    the latent selection values by +1/-1 according to the indicator.
    (ii) Row and column covariances come from the matrix-normal maximum
    likelihood fit of the centred completed matrices.
    (iii) For each outcome, a probit fit gives ``gamma_r`` and least squares
    of the observed outcomes on ``x_r`` and the inverse Mills ratio gives
    ``beta_r``.

    ``seed`` is accepted for interface symmetry; the procedure is
    deterministic.  Warnings are appended to ``warn`` when given.
    """
    ds = as_dataset(data)
    if design is not None and design != ds.design:
        raise MselectError("design does not match the data")
    design = ds.design
    R = ds.R
    n = ds.n
    if warn is None:
        warn = []
    _check_rank(ds)
    comp = np.empty((n, 2, R))
    beta, gamma = [], []
    for r in range(R):
        obs = ds.C[:, r] == 1
        n_obs = int(obs.sum())
        if n_obs < design.p[r] + 1:
            raise InsufficientDataError(
                f"outcome {r + 1} is observed {n_obs} times; at least {design.p[r] + 1} needed"
            )
        comp[:, 0, r] = np.where(obs, ds.Y[:, r], np.nanmean(ds.Y[obs, r]))
        comp[:, 1, r] = np.where(obs, 1.0, -1.0)
        w = ds.W[r]
        c = ds.C[:, r].astype(float)
        g, ok = (np.zeros(w.shape[1]), False) if n_obs in (0, n) else _probit_irls(w, c)
        if not ok:
            g = np.zeros(w.shape[1])
            g[0] = 3.0 if n_obs > n / 2 else -3.0
            msg = f"probit start for outcome {r + 1} did not converge (separation); using intercept {g[0]:+.1f}"
            warn.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        gamma.append(g)
        x = ds.X[r][obs]
        lam = _mills(w[obs] @ g)
        xa = np.column_stack([x, lam])
        coef, *_ = np.linalg.lstsq(xa, ds.Y[obs, r], rcond=None)
        if np.linalg.matrix_rank(xa) < xa.shape[1]:
            coef, *_ = np.linalg.lstsq(x, ds.Y[obs, r], rcond=None)
            coef = np.append(coef, 0.0)
        beta.append(coef[: design.p[r]])
    centred = comp - comp.mean(axis=0, keepdims=True)
    sig, psi = _flipflop(centred)
    s22 = sig[1, 1]
    sig = sig / s22
    psi = psi * s22
    a = math.sqrt(np.trace(psi) / R)
    psi = psi / (a * a)
    sigma = math.sqrt(sig[0, 0]) * a
    rho = float(np.clip(sig[0, 1] / math.sqrt(sig[0, 0]), -0.95, 0.95))
    return ModelParams(tuple(beta), tuple(gamma), sigma, rho, psi)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _iterate(params: ModelParams, estep: EStepBatch, ds: Dataset, config: FitConfig):
    """One CM cycle.  Returns new params and a diagnostics dict."""
    beta, gamma = cm_step_regression(params, estep, ds, method=config.regression)
    mid = params.replace(beta=beta, gamma=gamma)
    dstar = delta_star_batch(mid, estep, ds)
    cols = theorem1_columns(dstar)
    sigma, rho, psi, scale = cm_step_covariance(
        mid, cols, constraint=config.constraint, normalize_psi=config.normalize_psi
    )
    new = mid.replace(sigma=sigma, rho=rho, psi=psi, gamma=tuple(g * scale for g in gamma))
    diag = {}
    if config.record_q:
        eig = np.linalg.eigvalsh(dstar)
        diag["min_eig_delta"] = float(eig.min())
        # both forms at the old and at the updated covariances
        diag["q_kron_old"] = q_kronecker(mid.Sigma, mid.psi, dstar)
        diag["q_col_old"] = q_columns(mid.Sigma, mid.psi, cols)
        diag["q_kron_new"] = q_kronecker(new.Sigma, new.psi, dstar)
        diag["q_col_new"] = q_columns(new.Sigma, new.psi, cols)
    return new, diag


def fit(data, design: OutcomeDesign | None = None, config: FitConfig | None = None, init: ModelParams | None = None) -> FitResult:
    """Maximum likelihood fit by ECM.

    Stops when ``|l_new / l_old - 1| < config.tol`` (converged) or after
    ``config.max_iter`` iterations.  A decrease of the log-likelihood beyond
    ``config.monotonicity_slack`` triggers one re-evaluation with a tenth of
    the rectangle tolerance; if the decrease persists the fit stops, keeps the
    last accepted parameters and reports ``converged=False``.
    """
    config = config or FitConfig()
    ds = as_dataset(data)
    if design is not None and design != ds.design:
        raise MselectError("design does not match the data")
    warn_list: list = []
    if init is None:
        params = initialize(ds, ds.design, config.seed, warn=warn_list)
    else:
        check_params_design(init, ds.design)
        params = init
    _check_rank(ds)
    start = params
    rect_tol = config.rect_tol
    try:
        estep = e_step_batch(params, ds, rect_tol, config.seed)
    except MselectError as exc:
        raise FitError(f"E-step failed at the starting values: {exc}", iteration=0) from exc
    ll_old = estep.total
    ll0 = ll_old
    trace: list = []
    diags: list = []
    converged = False
    n_low = 0
    for it in range(1, int(config.max_iter) + 1):
        try:
            new, diag = _iterate(params, estep, ds, config)
            est_new = e_step_batch(new, ds, rect_tol, config.seed)
        except MselectError as exc:
            raise FitError(f"iteration {it}: {exc}", iteration=it) from exc
        ll_new = est_new.total
        if ll_new < ll_old - config.monotonicity_slack:
            # retry with tighter integration before giving up
            tight = rect_tol / 10.0
            est_old = e_step_batch(params, ds, tight, config.seed)
            est_new = e_step_batch(new, ds, tight, config.seed)
            if est_new.total < est_old.total - config.monotonicity_slack:
                msg = (
                    f"log-likelihood decreased at iteration {it} "
                    f"({est_old.total:.10g} -> {est_new.total:.10g}); stopping"
                )
                warn_list.append(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                break
            rect_tol = tight
            ll_old = est_old.total
            ll_new = est_new.total
        n_low = int(est_new.low_mass.sum())
        diag.update(iteration=it, loglik=ll_new, low_mass=n_low)
        diags.append(diag)
        trace.append(ll_new)
        params, estep = new, est_new
        rel = abs(ll_new / ll_old - 1.0) if ll_old != 0 else abs(ll_new - ll_old)
        ll_old = ll_new
        if rel < config.tol:
            converged = True
            break
    if n_low:
        warn_list.append(f"{n_low} records have rectangle probability below {LOW_MASS:g}")
    if not converged and len(trace) >= int(config.max_iter):
        warn_list.append(f"no convergence after {config.max_iter} iterations")
    return FitResult(
        params=params,
        loglik_trace=np.asarray(trace, dtype=float),
        iterations=len(trace),
        converged=converged,
        warnings=tuple(warn_list),
        initial_loglik=ll0,
        initial_params=start,
        diagnostics=tuple(diags),
    )
