"""Dense linear algebra and Gaussian kernels.

Everything in the estimator bottoms out here: column-stacking ``vec``,
Kronecker products, a jittered Cholesky, normal and matrix-normal log
densities, and probabilities of multivariate normal rectangles.

Rectangle probabilities are dispatched on the effective dimension (after
dropping coordinates that are unrestricted on both sides):

* ``d == 1``: closed form with tail-stable differences.
* ``d == 2``: Genz's double-precision version of the Drezner-Wesolowsky
  algorithm.
* ``d == 3``: Plackett's identity, integrating the correlation derivative
  along a path from a partially independent matrix with Gauss-Legendre
  rules; tiny probabilities fall back on direct conditional integration.
* ``d >= 4``: separation of variables with Genz-Bretz variable
  prioritisation, evaluated with randomly scrambled Sobol points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.stats import qmc

from .errors import DimensionError, PDViolationError

__all__ = [
    "RectProbResult",
    "vec",
    "unvec",
    "kron",
    "cholesky",
    "psd_cholesky",
    "mvn_logpdf",
    "matnorm_logpdf",
    "norm_cdf",
    "bvn_cdf",
    "tvn_cdf",
    "mvn_rect_prob",
    "rect_prob_batch",
]

LOG_2PI = math.log(2.0 * math.pi)
_TWOPI = 2.0 * math.pi

_GL20_X, _GL20_W = np.polynomial.legendre.leggauss(20)


@lru_cache(maxsize=16)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class RectProbResult:
    probability: float
    error_estimate: float
    evaluations: int


# ---------------------------------------------------------------------------
# vec / Kronecker / Cholesky
# ---------------------------------------------------------------------------


def vec(m) -> np.ndarray:
    """Stack the columns of ``m`` into a single vector."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return m.reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise DimensionError(f"cannot reshape length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def kron(a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return np.kron(a, b)


def _check_square(a: np.ndarray, what: str = "matrix") -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {a.shape}")


def cholesky(a, jitter: bool = True) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    A failed factorisation is retried once with ``1e-10 * trace / dim`` added
    to the diagonal before :class:`PDViolationError` is raised.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    _check_square(a)
    if not np.all(np.isfinite(a)):
        raise PDViolationError("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), 1e-300)
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise PDViolationError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        if not jitter:
            raise PDViolationError("matrix is not positive definite") from None
    dim = a.shape[0]
    bump = 1e-10 * np.trace(a) / dim
    if not bump > 0:
        raise PDViolationError("matrix is not positive definite")
    try:
        return np.linalg.cholesky(a + bump * np.eye(dim))
    except np.linalg.LinAlgError:
        raise PDViolationError("matrix is not positive definite (after jitter)") from None


def psd_cholesky(a, rtol: float = 1e-12) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a`` for positive semidefinite ``a``.

    Works on a single matrix or a stack ``(..., d, d)``.  A pivot below
    ``rtol`` times the largest diagonal entry zeroes its column, which is exact
    in exact arithmetic because a zero pivot of a PSD matrix forces a zero
    column below it.
    """
    a = np.asarray(a, dtype=float)
    single = a.ndim == 2
    if single:
        a = a[None]
    d = a.shape[-1]
    L = np.zeros_like(a)
    thresh = rtol * np.maximum(np.max(np.abs(np.diagonal(a, axis1=-2, axis2=-1)), axis=-1), 1e-300)
    for j in range(d):
        piv = a[:, j, j] - np.einsum("nk,nk->n", L[:, j, :j], L[:, j, :j])
        ok = piv > thresh
        if np.any(piv < -1e3 * thresh):
            raise PDViolationError("matrix is not positive semidefinite")
        root = np.sqrt(np.where(ok, piv, 1.0))
        L[:, j, j] = np.where(ok, root, 0.0)
        if j + 1 < d:
            col = a[:, j + 1 :, j] - np.einsum("nik,nk->ni", L[:, j + 1 :, :j], L[:, j, :j])
            L[:, j + 1 :, j] = np.where(ok[:, None], col / root[:, None], 0.0)
    return L[0] if single else L


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def mvn_logpdf(x, mean, cov) -> float:
    """Log density of ``N(mean, cov)`` at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if x.shape != mean.shape or cov.shape != (x.size, x.size):
        raise DimensionError("dimension mismatch in mvn_logpdf")
    L = cholesky(cov)
    z = np.linalg.solve(L, x - mean)
    return float(-0.5 * x.size * LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * z @ z)


def matnorm_logpdf(y, m, sigma, psi) -> float:
    """Log density of the ``p x q`` matrix normal ``N(m, sigma, psi)`` at ``y``.

    ``sigma`` is the row (``p x p``) and ``psi`` the column (``q x q``)
    covariance, so that ``vec(y) ~ N(vec(m), psi (x) sigma)``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    m = np.atleast_2d(np.asarray(m, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    p, q = y.shape
    if m.shape != (p, q) or sigma.shape != (p, p) or psi.shape != (q, q):
        raise DimensionError("dimension mismatch in matnorm_logpdf")
    ls = cholesky(sigma)
    lp = cholesky(psi)
    # whitened residual ls^-1 (y - m) lp^-T
    w = np.linalg.solve(ls, y - m)
    w = np.linalg.solve(lp, w.T).T
    logdet_s = 2.0 * np.sum(np.log(np.diag(ls)))
    logdet_p = 2.0 * np.sum(np.log(np.diag(lp)))
    return float(-0.5 * p * q * LOG_2PI - 0.5 * p * logdet_p - 0.5 * q * logdet_s - 0.5 * np.sum(w * w))


def norm_cdf(x):
    return special.ndtr(x)


def _norm_interval(a, b):
    """P(a < Z < b) for standard normal Z without upper-tail cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = a > 0
    p = np.where(upper, special.ndtr(-a) - special.ndtr(-b), special.ndtr(b) - special.ndtr(a))
    return np.clip(p, 0.0, 1.0)


# ---------------------------------------------------------------------------
# bivariate normal
# ---------------------------------------------------------------------------


def _bvnu(dh, dk, r):
    """P(X > dh, Y > dk) for standard bivariate normal with correlation r.

    Vectorised transcription of Genz's ``bvnu`` (Drezner & Wesolowsky 1989
    with double precision modifications), using the 20 point rule for every
    correlation.
    """
    h, k, r = np.broadcast_arrays(
        np.asarray(dh, dtype=float), np.asarray(dk, dtype=float), np.asarray(r, dtype=float)
    )
    shape = h.shape
    h = h.ravel().copy()
    k = k.ravel().copy()
    r = np.clip(r.ravel().copy(), -1.0, 1.0)
    out = np.zeros(h.size)

    hinf_pos = np.isposinf(h) | np.isposinf(k)
    h_neg = np.isneginf(h)
    k_neg = np.isneginf(k)
    out[h_neg & k_neg] = 1.0
    m = h_neg & ~k_neg & ~hinf_pos
    out[m] = special.ndtr(-k[m])
    m = k_neg & ~h_neg & ~hinf_pos
    out[m] = special.ndtr(-h[m])
    out[hinf_pos] = 0.0

    fin = np.isfinite(h) & np.isfinite(k)
    ones = fin & (r >= 1.0)
    out[ones] = special.ndtr(-np.maximum(h[ones], k[ones]))
    mones = fin & (r <= -1.0)
    out[mones] = np.maximum(0.0, special.ndtr(-h[mones]) - special.ndtr(k[mones]))

    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        small = fin & (np.abs(r) < 0.925)
        if np.any(small):
            hh, kk, rr = h[small], k[small], r[small]
            hk = hh * kk
            hs = 0.5 * (hh * hh + kk * kk)
            asr = np.arcsin(rr)
            sn = np.sin(asr[:, None] * (1.0 + _GL20_X[None, :]) / 2.0)
            val = np.sum(_GL20_W * np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn)), axis=1)
            out[small] = val * asr / (2.0 * _TWOPI) + special.ndtr(-hh) * special.ndtr(-kk)

        big = fin & (np.abs(r) >= 0.925) & (np.abs(r) < 1.0)
        if np.any(big):
            hh, kk, rr = h[big], k[big].copy(), r[big]
            neg = rr < 0
            kk[neg] = -kk[neg]
            hk = hh * kk
            as_ = (1.0 - rr) * (1.0 + rr)
            a = np.sqrt(as_)
            bs = (hh - kk) ** 2
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 16.0
            asr = -(bs / as_ + hk) / 2.0
            bvn = np.where(
                asr > -100.0,
                a * np.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0),
                0.0,
            )
            b = np.sqrt(bs)
            sp = math.sqrt(_TWOPI) * special.ndtr(-b / a)
            bvn = bvn - np.where(
                hk > -100.0, np.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0), 0.0
            )
            a2 = a / 2.0
            xs = (a2[:, None] * (1.0 + _GL20_X[None, :])) ** 2
            rs = np.sqrt(1.0 - xs)
            asr2 = -(bs[:, None] / xs + hk[:, None]) / 2.0
            sp2 = 1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs)
            ep = np.exp(-hk[:, None] * xs / (2.0 * (1.0 + rs) ** 2)) / rs
            term = np.where(asr2 > -100.0, a2[:, None] * _GL20_W[None, :] * np.exp(asr2) * (ep - sp2), 0.0)
            bvn = -(bvn + np.sum(term, axis=1)) / _TWOPI
            res = np.empty_like(bvn)
            pos = ~neg
            res[pos] = bvn[pos] + special.ndtr(-np.maximum(hh[pos], kk[pos]))
            hn, kn, bn = hh[neg], kk[neg], bvn[neg]
            lower = np.where(hn < 0, special.ndtr(kn) - special.ndtr(hn), special.ndtr(-hn) - special.ndtr(-kn))
            res[neg] = np.where(hn >= kn, -bn, lower - bn)
            out[big] = res

    out = np.clip(out, 0.0, 1.0).reshape(shape)
    return float(out) if out.ndim == 0 else out


def bvn_cdf(h, k, r):
    """P(X < h, Y < k) for a standard bivariate normal with correlation ``r``."""
    return _bvnu(-np.asarray(h, dtype=float), -np.asarray(k, dtype=float), r)


def _phi2(x, y, r):
    det = 1.0 - r * r
    return np.exp(-(x * x - 2.0 * r * x * y + y * y) / (2.0 * det)) / (_TWOPI * np.sqrt(det))


# ---------------------------------------------------------------------------
# trivariate normal
# ---------------------------------------------------------------------------


def _tvn_plackett(h, r12, r13, r23, nodes):
    """Trivariate CDF through Plackett's identity.

    Integrates d/dt P(X < h | R(t)) where R(t) scales r12 and r13 by t;
    R(t) is a convex combination of two PD matrices, so the integrand is
    smooth on [0, 1].
    """
    x, w = _gauss_legendre(nodes)
    t = 0.5 * (x + 1.0)
    w = 0.5 * w
    h1, h2, h3 = h[:, 0:1], h[:, 1:2], h[:, 2:3]
    a12 = r12[:, None] * t[None, :]
    a13 = r13[:, None] * t[None, :]
    b23 = r23[:, None]
    with np.errstate(divide="ignore", invalid="ignore", under="ignore", over="ignore"):
        # X3 | X1 = h1, X2 = h2
        den = 1.0 - a12 * a12
        c1 = (a13 - b23 * a12) / den
        c2 = (b23 - a13 * a12) / den
        v3 = np.maximum(1.0 - c1 * a13 - c2 * b23, 1e-300)
        u3 = (h3 - c1 * h1 - c2 * h2) / np.sqrt(v3)
        # X2 | X1 = h1, X3 = h3
        den = 1.0 - a13 * a13
        c1 = (a12 - b23 * a13) / den
        c3 = (b23 - a12 * a13) / den
        v2 = np.maximum(1.0 - c1 * a12 - c3 * b23, 1e-300)
        u2 = (h2 - c1 * h1 - c3 * h3) / np.sqrt(v2)
        f = r12[:, None] * _phi2(h1, h2, a12) * special.ndtr(u3) + r13[:, None] * _phi2(h1, h3, a13) * special.ndtr(u2)
        f = np.where(np.isfinite(f), f, 0.0)
    base = special.ndtr(h[:, 0]) * bvn_cdf(h[:, 1], h[:, 2], r23)
    return base + f @ w


def _tvn_conditional(h, r12, r13, r23):
    """Trivariate CDF by integrating over the first coordinate.

    The integrand is non-negative, so this keeps relative accuracy for tiny
    probabilities where Plackett's signed correction may cancel.
    """
    h1 = h[:, 0]
    s2 = np.sqrt(np.maximum(1.0 - r12 * r12, 1e-300))
    s3 = np.sqrt(np.maximum(1.0 - r13 * r13, 1e-300))
    r23c = np.clip((r23 - r12 * r13) / (s2 * s3), -1.0, 1.0)
    lo = np.where(h1 > -4.0, -10.0, np.minimum(-10.0, h1 - 40.0 / np.maximum(np.abs(h1), 4.0)))
    hi = np.minimum(h1, 10.0)
    width = np.maximum(hi - lo, 0.0)
    slope = np.maximum(np.abs(r12) / s2, np.abs(r13) / s3)
    npan = int(np.clip(np.ceil(np.max(width * np.maximum(1.0, slope)) / 1.0), 1, 2000))
    edges = np.linspace(0.0, 1.0, npan + 1)
    u = (edges[:-1, None] + (edges[1:, None] - edges[:-1, None]) * 0.5 * (_GL20_X[None, :] + 1.0)).ravel()
    wu = np.repeat(np.diff(edges), _GL20_X.size) * np.tile(0.5 * _GL20_W, npan)
    t = lo[:, None] + width[:, None] * u[None, :]
    dens = np.exp(-0.5 * t * t) / math.sqrt(_TWOPI)
    inner = bvn_cdf(
        (h[:, 1:2] - r12[:, None] * t) / s2[:, None],
        (h[:, 2:3] - r13[:, None] * t) / s3[:, None],
        np.broadcast_to(r23c[:, None], t.shape),
    )
    return width * ((dens * inner) @ wu)


def tvn_cdf(h, corr):
    """P(X < h) for a standard trivariate normal with correlation ``corr``.

    ``h`` has shape ``(n, 3)`` (or ``(3,)``) and ``corr`` ``(n, 3, 3)`` or
    ``(3, 3)``.  Returns ``(probabilities, error_estimates)``.
    """
    h = np.asarray(h, dtype=float)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    n = h.shape[0]
    corr = np.broadcast_to(np.asarray(corr, dtype=float), (n, 3, 3))
    prob = np.zeros(n)
    err = np.zeros(n)

    neg = np.any(np.isneginf(h), axis=1)
    posinf = np.isposinf(h)
    # one or more coordinates unrestricted: reduce dimension
    red = ~neg & np.any(posinf, axis=1)
    for idx in np.flatnonzero(red):
        keep = ~posinf[idx]
        hk = h[idx, keep]
        if hk.size == 0:
            prob[idx] = 1.0
        elif hk.size == 1:
            prob[idx] = special.ndtr(hk[0])
        else:
            ck = corr[idx][np.ix_(keep, keep)]
            prob[idx] = bvn_cdf(hk[0], hk[1], ck[0, 1])
    full = ~neg & ~red
    if np.any(full):
        hf = h[full]
        cf = corr[full]
        # put the largest |r| in the (2, 3) slot
        pairs = np.stack([np.abs(cf[:, 1, 2]), np.abs(cf[:, 0, 2]), np.abs(cf[:, 0, 1])], axis=1)
        first = np.argmax(pairs, axis=1)  # index of the variable left out of the strongest pair
        order = np.stack([first, (first + 1) % 3, (first + 2) % 3], axis=1)
        rows = np.arange(hf.shape[0])
        hh = hf[rows[:, None], order]
        r12 = cf[rows, order[:, 0], order[:, 1]]
        r13 = cf[rows, order[:, 0], order[:, 2]]
        r23 = cf[rows, order[:, 1], order[:, 2]]
        p1 = _tvn_plackett(hh, r12, r13, r23, 24)
        p2 = _tvn_plackett(hh, r12, r13, r23, 48)
        e = np.abs(p2 - p1)
        bad = (e > 1e-13) | (p2 < 1e-7)
        if np.any(bad):
            # integrate over the most restrictive coordinate
            hb, cb = hf[bad], cf[bad]
            lead = np.argmin(hb, axis=1)
            o2 = np.stack([lead, (lead + 1) % 3, (lead + 2) % 3], axis=1)
            rb = np.arange(hb.shape[0])
            p2[bad] = _tvn_conditional(
                hb[rb[:, None], o2],
                cb[rb, o2[:, 0], o2[:, 1]],
                cb[rb, o2[:, 0], o2[:, 2]],
                cb[rb, o2[:, 1], o2[:, 2]],
            )
            e[bad] = np.maximum(1e-15, 1e-12 * p2[bad])
        prob[full] = p2
        err[full] = e + 1e-15
    prob = np.clip(prob, 0.0, 1.0)
    if single:
        return float(prob[0]), float(err[0])
    return prob, err


# ---------------------------------------------------------------------------
# general dimension: randomised QMC separation of variables
# ---------------------------------------------------------------------------


def _prioritised_cholesky(corr, a, b):
    """Genz-Bretz reordering: at each step pick the most restrictive variable."""
    d = a.size
    cov = corr.copy()
    a = a.copy()
    b = b.copy()
    c = np.zeros((d, d))
    y = np.zeros(d)
    for i in range(d):
        best, best_p = i, np.inf
        for j in range(i, d):
            s = c[j, :i] @ y[:i]
            v = cov[j, j] - c[j, :i] @ c[j, :i]
            sd = math.sqrt(max(v, 1e-300))
            p = float(_norm_interval((a[j] - s) / sd, (b[j] - s) / sd))
            if p < best_p:
                best, best_p = j, p
        if best != i:
            cov[[i, best], :] = cov[[best, i], :]
            cov[:, [i, best]] = cov[:, [best, i]]
            c[[i, best], :] = c[[best, i], :]
            a[[i, best]] = a[[best, i]]
            b[[i, best]] = b[[best, i]]
        v = cov[i, i] - c[i, :i] @ c[i, :i]
        if v <= 0:
            raise PDViolationError("covariance is not positive definite")
        c[i, i] = math.sqrt(v)
        for j in range(i + 1, d):
            c[j, i] = (cov[j, i] - c[j, :i] @ c[i, :i]) / c[i, i]
        s = c[i, :i] @ y[:i]
        lo = (a[i] - s) / c[i, i]
        hi = (b[i] - s) / c[i, i]
        mass = float(_norm_interval(lo, hi))
        if mass > 1e-300:
            y[i] = (math.exp(-0.5 * lo * lo) * (lo > -np.inf) - math.exp(-0.5 * hi * hi) * (hi < np.inf)) / (
                math.sqrt(_TWOPI) * mass
            )
        else:
            y[i] = lo if np.isfinite(lo) else hi
    return c, a, b


def _sov_integrand(w, c, a, b):
    n = w.shape[0]
    d = a.size
    y = np.zeros((n, d))
    f = np.full(n, float(_norm_interval(a[0] / c[0, 0], b[0] / c[0, 0])))
    lo = np.full(n, special.ndtr(a[0] / c[0, 0]))
    width = f.copy()
    for i in range(1, d):
        u = np.clip(lo + w[:, i - 1] * width, 1e-16, 1.0 - 1e-16)
        y[:, i - 1] = special.ndtri(u)
        s = y[:, :i] @ c[i, :i]
        lo = special.ndtr((a[i] - s) / c[i, i])
        width = _norm_interval((a[i] - s) / c[i, i], (b[i] - s) / c[i, i])
        f = f * width
    return f


def _qmc_rect_prob(a, b, corr, tol, seed, max_evals, n_shifts=8):
    c, a, b = _prioritised_cholesky(corr, a, b)
    d = a.size
    rng = np.random.default_rng(seed)
    m = 9
    evals = 0
    while True:
        n = 2**m
        est = np.empty(n_shifts)
        for s in range(n_shifts):
            w = qmc.Sobol(d - 1, scramble=True, seed=rng).random(n)
            est[s] = 0.5 * (np.mean(_sov_integrand(w, c, a, b)) + np.mean(_sov_integrand(1.0 - w, c, a, b)))
        evals += 2 * n * n_shifts
        p = float(np.mean(est))
        err = 3.0 * float(np.std(est, ddof=1)) / math.sqrt(n_shifts)
        if err <= tol or evals >= max_evals:
            return p, err, evals
        m += 1
        if evals + 2 * (2**m) * n_shifts > max_evals:
            # last round at whatever size still fits under the cap
            while m > 9 and evals + 2 * (2**m) * n_shifts > max_evals:
                m -= 1
            if evals + 2 * (2**m) * n_shifts > max_evals:
                return p, err, evals


# ---------------------------------------------------------------------------
# rectangle probabilities
# ---------------------------------------------------------------------------


def _orthant_cdf(u, corr):
    """P(X < u) for standard normal X with correlation ``corr`` (d <= 3)."""
    n, d = u.shape
    if d == 0:
        return np.ones(n), np.zeros(n)
    if d == 1:
        return special.ndtr(u[:, 0]), np.zeros(n)
    if d == 2:
        return bvn_cdf(u[:, 0], u[:, 1], corr[:, 0, 1]), np.full(n, 1e-15)
    return tvn_cdf(u, corr)


def rect_prob_batch(lower, upper, cov, tol: float = 1e-6, seeds=None, max_evals: int = 10**6):
    """Zero-mean rectangle probabilities for a batch of problems.

    Parameters
    ----------
    lower, upper : ndarray, shape (n, d)
        Bounds; ``-inf`` / ``inf`` allowed.
    cov : ndarray, shape (d, d) or (n, d, d)
    seeds : sequence of int, optional
        Per-problem seeds, only consulted when the effective dimension is
        four or more.

    Returns
    -------
    prob, err, evals : ndarray, shape (n,)
    """
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    n, d = lower.shape
    if upper.shape != (n, d):
        raise DimensionError("lower and upper bounds differ in shape")
    cov = np.broadcast_to(np.asarray(cov, dtype=float), (n, d, d))
    prob = np.ones(n)
    err = np.zeros(n)
    evals = np.zeros(n, dtype=np.int64)
    if n == 0:
        return prob, err, evals
    if d == 0:
        return prob, err, evals
    sd = np.sqrt(np.diagonal(cov, axis1=1, axis2=2))
    if np.any(~(sd > 0)):
        raise PDViolationError("covariance has a non-positive diagonal entry")
    corr = cov / (sd[:, :, None] * sd[:, None, :])
    a = lower / sd
    b = upper / sd

    empty = np.any(~(a < b), axis=1)
    prob[empty] = 0.0
    fa = np.isfinite(a)
    fb = np.isfinite(b)
    # 0 unrestricted, 1 upper only, 2 lower only, 3 both finite
    code = np.where(fa, 2, 0) + np.where(fb, 1, 0)
    code[empty] = -1
    live = ~empty
    if not np.any(live):
        return prob, err, evals
    keys, inverse = np.unique(code[live], axis=0, return_inverse=True)
    live_idx = np.flatnonzero(live)
    for g, key in enumerate(keys):
        idx = live_idx[np.asarray(inverse).ravel() == g]
        keep = np.flatnonzero(key != 0)
        de = keep.size
        if de == 0:
            prob[idx] = 1.0
            continue
        ck = corr[idx][:, keep][:, :, keep]
        ak = a[idx][:, keep]
        bk = b[idx][:, keep]
        kk = key[keep]
        if de == 1:
            prob[idx] = _norm_interval(ak[:, 0], bk[:, 0])
            continue
        if de >= 4:
            for j, i in enumerate(idx):
                seed = 0 if seeds is None else int(seeds[i])
                p, e, ne = _qmc_rect_prob(ak[j], bk[j], ck[j], tol, seed, max_evals)
                prob[i], err[i], evals[i] = p, e, ne
            continue
        # flip coordinates bounded only from below
        sign = np.where(kk == 2, -1.0, 1.0)
        cs = ck * sign[None, :, None] * sign[None, None, :]
        up = np.where(kk == 2, -ak, bk)
        lo = np.where(kk == 3, ak, -np.inf)
        both = np.flatnonzero(kk == 3)
        total = np.zeros(idx.size)
        tot_err = np.zeros(idx.size)
        for mask in range(1 << both.size):
            u = up.copy()
            flips = 0
            for bit, j in enumerate(both):
                if mask >> bit & 1:
                    u[:, j] = lo[:, j]
                    flips += 1
            p, e = _orthant_cdf(u, cs)
            total += (-1) ** flips * p
            tot_err += e
        prob[idx] = np.clip(total, 0.0, 1.0)
        err[idx] = tot_err
        evals[idx] = 48 * (1 << both.size) if de == 3 else (1 << both.size)
    return prob, err, evals


def mvn_rect_prob(lower, upper, mu, cov, tol: float = 1e-6, seed: int = 0, max_evals: int = 10**6) -> RectProbResult:
    """P(lower < Y < upper) for ``Y ~ N(mu, cov)``.

    Exact to double precision for one and two dimensions and to about
    ``1e-13`` in three; from four dimensions a seeded randomised quasi-Monte
    Carlo rule runs until the error estimate drops below ``tol`` or
    ``max_evals`` integrand evaluations have been spent.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mu.size
    if lower.shape != (d,) or upper.shape != (d,) or cov.shape != (d, d):
        raise DimensionError("dimension mismatch in mvn_rect_prob")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    cholesky(cov)
    p, e, ne = rect_prob_batch((lower - mu)[None], (upper - mu)[None], cov, tol=tol, seeds=[seed], max_evals=max_evals)
    return RectProbResult(float(p[0]), float(e[0]), int(ne[0]))
