import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from mselect import matcore
from mselect.errors import DimensionError, PDViolationError


def random_spd(rng, d, ridge=0.3):
    a = rng.normal(size=(d, d))
    return a @ a.T + ridge * np.eye(d)


def test_vec_unvec_roundtrip(rng):
    m = rng.normal(size=(2, 5))
    v = matcore.vec(m)
    assert np.array_equal(v[:2], m[:, 0])
    assert np.array_equal(matcore.unvec(v, 2, 5), m)
    with pytest.raises(DimensionError):
        matcore.unvec(v, 3, 3)


def test_vec_kron_identity(rng):
    # vec(A X B) = (B^T kron A) vec(X)
    a, x, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 3)), rng.normal(size=(3, 4))
    lhs = matcore.vec(a @ x @ b)
    rhs = matcore.kron(b.T, a) @ matcore.vec(x)
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_cholesky_rejects_bad_input():
    with pytest.raises(PDViolationError):
        matcore.cholesky(np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(PDViolationError):
        matcore.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(DimensionError):
        matcore.cholesky(np.ones((2, 3)))


def test_cholesky_jitter_rescues_singular():
    a = np.ones((2, 2))
    L = matcore.cholesky(a)
    assert np.allclose(L @ L.T, a, atol=1e-8)
    with pytest.raises(PDViolationError):
        matcore.cholesky(a, jitter=False)


def test_psd_cholesky_rank_deficient(rng):
    b = rng.normal(size=(4, 2))
    a = b @ b.T
    L = matcore.psd_cholesky(a)
    assert np.allclose(L @ L.T, a, atol=1e-12)
    assert np.allclose(np.triu(L, 1), 0.0)
    stack = np.stack([a, random_spd(rng, 4)])
    Ls = matcore.psd_cholesky(stack)
    assert np.allclose(Ls @ np.swapaxes(Ls, 1, 2), stack, atol=1e-12)


def test_mvn_logpdf_matches_scipy(rng):
    cov = random_spd(rng, 3)
    x, mu = rng.normal(size=3), rng.normal(size=3)
    assert matcore.mvn_logpdf(x, mu, cov) == pytest.approx(stats.multivariate_normal(mu, cov).logpdf(x), abs=1e-12)


def test_matnorm_logpdf_equals_vec_form(rng):
    sigma, psi = random_spd(rng, 2), random_spd(rng, 3)
    y, m = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    ref = stats.multivariate_normal(matcore.vec(m), np.kron(psi, sigma)).logpdf(matcore.vec(y))
    assert matcore.matnorm_logpdf(y, m, sigma, psi) == pytest.approx(ref, abs=1e-10)


def test_bivariate_orthant_closed_form():
    for r in (-0.95, -0.3, 0.0, 0.6, 0.99):
        exact = 0.25 + math.asin(r) / (2 * math.pi)
        assert matcore.bvn_cdf(0.0, 0.0, r) == pytest.approx(exact, abs=1e-15)


def test_bvn_against_quadrature(rng):
    for _ in range(10):
        h, k = rng.normal(size=2) * 1.5
        r = rng.uniform(-0.95, 0.95)
        # P(X < h, Y < k) = int_{-inf}^h phi(x) Phi((k - r x) / sqrt(1 - r^2)) dx
        ref, _ = integrate.quad(
            lambda x: stats.norm.pdf(x) * stats.norm.cdf((k - r * x) / math.sqrt(1 - r * r)), -np.inf, h, epsabs=1e-14
        )
        assert matcore.bvn_cdf(h, k, r) == pytest.approx(ref, abs=1e-12)


def test_tvn_against_quadrature(rng):
    for _ in range(6):
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 0.2 * np.eye(3)
        sd = np.sqrt(np.diag(cov))
        corr = cov / np.outer(sd, sd)
        h = rng.normal(size=3)

        def inner(x):
            # condition on the first coordinate and use the bivariate routine
            c = corr[1:, 0]
            v = corr[1:, 1:] - np.outer(c, c)
            s = np.sqrt(np.diag(v))
            u = (h[1:] - c * x) / s
            return stats.norm.pdf(x) * matcore.bvn_cdf(u[0], u[1], v[0, 1] / (s[0] * s[1]))

        ref, _ = integrate.quad(inner, -np.inf, h[0], epsabs=1e-13)
        p, err = matcore.tvn_cdf(h, corr)
        assert p == pytest.approx(ref, abs=1e-10)
        assert err < 1e-6


def test_rect_prob_independent_product(rng):
    lower = np.array([-1.0, -np.inf, 0.3, -0.5, -2.0])
    upper = np.array([0.5, 0.2, np.inf, 1.5, 0.0])
    ref = np.prod(stats.norm.cdf(upper) - stats.norm.cdf(lower))
    res = matcore.mvn_rect_prob(lower, upper, np.zeros(5), np.eye(5), tol=1e-8)
    assert res.probability == pytest.approx(ref, abs=1e-8)


def test_qmc_agrees_with_scipy(rng):
    cov = random_spd(rng, 5, ridge=1.0)
    upper = rng.normal(size=5) + 1.0
    res = matcore.mvn_rect_prob(np.full(5, -np.inf), upper, np.zeros(5), cov, tol=1e-6, seed=3)
    ref = stats.multivariate_normal(np.zeros(5), cov).cdf(upper)
    assert res.probability == pytest.approx(ref, abs=5e-5)
    assert res.error_estimate < 1e-5
    assert res.evaluations > 0


def test_qmc_deterministic_given_seed(rng):
    cov = random_spd(rng, 4)
    lo, hi = -np.ones(4), np.ones(4)
    a = matcore.mvn_rect_prob(lo, hi, np.zeros(4), cov, seed=11)
    b = matcore.mvn_rect_prob(lo, hi, np.zeros(4), cov, seed=11)
    assert a == b


def test_rect_prob_validation():
    with pytest.raises(ValueError):
        matcore.mvn_rect_prob([1.0], [0.0], [0.0], [[1.0]])
    with pytest.raises(DimensionError):
        matcore.mvn_rect_prob([0.0, 0.0], [1.0], [0.0], [[1.0]])
    with pytest.raises(ValueError):
        matcore.mvn_rect_prob([0.0], [1.0], [0.0], [[1.0]], tol=0.0)


def test_empty_or_full_rectangle():
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    full = matcore.mvn_rect_prob([-np.inf, -np.inf], [np.inf, np.inf], [0.0, 1.0], cov)
    assert full.probability == pytest.approx(1.0, abs=1e-15)
    empty = matcore.mvn_rect_prob([0.0, 0.0], [0.0, 1.0], [0.0, 1.0], cov)
    assert empty.probability == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    h=st.floats(-4, 4),
    k=st.floats(-4, 4),
    r=st.floats(-0.99, 0.99),
)
def test_bvn_symmetry_and_bounds(h, k, r):
    p = matcore.bvn_cdf(h, k, r)
    assert 0.0 <= p <= min(stats.norm.cdf(h), stats.norm.cdf(k)) + 1e-14
    assert p == pytest.approx(matcore.bvn_cdf(k, h, r), abs=1e-14)
    # P(X < h, Y < k) + P(X < h, Y > k) = Phi(h)
    assert p + matcore.bvn_cdf(h, -k, -r) == pytest.approx(stats.norm.cdf(h), abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_tvn_complement_identity(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3))
    cov = a @ a.T + 0.3 * np.eye(3)
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    h = rng.normal(size=3)
    # flipping the last coordinate splits P(X1<h1, X2<h2)
    flip = np.diag([1.0, 1.0, -1.0])
    p1, _ = matcore.tvn_cdf(h, corr)
    p2, _ = matcore.tvn_cdf(h * np.array([1, 1, -1]), flip @ corr @ flip)
    assert p1 + p2 == pytest.approx(matcore.bvn_cdf(h[0], h[1], corr[0, 1]), abs=1e-12)
