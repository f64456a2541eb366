import numpy as np
import pytest
from scipy import stats

from conftest import draw_records, random_params
from mselect import sun
from mselect.errors import DimensionError
from mselect.model import ObservationRecord


def test_inverse_mills_stable_in_tail():
    a = np.array([-40.0, -5.0, 0.0, 3.0])
    got = sun.inverse_mills(a)
    assert np.allclose(got[1:], stats.norm.pdf(a[1:]) / stats.norm.cdf(a[1:]), rtol=1e-12)
    # lambda(a) ~ -a for large negative a
    assert got[0] == pytest.approx(40.0, rel=1e-3)


def test_sym_sqrt(rng):
    a = rng.normal(size=(3, 3))
    s = a @ a.T + np.eye(3)
    r = sun.sym_sqrt(s)
    assert np.allclose(r @ r, s, atol=1e-12)
    assert np.allclose(sun.sym_sqrt(s, inverse=True) @ r, np.eye(3), atol=1e-12)


def test_sun_params_restrict_to_observed(rng):
    p = random_params(rng, 3)
    rec = ObservationRecord(
        x=tuple(np.r_[1.0, rng.normal()] for _ in range(3)),
        w=tuple(np.r_[1.0, rng.normal(size=2)] for _ in range(3)),
        c=[1, 0, 1],
        y=[0.2, np.nan, -0.4],
    )
    sp = sun.sun_params(p, rec)
    assert sp.observed.tolist() == [0, 2]
    assert np.allclose(sp.gamma, p.psi[np.ix_([0, 2], [0, 2])])
    assert np.allclose(sp.omega, p.rho * p.sigma * sp.gamma)
    assert np.allclose(sp.delta @ sp.delta, sp.gamma)


def test_no_observed_outcome_rejected(rng):
    p = random_params(rng, 2)
    rec = ObservationRecord(x=([1.0, 0.0], [1.0, 0.0]), w=([1.0, 0, 0], [1.0, 0, 0]), c=[0, 0], y=[np.nan, np.nan])
    with pytest.raises(DimensionError):
        sun.mills_correction(p, rec)


def test_oracle_rho_zero_gives_plain_mean(rng):
    p = random_params(rng, 2).replace(rho=0.0)
    rec = draw_records(p, 1, rng)[0]
    while rec.c.sum() == 0:
        rec = draw_records(p, 1, rng)[0]
    s = np.flatnonzero(rec.c == 1)
    est = sun.conditional_mean_mc_oracle(p, rec, draws=400_000, seed=2)
    mu1 = np.array([rec.x[r] @ p.beta[r] for r in s])
    assert np.all(np.abs(est.mean - mu1) < 4 * est.std_error)


def test_oracle_requires_draws(rng):
    p = random_params(rng, 1)
    rec = draw_records(p, 1, rng)[0]
    with pytest.raises(ValueError):
        sun.conditional_mean_mc_oracle(p, rec, draws=10)
