import math
import warnings

import numpy as np
import pytest
from scipy import stats

from conftest import draw_records, random_params
from mselect import ecm, likelihood, sim
from mselect.errors import InsufficientDataError, RankDeficiencyError
from mselect.model import Dataset, ModelParams


def univariate_em(ds: Dataset, start: ModelParams, iterations: int) -> ModelParams:
    """Hand-specialised EM for one outcome, written with scipy.stats only."""
    x, w = ds.X[0], ds.W[0]
    c = ds.C[:, 0] == 1
    y = ds.Y[:, 0]
    n, p = x.shape
    q = w.shape[1]
    beta, gamma = np.array(start.beta[0]), np.array(start.gamma[0])
    sigma, rho = start.sigma, start.rho
    for _ in range(iterations):
        xb, wg = x @ beta, w @ gamma
        yhat = np.zeros((n, 2))
        vhat = np.zeros((n, 2, 2))
        # observed: S | y ~ N(wg + rho (y - xb) / sigma, 1 - rho^2) truncated to S > 0
        m = wg[c] + rho * (y[c] - xb[c]) / sigma
        s = math.sqrt(1 - rho * rho)
        tn = stats.truncnorm(-m / s, np.inf, loc=m, scale=s)
        yhat[c, 0] = y[c]
        yhat[c, 1] = tn.mean()
        vhat[c, 1, 1] = tn.var()
        # censored: S ~ N(wg, 1) truncated to S <= 0, Y regressed on S
        tn0 = stats.truncnorm(-np.inf, -wg[~c], loc=wg[~c], scale=1.0)
        ms, vs = tn0.mean(), tn0.var()
        slope = rho * sigma
        yhat[~c, 1] = ms
        yhat[~c, 0] = xb[~c] + slope * (ms - wg[~c])
        vhat[~c, 1, 1] = vs
        vhat[~c, 0, 1] = vhat[~c, 1, 0] = slope * vs
        vhat[~c, 0, 0] = sigma**2 - slope**2 + slope**2 * vs
        # GLS for (beta, gamma) with Sigma^{-1}
        sig = np.array([[sigma**2, rho * sigma], [rho * sigma, 1.0]])
        si = np.linalg.inv(sig)
        z = np.zeros((n, 2, p + q))
        z[:, 0, :p] = x
        z[:, 1, p:] = w
        a = np.einsum("nak,ab,nbl->kl", z, si, z)
        rhs = np.einsum("nak,ab,nb->k", z, si, yhat)
        b = np.linalg.solve(a, rhs)
        beta, gamma = b[:p], b[p:]
        res = yhat - np.einsum("nak,k->na", z, b)
        S = (np.einsum("na,nb->ab", res, res) + vhat.sum(axis=0)) / n
        sigma = math.sqrt(S[0, 0])
        rho = S[0, 1] / math.sqrt(S[0, 0] * S[1, 1])
        gamma = gamma / math.sqrt(S[1, 1])
    return ModelParams((beta,), (gamma,), sigma, rho, np.eye(1))


def test_r1_matches_independent_em(rng):
    for k in range(3):
        truth = random_params(rng, 1).replace(psi=np.eye(1))
        ds = Dataset.from_records(draw_records(truth, 200, rng))
        start = ecm.initialize(ds)
        start = start.replace(psi=np.eye(1))
        res = ecm.fit(ds, config=ecm.FitConfig(tol=1e-300, max_iter=40), init=start)
        ref = univariate_em(ds, start, 40)
        assert res.iterations == 40
        assert np.max(np.abs(res.params.to_vector() - ref.to_vector())) < 1e-4


def test_regression_methods_agree_for_diagonal_psi(small_r2):
    params, ds = small_r2
    params = params.replace(psi=np.diag([0.7, 1.3]))
    est = ecm.e_step_batch(params, ds)
    joint = ecm.cm_step_regression(params, est, ds, "joint")
    per = ecm.cm_step_regression(params, est, ds, "per_outcome")
    for a, b in zip(joint[0] + joint[1], per[0] + per[1]):
        assert np.allclose(a, b, atol=1e-10)


def test_joint_regression_is_gls_minimiser(small_r2):
    params, ds = small_r2
    est = ecm.e_step_batch(params, ds)
    beta, gamma = ecm.cm_step_regression(params, est, ds, "joint")
    lam_inv = np.linalg.inv(params.Lambda)

    def objective(p):
        r = est.yhat - ds.mean_vec(p)
        return np.einsum("na,ab,nb->", r, lam_inv, r)

    best = objective(params.replace(beta=beta, gamma=gamma))
    g = np.random.default_rng(0)
    for _ in range(5):
        nudged = params.replace(
            beta=tuple(b + 1e-3 * g.normal(size=b.size) for b in beta),
            gamma=tuple(c + 1e-3 * g.normal(size=c.size) for c in gamma),
        )
        assert objective(nudged) > best


def test_theorem1_columns_reconstruct_delta(small_r2):
    params, ds = small_r2
    est = ecm.e_step_batch(params, ds)
    dstar = ecm.delta_star_batch(params, est, ds)
    D = ecm.theorem1_columns(dstar)
    vecs = np.transpose(D, (0, 1, 3, 2)).reshape(ds.n, 4, 4)  # vec of each D_ij, column-stacked
    rebuilt = np.einsum("nja,njb->nab", vecs, vecs)
    assert np.allclose(rebuilt, dstar, atol=1e-10)
    assert np.isclose(ecm.q_kronecker(params.Sigma, params.psi, dstar), ecm.q_columns(params.Sigma, params.psi, D))


def test_covariance_step_maximises_q(small_r2):
    params, ds = small_r2
    est = ecm.e_step_batch(params, ds)
    dstar = ecm.delta_star_batch(params, est, ds)
    cols = ecm.theorem1_columns(dstar)
    sigma, rho, psi, scale = ecm.cm_step_covariance(params, cols, constraint="rescale", normalize_psi=False)
    new = params.replace(sigma=sigma, rho=rho, psi=psi)
    assert ecm.q_kronecker(new.Sigma, new.psi, dstar) >= ecm.q_kronecker(params.Sigma, params.psi, dstar)
    assert scale == 1.0
    assert new.Sigma[1, 1] == 1.0


def test_fit_invariants_and_determinism(small_r2):
    _, ds = small_r2
    a = ecm.fit(ds)
    b = ecm.fit(ds)
    assert a.converged
    assert np.array_equal(a.params.to_vector(), b.params.to_vector())
    assert np.array_equal(a.loglik_trace, b.loglik_trace)
    assert a.params.Sigma[1, 1] == 1.0
    assert abs(a.params.rho) < 1
    assert np.trace(a.params.psi) == pytest.approx(2.0, abs=1e-12)
    trace = np.concatenate([[a.initial_loglik], a.loglik_trace])
    assert np.all(np.diff(trace) > -1e-6)
    assert a.loglik == pytest.approx(likelihood.loglik(a.params, ds).total, abs=1e-8)


@pytest.mark.parametrize("regression", ["per_outcome", "explicit"])
@pytest.mark.parametrize("constraint", ["rescale", "overwrite"])
def test_alternative_updates_run(small_r2, regression, constraint):
    _, ds = small_r2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = ecm.fit(ds, config=ecm.FitConfig(regression=regression, constraint=constraint, max_iter=60))
    assert res.params.Sigma[1, 1] == 1.0
    assert np.all(np.isfinite(res.params.to_vector()))


def test_recovers_truth_at_larger_n():
    gen = sim.generate(sim.scenario1(n=800, missing_rate=0.1), seed=3)
    res = ecm.fit(gen.dataset)
    assert res.converged
    assert abs(res.params.rho - 0.6) < 0.15
    assert abs(res.params.sigma - 2.0) < 0.2
    assert sim.fit_metrics(res.params, gen.params)["frob_B"] < 0.4


def test_rank_deficient_design_is_reported(small_r2):
    _, ds = small_r2
    X = [x.copy() for x in ds.X]
    X[1][:, 1] = 2.0 * X[1][:, 0]
    bad = Dataset(X, ds.W, ds.C, ds.Y)
    with pytest.raises(RankDeficiencyError) as err:
        ecm.fit(bad)
    assert err.value.outcome == 2


def test_too_few_observed(small_r2):
    _, ds = small_r2
    C = ds.C.copy()
    Y = ds.Y.copy()
    C[:, 0] = 0
    C[:2, 0] = 1
    Y[:, 0] = np.where(C[:, 0] == 1, 1.0, np.nan)
    with pytest.raises(InsufficientDataError):
        ecm.initialize(Dataset(ds.X, ds.W, C, Y))


def test_separation_falls_back_with_warning(small_r2):
    _, ds = small_r2
    C = ds.C.copy()
    Y = ds.Y.copy()
    # selection perfectly predicted by the sign of w_r1
    C[:, 0] = (ds.W[0][:, 1] > 0).astype(int)
    Y[:, 0] = np.where(C[:, 0] == 1, 0.5 + ds.X[0][:, 1], np.nan)
    with pytest.warns(RuntimeWarning, match="separation"):
        ecm.initialize(Dataset(ds.X, ds.W, C, Y))


def test_config_validation():
    with pytest.raises(ValueError):
        ecm.FitConfig(tol=0)
    with pytest.raises(ValueError):
        ecm.FitConfig(regression="nope")
    with pytest.raises(ValueError):
        ecm.FitConfig(constraint="nope")
