"""Simulation scenarios, data generation and Monte Carlo drivers.

Two reference scenarios with three outcomes are provided.  Each outcome has
selection covariates ``w_r = (1, w_r1, w_r2)`` and outcome covariates
``x_r = (1, w_r1)``, so ``w_r2`` is the excluded instrument.

Missing rates are controlled by shifting every selection intercept by a
common offset.  The offset is found by bisection on the analytic missing
rate averaged over a fixed pilot sample of covariates; the shifted
coefficients are the truth against which estimates are scored.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .ecm import FitConfig, FitResult, fit
from .errors import FitError, MselectError, UnreachableRateError
from .matcore import cholesky
from .model import Dataset, ModelParams

__all__ = [
    "Scenario",
    "GeneratedData",
    "MCSummary",
    "scenario1",
    "scenario2",
    "custom_scenario",
    "calibrate_offset",
    "generate",
    "frobenius_error",
    "fit_metrics",
    "run_mc",
    "compare_univariate",
    "coefficient_matrices",
]

LAWS = ("normal", "t6", "uniform")
PILOT_SIZE = 100_000
PILOT_SEED = 8_675_309


@dataclass(frozen=True)
class Scenario:
    """A data-generating process.

    ``covariate_laws[r]`` names the laws of ``(w_r1, w_r2)``: ``"normal"``
    (standard normal), ``"t6"`` (Student t with 6 degrees of freedom, not
    rescaled) or ``"uniform"`` (on ``(-1, 1)``).
    """

    name: str
    true_params: ModelParams
    covariate_laws: tuple
    n: int = 300
    target_missing_rate: float | None = None

    def __post_init__(self):
        laws = tuple(tuple(pair) for pair in self.covariate_laws)
        if len(laws) != self.true_params.R:
            raise ValueError("one pair of covariate laws is needed per outcome")
        for pair in laws:
            if len(pair) != 2 or any(law not in LAWS for law in pair):
                raise ValueError(f"covariate laws must be pairs drawn from {LAWS}")
        d = self.true_params.design
        if any(p != 2 for p in d.p) or any(q != 3 for q in d.q):
            raise ValueError("scenarios use x_r = (1, w_r1) and w_r = (1, w_r1, w_r2)")
        if int(self.n) < 1:
            raise ValueError("n must be positive")
        if self.target_missing_rate is not None and not 0 < self.target_missing_rate < 1:
            raise ValueError("target missing rate must lie in (0, 1)")
        object.__setattr__(self, "covariate_laws", laws)
        object.__setattr__(self, "n", int(self.n))

    def with_(self, **kw) -> "Scenario":
        d = dict(
            name=self.name,
            true_params=self.true_params,
            covariate_laws=self.covariate_laws,
            n=self.n,
            target_missing_rate=self.target_missing_rate,
        )
        d.update(kw)
        return Scenario(**d)


def _compound_symmetry(R: int, phi: float) -> np.ndarray:
    return (1.0 - phi) * np.eye(R) + phi * np.ones((R, R))


_BETA1 = ((1.0, 0.3), (1.0, -0.8), (1.0, 2.0))
_GAMMA1 = ((1.0, 0.3, -0.7), (1.0, -0.5, -1.0), (1.0, 0.2, 0.6))
_LAWS1 = (("normal", "normal"), ("normal", "t6"), ("uniform", "normal"))


def scenario1(n: int = 300, missing_rate: float | None = None) -> Scenario:
    """Three outcomes, ``sigma = 2``, ``rho = 0.6``, compound-symmetric ``Psi`` with ``phi = 0.4``."""
    params = ModelParams(_BETA1, _GAMMA1, 2.0, 0.6, _compound_symmetry(3, 0.4))
    return Scenario("scenario1", params, _LAWS1, n, missing_rate)


def scenario2(n: int = 300, missing_rate: float | None = None) -> Scenario:
    """As :func:`scenario1` with heterogeneous across-outcome correlations."""
    psi = np.array([[1.0, 0.7, 0.4], [0.7, 1.0, 0.1], [0.4, 0.1, 1.0]])
    params = ModelParams(_BETA1, _GAMMA1, 2.0, 0.6, psi)
    return Scenario("scenario2", params, _LAWS1, n, missing_rate)


def custom_scenario(params: ModelParams, covariate_laws=None, n: int = 300, missing_rate=None, name="custom") -> Scenario:
    laws = covariate_laws or tuple(("normal", "normal") for _ in range(params.R))
    return Scenario(name, params, laws, n, missing_rate)


def _draw(law: str, rng: np.random.Generator, n: int) -> np.ndarray:
    if law == "normal":
        return rng.standard_normal(n)
    if law == "t6":
        return rng.standard_t(6, n)
    return rng.uniform(-1.0, 1.0, n)


def _draw_covariates(laws, rng: np.random.Generator, n: int):
    """Selection covariate matrices ``W_r`` of shape ``(n, 3)``."""
    out = []
    for law1, law2 in laws:
        w1 = _draw(law1, rng, n)
        w2 = _draw(law2, rng, n)
        out.append(np.column_stack([np.ones(n), w1, w2]))
    return out


def _analytic_rate(pilot, gamma, psi_diag, offset: float) -> float:
    rates = [np.mean(special.ndtr(-(w @ g + offset) / math.sqrt(s))) for w, g, s in zip(pilot, gamma, psi_diag)]
    return float(np.mean(rates))


@lru_cache(maxsize=64)
def _pilot(laws) -> tuple:
    rng = np.random.default_rng(PILOT_SEED)
    return tuple(_draw_covariates(laws, rng, PILOT_SIZE))


def calibrate_offset(scenario: Scenario, target: float) -> tuple:
    """Common selection-intercept offset giving missing rate ``target``.

    Returns ``(offset, achieved_rate)`` where the rate is the analytic one
    averaged over outcomes and a fixed pilot sample of 100000 covariate draws.
    """
    if not 0 < target < 1:
        raise UnreachableRateError(f"missing rate {target} is not in (0, 1)")
    pilot = _pilot(scenario.covariate_laws)
    gamma = scenario.true_params.gamma
    sd2 = np.diag(scenario.true_params.psi)
    f = lambda d: _analytic_rate(pilot, gamma, sd2, d) - target
    lo, hi = -50.0, 50.0
    if not f(lo) > 0 > f(hi):
        raise UnreachableRateError(f"missing rate {target} cannot be reached by shifting the intercepts")
    offset = optimize.bisect(f, lo, hi, xtol=1e-12, maxiter=200)
    achieved = f(offset) + target
    if abs(achieved - target) > 0.01:
        raise UnreachableRateError(f"calibration reached {achieved:.4f}, target {target}")
    return float(offset), float(achieved)


@dataclass(frozen=True)
class GeneratedData:
    """A simulated sample with its truth.

    ``params`` includes the intercept offset; ``calibrated_rate`` is the
    analytic missing rate used for calibration (NaN without a target) and
    ``empirical_rate`` the fraction of unobserved outcome cells.
    """

    dataset: Dataset
    params: ModelParams
    offset: float
    calibrated_rate: float
    empirical_rate: float
    seed: int

    @property
    def records(self) -> list:
        return self.dataset.to_records()


def effective_params(scenario: Scenario) -> tuple:
    """Truth after missing-rate calibration: ``(params, offset, calibrated_rate)``."""
    tp = scenario.true_params
    if scenario.target_missing_rate is None:
        return tp, 0.0, float("nan")
    offset, achieved = calibrate_offset(scenario, scenario.target_missing_rate)
    gamma = tuple(np.concatenate([[g[0] + offset], g[1:]]) for g in tp.gamma)
    return tp.replace(gamma=gamma), offset, achieved


def generate(scenario: Scenario, seed) -> GeneratedData:
    """Draw ``scenario.n`` records.

    Latent matrices are ``Z_i B + A U_i C'`` with ``U_i`` standard normal,
    ``A A' = Sigma`` and ``C C' = Psi``; outcome ``r`` is recorded only if its
    selection propensity is positive.
    """
    params, offset, achieved = effective_params(scenario)
    rng = np.random.default_rng(seed)
    n, R = scenario.n, params.R
    W = _draw_covariates(scenario.covariate_laws, rng, n)
    X = [w[:, :2].copy() for w in W]
    a = cholesky(params.Sigma)
    c = cholesky(params.psi)
    U = rng.standard_normal((n, 2, R))
    E = np.einsum("ab,nbs,rs->nar", a, U, c)
    y1 = np.column_stack([X[r] @ params.beta[r] for r in range(R)]) + E[:, 0, :]
    y2 = np.column_stack([W[r] @ params.gamma[r] for r in range(R)]) + E[:, 1, :]
    C = (y2 > 0).astype(int)
    Y = np.where(C == 1, y1, np.nan)
    ds = Dataset(X, W, C, Y)
    return GeneratedData(ds, params, offset, achieved, float(1.0 - C.mean()), int(seed) if np.isscalar(seed) else -1)


def frobenius_error(est, truth) -> float:
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    return float(np.sqrt(np.sum((est - truth) ** 2)))


def coefficient_matrices(params: ModelParams):
    """``B`` (``p_r x R``) and ``Gamma`` (``q_r x R``) with one column per outcome."""
    return np.column_stack(params.beta), np.column_stack(params.gamma)


def _phi_hat(psi: np.ndarray) -> float:
    R = psi.shape[0]
    if R < 2:
        return float("nan")
    return float(psi[~np.eye(R, dtype=bool)].mean())


def fit_metrics(est: ModelParams, truth: ModelParams) -> dict:
    b, g = coefficient_matrices(est)
    bt, gt = coefficient_matrices(truth)
    return {
        "frob_B": frobenius_error(b, bt),
        "frob_Gamma": frobenius_error(g, gt),
        "sigma_hat": est.sigma,
        "rho_hat": est.rho,
        "phi_hat": _phi_hat(est.psi),
        "err_sigma": est.sigma - truth.sigma,
        "err_rho": est.rho - truth.rho,
        "err_phi": _phi_hat(est.psi) - _phi_hat(truth.psi),
    }


@dataclass
class MCSummary:
    """Metrics over the replications of one cell.

    ``rows`` holds one dict per replication (failed ones have ``ok=False``).
    """

    frob_B: np.ndarray
    frob_Gamma: np.ndarray
    mse_sigma: float
    mse_rho: float
    mse_phi: float
    replications: int
    failures: int = 0
    rows: list = field(default_factory=list, repr=False)

    @classmethod
    def from_rows(cls, rows: list, requested: int) -> "MCSummary":
        ok = [r for r in rows if r["ok"]]

        def mse(key):
            v = np.array([r[key] for r in ok], dtype=float)
            v = v[np.isfinite(v)]
            return float(np.mean(v * v)) if v.size else float("nan")

        return cls(
            np.array([r["frob_B"] for r in ok]),
            np.array([r["frob_Gamma"] for r in ok]),
            mse("err_sigma"),
            mse("err_rho"),
            mse("err_phi"),
            len(ok),
            requested - len(ok),
            rows,
        )

    def median(self, key: str = "frob_B") -> float:
        return float(np.median(getattr(self, key)))


def _rep_seed(seed: int, n: int, rate, rep: int, stream: int = 0) -> np.random.SeedSequence:
    rate_key = -1 if rate is None else int(round(rate * 1_000_000))
    return np.random.SeedSequence([int(seed), stream, int(n), rate_key, int(rep)])


def _fit_univariate(ds: Dataset, config: FitConfig) -> ModelParams:
    """Fit each outcome on its own and stack the estimates.

    ``sigma`` and ``rho`` are averaged over outcomes and ``Psi`` is the identity.
    """
    beta, gamma, sig, rho = [], [], [], []
    for r in range(ds.R):
        res = fit(ds.outcome(r), config=config)
        beta.append(res.params.beta[0])
        gamma.append(res.params.gamma[0])
        sig.append(res.params.sigma)
        rho.append(res.params.rho)
    return ModelParams(tuple(beta), tuple(gamma), float(np.mean(sig)), float(np.mean(rho)), np.eye(ds.R))


def _one_rep(scenario: Scenario, config: FitConfig, ss, arms) -> list:
    data = generate(scenario, ss)
    rows = []
    for arm in arms:
        row = {"arm": arm, "empirical_rate": data.empirical_rate, "calibrated_rate": data.calibrated_rate}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if arm == "multivariate":
                    res = fit(data.dataset, config=config)
                    est = res.params
                    row.update(converged=res.converged, iterations=res.iterations, loglik=res.loglik)
                else:
                    est = _fit_univariate(data.dataset, config)
                    row.update(converged=True, iterations=0, loglik=float("nan"))
            row.update(fit_metrics(est, data.params))
            if arm == "univariate":
                row["phi_hat"] = row["err_phi"] = float("nan")
            row["ok"] = True
        except (MselectError, np.linalg.LinAlgError, FloatingPointError) as exc:
            row.update(ok=False, error=str(exc))
        rows.append(row)
    return rows


def _check_failures(summary: MCSummary, label: str) -> None:
    if summary.failures > 0.2 * (summary.replications + summary.failures):
        raise FitError(f"{summary.failures} of {summary.replications + summary.failures} fits failed in {label}")


def run_mc(scenario: Scenario, n_list, rate_list, replications: int, config: FitConfig | None = None, seed: int = 0) -> dict:
    """Monte Carlo study over a grid of sample sizes and missing rates.

    Returns ``{(n, rate): MCSummary}``.  Each replication's data depend only
    on ``(seed, n, rate, replication)``.
    """
    if int(replications) < 1:
        raise ValueError("replications must be at least 1")
    config = config or FitConfig()
    out = {}
    for n in n_list:
        for rate in rate_list:
            sc = scenario.with_(n=int(n), target_missing_rate=rate)
            rows = []
            for rep in range(int(replications)):
                row = _one_rep(sc, config, _rep_seed(seed, n, rate, rep), ["multivariate"])[0]
                row.update(n=int(n), rate=rate, replication=rep)
                rows.append(row)
            summary = MCSummary.from_rows(rows, int(replications))
            _check_failures(summary, f"cell n={n}, rate={rate}")
            out[(int(n), rate)] = summary
    return out


def compare_univariate(scenario: Scenario, n: int, rate, replications: int, config: FitConfig | None = None, seed: int = 0):
    """Multivariate fit against per-outcome fits on the same samples.

    Returns ``(multivariate, univariate)`` summaries.
    """
    if int(replications) < 1:
        raise ValueError("replications must be at least 1")
    config = config or FitConfig()
    sc = scenario.with_(n=int(n), target_missing_rate=rate)
    multi, uni = [], []
    for rep in range(int(replications)):
        m, u = _one_rep(sc, config, _rep_seed(seed, n, rate, rep), ["multivariate", "univariate"])
        for row in (m, u):
            row.update(n=int(n), rate=rate, replication=rep)
        multi.append(m)
        uni.append(u)
    sm = MCSummary.from_rows(multi, int(replications))
    su = MCSummary.from_rows(uni, int(replications))
    _check_failures(sm, "multivariate arm")
    _check_failures(su, "univariate arm")
    return sm, su
