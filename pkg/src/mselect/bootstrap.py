"""Nonparametric bootstrap for fitted models.

Records are resampled with replacement (``n`` out of ``n``) and the model is
refitted from the full-data estimate.  Replication ``b`` draws its indices
from ``SeedSequence([seed, b])``, so reports depend only on the inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .ecm import FitConfig, FitResult, fit
from .errors import BootstrapUnstableError, MselectError
from .model import Dataset, ModelParams, OutcomeDesign, as_dataset

__all__ = ["BootstrapReport", "bootstrap", "percentile_ci", "resample_indices"]


def percentile_ci(samples, alpha: float = 0.05):
    """Empirical ``alpha/2`` and ``1 - alpha/2`` quantiles with linear interpolation."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi = np.quantile(x, [alpha / 2, 1 - alpha / 2], axis=0, method="linear")
    return lo, hi


def resample_indices(n: int, seed: int, b: int) -> np.ndarray:
    """Indices of bootstrap replication ``b``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))
    return rng.integers(0, n, size=n)


@dataclass(frozen=True)
class BootstrapReport:
    """Bootstrap standard errors and percentile intervals.

    ``replicates`` holds the flattened parameter vectors of the successful
    refits in replication order (see :meth:`ModelParams.names`).
    """

    point: ModelParams
    names: tuple
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    replications_used: int
    failures: int
    replicates: np.ndarray = field(repr=False)
    replicate_ids: tuple = field(default=(), repr=False)
    nonconverged: int = 0
    alpha: float = 0.05
    seed: int = 0

    def table(self) -> list:
        point = self.point.to_vector()
        return [
            {
                "parameter": name,
                "estimate": float(point[j]),
                "se": float(self.se[j]),
                "ci_lower": float(self.ci_lower[j]),
                "ci_upper": float(self.ci_upper[j]),
            }
            for j, name in enumerate(self.names)
        ]

    def interval(self, name: str):
        j = self.names.index(name)
        return float(self.ci_lower[j]), float(self.ci_upper[j])


def bootstrap(
    data,
    design: OutcomeDesign | None = None,
    config: FitConfig | None = None,
    B: int = 200,
    seed: int = 0,
    point: ModelParams | FitResult | None = None,
    alpha: float = 0.05,
    indices=None,
) -> BootstrapReport:
    """Bootstrap a fit.

    Parameters
    ----------
    point : ModelParams or FitResult, optional
        Full-data estimate; fitted here when omitted.  Refits start from it.
    indices : sequence of index arrays, optional
        Resamples to use instead of the seeded draws (length ``B``).

    Raises
    ------
    BootstrapUnstableError
        When more than 20% of the refits fail.
    """
    B = int(B)
    if B < 2:
        raise ValueError("B must be at least 2")
    ds = as_dataset(data)
    if ds.n == 0:
        raise ValueError("no records")
    if design is not None and design != ds.design:
        raise MselectError("design does not match the data")
    config = config or FitConfig()
    if point is None:
        point = fit(ds, config=config).params
    elif isinstance(point, FitResult):
        point = point.params
    if indices is not None and len(indices) != B:
        raise ValueError("indices must provide one resample per replication")
    reps, ids = [], []
    failures = nonconv = 0
    for b in range(B):
        idx = resample_indices(ds.n, seed, b) if indices is None else np.asarray(indices[b], dtype=int)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = fit(ds.subset(idx), config=config, init=point)
        except (MselectError, np.linalg.LinAlgError):
            failures += 1
            continue
        nonconv += not res.converged
        reps.append(res.params.to_vector())
        ids.append(b)
    if failures > 0.2 * B:
        raise BootstrapUnstableError(f"{failures} of {B} bootstrap refits failed")
    reps = np.array(reps)
    if reps.shape[0] >= 2:
        se = np.std(reps, axis=0, ddof=1)
    else:
        se = np.full(len(point.names()), np.nan)
    lo, hi = percentile_ci(reps, alpha)
    return BootstrapReport(
        point=point,
        names=tuple(point.names()),
        se=se,
        ci_lower=np.asarray(lo),
        ci_upper=np.asarray(hi),
        replications_used=reps.shape[0],
        failures=failures,
        replicates=reps,
        replicate_ids=tuple(ids),
        nonconverged=nonconv,
        alpha=alpha,
        seed=int(seed),
    )
