"""Data model of the matrix-variate selection model.

Each subject has a latent ``2 x R`` matrix whose column ``r`` holds the
outcome ``Y_r1`` and the selection propensity ``Y_r2`` of outcome ``r``.
With ``Y = Z B + E`` and ``E ~ N_{2xR}(0, Sigma, Psi)``, the column-stacked
vector has covariance ``Psi (x) Sigma``; position ``2r`` holds outcome ``r``
and ``2r + 1`` its selection propensity (0-based).  Outcome ``r`` is seen
only when ``Y_r2 > 0``.

``Sigma = [[sigma^2, rho*sigma], [rho*sigma, 1]]`` fixes the Kronecker scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DimensionError, PDViolationError, RecordError
from .matcore import cholesky, kron

__all__ = [
    "OutcomeDesign",
    "ModelParams",
    "ObservationRecord",
    "CensorPartition",
    "Dataset",
    "sigma_matrix",
    "build_design_row",
    "blockdiag_coefficients",
    "mean_matrix",
    "censor_partition",
    "outcome_index",
    "selection_index",
]

RHO_BOUND = 1.0 - 1e-8


def outcome_index(r: int) -> int:
    return 2 * r


def selection_index(r: int) -> int:
    return 2 * r + 1


@dataclass(frozen=True)
class OutcomeDesign:
    """Per-outcome covariate dimensions ``p_r`` (outcome) and ``q_r`` (selection)."""

    p: tuple
    q: tuple

    def __post_init__(self):
        p = tuple(int(v) for v in self.p)
        q = tuple(int(v) for v in self.q)
        if len(p) == 0 or len(p) != len(q):
            raise DimensionError("p and q must be nonempty and of equal length")
        if min(p) < 1 or min(q) < 1:
            raise DimensionError("every outcome needs at least one covariate in each equation")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def R(self) -> int:
        return len(self.p)

    @property
    def n_coef(self) -> int:
        return sum(self.p) + sum(self.q)

    def offsets(self):
        """Start of each ``beta_r`` and ``gamma_r`` block in the stacked coefficient vector."""
        off_b, off_g = [], []
        pos = 0
        for pr, qr in zip(self.p, self.q):
            off_b.append(pos)
            pos += pr
            off_g.append(pos)
            pos += qr
        return off_b, off_g


def sigma_matrix(sigma: float, rho: float) -> np.ndarray:
    """``[[sigma^2, rho*sigma], [rho*sigma, 1]]``."""
    sigma = float(sigma)
    rho = float(rho)
    if not (np.isfinite(sigma) and sigma > 0):
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not (np.isfinite(rho) and abs(rho) < 1):
        raise ValueError(f"rho must lie in (-1, 1), got {rho}")
    return np.array([[sigma * sigma, rho * sigma], [rho * sigma, 1.0]])


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set ``(beta_r, gamma_r, sigma, rho, Psi)``."""

    beta: tuple
    gamma: tuple
    sigma: float
    rho: float
    psi: np.ndarray

    def __post_init__(self):
        beta = tuple(np.atleast_1d(np.asarray(b, dtype=float)).copy() for b in self.beta)
        gamma = tuple(np.atleast_1d(np.asarray(g, dtype=float)).copy() for g in self.gamma)
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float)).copy()
        if len(beta) != len(gamma) or len(beta) == 0:
            raise DimensionError("beta and gamma must list the same number of outcomes")
        if psi.shape != (len(beta), len(beta)):
            raise DimensionError(f"psi must be {len(beta)}x{len(beta)}")
        sigma_matrix(self.sigma, self.rho)
        for v in beta + gamma:
            if not np.all(np.isfinite(v)):
                raise ValueError("coefficients must be finite")
            v.setflags(write=False)
        cholesky(psi)
        psi.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def R(self) -> int:
        return len(self.beta)

    @property
    def design(self) -> OutcomeDesign:
        return OutcomeDesign(tuple(b.size for b in self.beta), tuple(g.size for g in self.gamma))

    @property
    def Sigma(self) -> np.ndarray:
        return sigma_matrix(self.sigma, self.rho)

    @property
    def Lambda(self) -> np.ndarray:
        """Covariance of the column-stacked latent matrix, ``Psi (x) Sigma``."""
        return kron(self.psi, self.Sigma)

    def replace(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    # flat representation used by reports and the bootstrap
    def names(self) -> list:
        out = []
        for r, (b, g) in enumerate(zip(self.beta, self.gamma), start=1):
            out += [f"beta{r}[{j}]" for j in range(b.size)]
            out += [f"gamma{r}[{j}]" for j in range(g.size)]
        out += ["sigma", "rho"]
        R = self.R
        out += [f"psi[{i + 1},{j + 1}]" for i in range(R) for j in range(i, R)]
        return out

    def to_vector(self) -> np.ndarray:
        parts = []
        for b, g in zip(self.beta, self.gamma):
            parts += [b, g]
        parts.append([self.sigma, self.rho])
        iu = np.triu_indices(self.R)
        parts.append(self.psi[iu])
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    @classmethod
    def from_vector(cls, vector, design: OutcomeDesign) -> "ModelParams":
        v = np.asarray(vector, dtype=float)
        pos = 0
        beta, gamma = [], []
        for pr, qr in zip(design.p, design.q):
            beta.append(v[pos : pos + pr])
            pos += pr
            gamma.append(v[pos : pos + qr])
            pos += qr
        sigma, rho = v[pos], v[pos + 1]
        pos += 2
        R = design.R
        psi = np.zeros((R, R))
        iu = np.triu_indices(R)
        psi[iu] = v[pos : pos + iu[0].size]
        psi = psi + np.triu(psi, 1).T
        return cls(tuple(beta), tuple(gamma), sigma, rho, psi)

    def to_dict(self) -> dict:
        return {
            "beta": [b.tolist() for b in self.beta],
            "gamma": [g.tolist() for g in self.gamma],
            "sigma": self.sigma,
            "rho": self.rho,
            "psi": self.psi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(tuple(d["beta"]), tuple(d["gamma"]), d["sigma"], d["rho"], np.asarray(d["psi"], dtype=float))


@dataclass(frozen=True)
class ObservationRecord:
    """One subject: covariates, selection indicators and the observed outcomes.

    ``y`` has length ``R`` with NaN wherever ``c[r] == 0``.
    """

    x: tuple
    w: tuple
    c: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in self.x)
        w = tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in self.w)
        c = np.atleast_1d(np.asarray(self.c)).astype(int)
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        R = len(x)
        if len(w) != R or c.shape != (R,) or y.shape != (R,):
            raise DimensionError("record fields disagree on the number of outcomes")
        if not np.all(np.isin(c, (0, 1))):
            raise ValueError("selection indicators must be 0 or 1")
        if not all(np.all(np.isfinite(v)) for v in x + w):
            raise ValueError("covariates must be finite")
        if np.any(np.isfinite(y) != (c == 1)):
            raise ValueError("an outcome value must be present exactly when its indicator is 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "y", y)

    @property
    def R(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class CensorPartition:
    """Observed and censored positions of the column-stacked latent vector.

    ``lower``/``upper`` are the rectangle bounds over ``cens_idx``.
    """

    obs_idx: np.ndarray
    cens_idx: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def _check_record(record: ObservationRecord, design: OutcomeDesign) -> None:
    if record.R != design.R:
        raise DimensionError(f"record has {record.R} outcomes, design has {design.R}")
    for r in range(design.R):
        if record.x[r].size != design.p[r] or record.w[r].size != design.q[r]:
            raise DimensionError(f"covariate length mismatch for outcome {r + 1}")


def build_design_row(record: ObservationRecord, design: OutcomeDesign) -> np.ndarray:
    """The ``2 x (p + q)`` block covariate matrix ``Z_i``.

    Row 0 holds ``x_r`` in the ``beta_r`` slots, row 1 holds ``w_r`` in the
    ``gamma_r`` slots; all other entries are zero.
    """
    _check_record(record, design)
    z = np.zeros((2, design.n_coef))
    off_b, off_g = design.offsets()
    for r in range(design.R):
        z[0, off_b[r] : off_b[r] + design.p[r]] = record.x[r]
        z[1, off_g[r] : off_g[r] + design.q[r]] = record.w[r]
    return z


def blockdiag_coefficients(params: ModelParams) -> np.ndarray:
    """The ``(p + q) x R`` coefficient matrix ``B`` with ``(beta_r; gamma_r)`` in column ``r``."""
    design = params.design
    b = np.zeros((design.n_coef, design.R))
    off_b, off_g = design.offsets()
    for r in range(design.R):
        b[off_b[r] : off_b[r] + design.p[r], r] = params.beta[r]
        b[off_g[r] : off_g[r] + design.q[r], r] = params.gamma[r]
    return b


def mean_matrix(params: ModelParams, record: ObservationRecord) -> np.ndarray:
    """``M_i = Z_i B``: column ``r`` is ``(x_r' beta_r, w_r' gamma_r)``."""
    _check_record(record, params.design)
    return np.array(
        [
            [float(record.x[r] @ params.beta[r]) for r in range(params.R)],
            [float(record.w[r] @ params.gamma[r]) for r in range(params.R)],
        ]
    )


def censor_partition(record: ObservationRecord) -> CensorPartition:
    """Split the ``2R`` latent positions into observed and rectangle-censored sets."""
    obs, cens, lo, hi = [], [], [], []
    for r in range(record.R):
        if record.c[r] == 1:
            obs.append(outcome_index(r))
        else:
            cens.append(outcome_index(r))
            lo.append(-np.inf)
            hi.append(np.inf)
        cens.append(selection_index(r))
        if record.c[r] == 1:
            lo.append(0.0)
            hi.append(np.inf)
        else:
            lo.append(-np.inf)
            hi.append(0.0)
    order = np.argsort(cens, kind="stable")
    return CensorPartition(
        np.array(obs, dtype=int),
        np.array(cens, dtype=int)[order],
        np.array(lo)[order],
        np.array(hi)[order],
    )


@dataclass
class Dataset:
    """Column-oriented storage of ``n`` records.

    Attributes
    ----------
    X, W : list of ndarray
        ``X[r]`` is ``(n, p_r)``, ``W[r]`` is ``(n, q_r)``.
    C : ndarray, shape (n, R)
        Selection indicators.
    Y : ndarray, shape (n, R)
        Outcomes, NaN where unobserved.
    """

    X: list
    W: list
    C: np.ndarray
    Y: np.ndarray
    _records: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.X = [np.atleast_2d(np.asarray(x, dtype=float)) for x in self.X]
        self.W = [np.atleast_2d(np.asarray(w, dtype=float)) for w in self.W]
        self.C = np.asarray(self.C).astype(int)
        self.Y = np.asarray(self.Y, dtype=float)
        n, R = self.C.shape
        if len(self.X) != R or len(self.W) != R or self.Y.shape != (n, R):
            raise DimensionError("dataset arrays disagree on n or R")
        for r in range(R):
            if self.X[r].shape[0] != n or self.W[r].shape[0] != n:
                raise DimensionError(f"covariate rows mismatch for outcome {r + 1}")
        if not np.all(np.isin(self.C, (0, 1))):
            raise ValueError("selection indicators must be 0 or 1")
        bad = np.flatnonzero(np.any(np.isfinite(self.Y) != (self.C == 1), axis=1))
        if bad.size:
            raise RecordError("outcome present/absent disagrees with its indicator", index=int(bad[0]))
        for r in range(R):
            rows = np.flatnonzero(~np.all(np.isfinite(self.X[r]), axis=1) | ~np.all(np.isfinite(self.W[r]), axis=1))
            if rows.size:
                raise RecordError("non-finite covariate", index=int(rows[0]))

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def R(self) -> int:
        return self.C.shape[1]

    @property
    def design(self) -> OutcomeDesign:
        return OutcomeDesign(tuple(x.shape[1] for x in self.X), tuple(w.shape[1] for w in self.W))

    @classmethod
    def from_records(cls, records: Sequence[ObservationRecord]) -> "Dataset":
        records = list(records)
        if not records:
            raise ValueError("no records")
        R = records[0].R
        X = [np.array([rec.x[r] for rec in records]) for r in range(R)]
        W = [np.array([rec.w[r] for rec in records]) for r in range(R)]
        C = np.array([rec.c for rec in records])
        Y = np.array([rec.y for rec in records])
        return cls(X, W, C, Y)

    def to_records(self) -> list:
        if self._records is None:
            self._records = [
                ObservationRecord(
                    tuple(self.X[r][i] for r in range(self.R)),
                    tuple(self.W[r][i] for r in range(self.R)),
                    self.C[i],
                    self.Y[i],
                )
                for i in range(self.n)
            ]
        return self._records

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset([x[idx] for x in self.X], [w[idx] for w in self.W], self.C[idx], self.Y[idx])

    def outcome(self, r: int) -> "Dataset":
        """The single-outcome dataset for outcome ``r``."""
        return Dataset([self.X[r]], [self.W[r]], self.C[:, [r]], self.Y[:, [r]])

    def means(self, params: ModelParams):
        """Outcome and selection means, each ``(n, R)``."""
        mu1 = np.column_stack([self.X[r] @ params.beta[r] for r in range(self.R)])
        mu2 = np.column_stack([self.W[r] @ params.gamma[r] for r in range(self.R)])
        return mu1, mu2

    def mean_vec(self, params: ModelParams) -> np.ndarray:
        """Column-stacked mean vectors, ``(n, 2R)``."""
        mu1, mu2 = self.means(params)
        out = np.empty((self.n, 2 * self.R))
        out[:, 0::2] = mu1
        out[:, 1::2] = mu2
        return out


def as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset.from_records(data)


def check_params_design(params: ModelParams, design: OutcomeDesign) -> None:
    if params.design != design:
        raise DimensionError("parameter dimensions do not match the data design")


def validate_psd(a: np.ndarray, what: str) -> None:
    try:
        cholesky(a)
    except PDViolationError as exc:
        raise PDViolationError(f"{what}: {exc}") from None
