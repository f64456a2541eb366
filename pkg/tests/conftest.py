"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from mselect.model import Dataset, ModelParams, ObservationRecord

# acceptance outcomes collected for the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


def random_params(rng: np.random.Generator, R: int, p: int = 2, q: int = 3, diag_psi: bool = False) -> ModelParams:
    """Random parameters with moderate selection probabilities."""
    beta = tuple(rng.normal(0.0, 1.0, size=p) for _ in range(R))
    gamma = tuple(np.concatenate([[rng.uniform(-0.3, 0.8)], rng.normal(0.0, 0.6, size=q - 1)]) for _ in range(R))
    if diag_psi:
        psi = np.diag(rng.uniform(0.5, 1.5, size=R))
    else:
        a = rng.normal(size=(R, R))
        psi = a @ a.T / R + 0.5 * np.eye(R)
    return ModelParams(
        beta=beta,
        gamma=gamma,
        sigma=float(rng.uniform(0.5, 2.5)),
        rho=float(rng.uniform(-0.8, 0.8)),
        psi=psi,
    )


def draw_records(params: ModelParams, n: int, rng: np.random.Generator) -> list:
    """Records drawn from the model with standard normal covariates."""
    R = params.R
    a = np.linalg.cholesky(params.Sigma)
    c = np.linalg.cholesky(params.psi)
    out = []
    for _ in range(n):
        x = [np.concatenate([[1.0], rng.normal(size=b.size - 1)]) for b in params.beta]
        w = [np.concatenate([[1.0], rng.normal(size=g.size - 1)]) for g in params.gamma]
        mean = np.array([[x[r] @ params.beta[r] for r in range(R)], [w[r] @ params.gamma[r] for r in range(R)]])
        y = mean + a @ rng.normal(size=(2, R)) @ c.T
        sel = (y[1] > 0).astype(int)
        yo = np.where(sel == 1, y[0], np.nan)
        out.append(ObservationRecord(x=tuple(x), w=tuple(w), c=sel, y=yo))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_r2():
    """A small R=2 dataset and its generating parameters."""
    g = np.random.default_rng(7)
    params = random_params(g, 2)
    return params, Dataset.from_records(draw_records(params, 120, g))
