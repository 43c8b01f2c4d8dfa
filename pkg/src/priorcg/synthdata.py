"""Synthetic factor-structured designs for benchmarking.

Rows are x_i = sum_l f_il u_l + eps_i with an orthonormal frame
u_1..u_m drawn uniformly at random, factor weights f_il ~
N(0, max(m+1-l, 1)^2), and standard Gaussian noise; columns are then
centered and scaled to unit sample sd. The decaying factor scales give
the design a dense correlation structure with a handful of dominant
directions, which is exactly the regime where prior preconditioning
pays off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SimSpec:
    n: int
    p: int
    n_factors: int = 0
    n_signals: int = 0
    seed: int = 0
    signal_value: float = 1.0

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ValueError("need n >= 2 rows and p >= 1 columns")
        if not 0 <= self.n_factors < self.p:
            raise ValueError("factor count must satisfy 0 <= m < p")
        if not 0 <= self.n_signals <= self.p:
            raise ValueError("signal count must satisfy 0 <= K <= p")


def stiefel_frame(p, m, rng):
    """p x m matrix with orthonormal columns, uniform over frames.

    QR of a Gaussian matrix with the R-diagonal sign fixed positive.
    """
    if m == 0:
        return np.zeros((p, 0))
    q, r = np.linalg.qr(rng.standard_normal((p, m)))
    return q * np.sign(np.diag(r))


def factor_scales(m):
    """Scale of factor l (1-based) is max(m + 1 - l, 1)."""
    return np.maximum(m + 1 - np.arange(1, m + 1), 1).astype(np.float64)


def simulate_design(spec: SimSpec, rng) -> np.ndarray:
    """Dense n x p design with factor structure, standardized columns.

    Draw order: frame, factor weights, noise.
    """
    u = stiefel_frame(spec.p, spec.n_factors, rng)
    scales = factor_scales(spec.n_factors)
    f = rng.standard_normal((spec.n, spec.n_factors)) * scales
    x = f @ u.T + rng.standard_normal((spec.n, spec.p))
    x -= x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    if np.any(sd <= 0.0):
        raise ValueError("degenerate column in simulated design")
    x /= sd
    return x


def true_coefficients(spec: SimSpec) -> np.ndarray:
    """signal_value on the first K coordinates, zero elsewhere."""
    beta = np.zeros(spec.p)
    beta[:spec.n_signals] = spec.signal_value
    return beta


def simulate_outcomes(X, spec: SimSpec, rng) -> np.ndarray:
    """Bernoulli outcomes from the logistic model at the true signal."""
    beta = true_coefficients(spec)
    z = X.matvec(beta) if hasattr(X, "matvec") else np.asarray(X) @ beta
    prob = 1.0 / (1.0 + np.exp(-z))
    return (rng.random(z.shape[0]) < prob).astype(np.float64)


def offdiagonal_correlation_sd(X, max_columns=1000, rng=None) -> float:
    """Sample sd of the pairwise column correlations.

    Designs wider than ``max_columns`` are subsampled (without
    replacement) to keep the correlation matrix manageable.
    """
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    if p > max_columns:
        rng = rng or np.random.default_rng(0)
        cols = np.sort(rng.choice(p, size=max_columns, replace=False))
        X = X[:, cols]
        p = max_columns
    corr = np.corrcoef(X, rowvar=False)
    off = corr[np.triu_indices(p, k=1)]
    if off.size < 2:
        return float("nan")
    return float(off.std(ddof=1))
