"""Gaussian sampling with precision Phi = X' Omega X + D.

Both samplers share one randomization: a right-hand side b whose mean is
the linear term and whose covariance is exactly Phi, so that any exact
solve of Phi beta = b is a draw from N(Phi^{-1} linear_term, Phi^{-1}).
`cg_sample` solves iteratively and matrix-free; `direct_sample` forms Phi
densely and uses its Cholesky factor. Feeding both the same generator
state must therefore give the same draw up to solver tolerance, which is
the workhorse oracle test for this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cg import CGConfig, pcg_solve
from .precond import Preconditioner
from .sparse import DenseSymmetric, SparseDesignMatrix, cholesky


class PrecisionOperator:
    """Matrix-free Phi = X' diag(omega) X + diag(prior_precision_diag).

    Zero entries are allowed in both omega (observation contributes
    nothing) and the prior precision (flat prior on an unshrunk
    coefficient); the operator is positive definite as long as no
    direction is annihilated by both parts at once.
    """

    def __init__(self, X: SparseDesignMatrix, omega, prior_precision_diag):
        omega = np.ascontiguousarray(omega, dtype=np.float64)
        diag = np.ascontiguousarray(prior_precision_diag, dtype=np.float64)
        if omega.shape != (X.n_rows,):
            raise ValueError("omega must have one weight per observation")
        if diag.shape != (X.n_cols,):
            raise ValueError("prior precision must have one entry per column")
        if not np.all(np.isfinite(omega)) or np.any(omega < 0.0):
            raise ValueError("omega must be finite and nonnegative")
        if not np.all(np.isfinite(diag)) or np.any(diag < 0.0):
            raise ValueError("prior precision must be finite and nonnegative")
        self.X = X
        self.omega = omega
        self.prior_precision_diag = diag
        self.apply_count = 0

    @property
    def dim(self) -> int:
        return self.X.n_cols

    def apply(self, v):
        """One product Phi v: two sparse passes plus the diagonal."""
        self.apply_count += 1
        out = self.X.matvec_t(self.omega * self.X.matvec(v))
        out += self.prior_precision_diag * v
        return out

    def dense_matrix(self, dense_cap=None):
        """Materialize Phi for factorizations and spectra."""
        kwargs = {} if dense_cap is None else {"dense_cap": dense_cap}
        gram = self.X.weighted_gram(self.omega, **kwargs)
        entries = gram.entries.copy()
        idx = np.arange(self.dim)
        entries[idx, idx] += self.prior_precision_diag
        return entries


@dataclass
class GaussianTarget:
    """N(Phi^{-1} linear_term, Phi^{-1}) described by its natural
    parameters."""

    precision: PrecisionOperator
    linear_term: np.ndarray

    def __post_init__(self):
        self.linear_term = np.ascontiguousarray(self.linear_term,
                                                dtype=np.float64)
        if self.linear_term.shape != (self.precision.dim,):
            raise ValueError("linear term length must match the precision")
        if not np.all(np.isfinite(self.linear_term)):
            raise ValueError("linear term must be finite")

    @classmethod
    def from_pseudo_outcome(cls, precision: PrecisionOperator, y_prime):
        """Target with linear term X' Omega y'."""
        y_prime = np.asarray(y_prime, dtype=np.float64)
        lt = precision.X.matvec_t(precision.omega * y_prime)
        return cls(precision, lt)


def generate_rhs(target: GaussianTarget, rng) -> np.ndarray:
    """Randomized right-hand side b with mean linear_term and Cov(b) = Phi.

    b = linear_term + X' Omega^{1/2} eta + D^{1/2} delta. Stream order is
    part of the contract: eta (one standard normal per observation, in
    index order) is drawn first, then delta (one per coefficient), so two
    samplers seeded identically consume identical noise.
    """
    phi = target.precision
    eta = rng.standard_normal(phi.X.n_rows)
    delta = rng.standard_normal(phi.dim)
    b = target.linear_term + phi.X.matvec_t(np.sqrt(phi.omega) * eta)
    b += np.sqrt(phi.prior_precision_diag) * delta
    return b


def cg_sample(target: GaussianTarget, M: Preconditioner, rng, x0=None,
              config: CGConfig | None = None, residual_scale=None):
    """Draw beta by solving Phi beta = b iteratively.

    Returns the draw together with the CGReport so callers can track
    iteration counts and residual traces.
    """
    b = generate_rhs(target, rng)
    report = pcg_solve(target.precision, b, M, x0=x0, config=config,
                       residual_scale=residual_scale)
    return report.solution, report


def direct_sample(target: GaussianTarget, rng, dense_cap=None) -> np.ndarray:
    """Draw beta through a dense Cholesky factorization of Phi.

    Consumes the same (eta, delta) stream as cg_sample and applies two
    triangular solves, which is algebraically mu + L^{-T} z with
    z = L^{-1}(b - linear_term) a standard normal vector.
    """
    phi = target.precision
    entries = phi.dense_matrix(dense_cap=dense_cap)
    cap = entries.shape[0] if dense_cap is None else dense_cap
    L = cholesky(DenseSymmetric(entries, dense_cap=cap))
    b = generate_rhs(target, rng)
    return scipy.linalg.cho_solve((L, True), b)
