"""Preconditioners for the conjugate-gradient engine.

Every preconditioner here exposes a single operation ``apply_inverse(v)``
computing M^{-1} v; the engine never needs M^{-1/2}.  Diagonal kinds store the
inverse diagonal explicitly.  The block-threshold kind composes a dense k-by-k
correction with the prior diagonal: conceptually the prior transform is applied
first and the leading block of the transformed matrix is solved exactly, so
its ``apply_inverse`` is d * solve(I_k + B_kk) * d with d = tau*lambda.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from priorcg.sparse import DEFAULT_DENSE_CAP, cholesky


class PreconditionerKind(enum.Enum):
    PRIOR = "prior"
    JACOBI = "jacobi"
    AUGMENTED_PRIOR = "augmented"
    BLOCK_THRESHOLD = "block"
    IDENTITY = "identity"


class DegeneratePreconditionerError(ValueError):
    """The requested preconditioner has a non-invertible diagonal."""


@dataclass
class Preconditioner:
    """M^{-1} in one of the supported shapes.

    ``inv_diagonal`` holds the diagonal of M^{-1} for the diagonal kinds, and
    the prior diagonal tau^2 lambda^2 for the block-threshold kind (whose
    inverse additionally solves the dense block).
    """

    kind: PreconditionerKind
    inv_diagonal: np.ndarray
    block_indices: np.ndarray | None = None
    block_chol: np.ndarray | None = None
    _sqrt_inv_diagonal: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.inv_diagonal = np.asarray(self.inv_diagonal, dtype=np.float64)
        if np.any(~np.isfinite(self.inv_diagonal)) or np.any(self.inv_diagonal <= 0):
            raise DegeneratePreconditionerError(
                "inverse-diagonal entries must be finite and strictly positive")
        self._sqrt_inv_diagonal = np.sqrt(self.inv_diagonal)

    @property
    def dim(self):
        return len(self.inv_diagonal)

    def apply_inverse(self, v):
        """Return M^{-1} v."""
        if self.kind is PreconditionerKind.BLOCK_THRESHOLD:
            w = self._sqrt_inv_diagonal * v
            w[self.block_indices] = scipy.linalg.cho_solve(
                (self.block_chol, True), w[self.block_indices])
            return self._sqrt_inv_diagonal * w
        return self.inv_diagonal * v

    def to_dense_inverse(self):
        """Dense M^{-1}, for oracle tests and spectrum diagnostics."""
        if self.kind is PreconditionerKind.BLOCK_THRESHOLD:
            p = self.dim
            inner = np.eye(p)
            block_inv = scipy.linalg.cho_solve((self.block_chol, True),
                                               np.eye(len(self.block_indices)))
            inner[np.ix_(self.block_indices, self.block_indices)] = block_inv
            d = self._sqrt_inv_diagonal
            return d[:, None] * inner * d[None, :]
        return np.diag(self.inv_diagonal)


def identity_preconditioner(p):
    """M = I (no preconditioning)."""
    return Preconditioner(PreconditionerKind.IDENTITY, np.ones(p))


def prior_preconditioner(tau, lam):
    """M = tau^{-2} Lambda^{-2}, the conditional prior precision of beta.

    Parameters
    ----------
    tau : float
        Global scale, > 0.
    lam : array
        Local scales, all > 0 and finite.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError("tau must be positive and finite")
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise ValueError("lambda entries must be positive and finite")
    return Preconditioner(PreconditionerKind.PRIOR, (tau * lam) ** 2)


def jacobi_preconditioner(X, omega, tau, lam, prior_precision=None):
    """M = diag(Phi) with Phi_jj = sum_i omega_i x_ij^2 + (tau lambda_j)^{-2}.

    ``prior_precision`` overrides the (tau lambda)^{-2} part when the prior
    diagonal is not uniform over columns (an unshrunk leading block).
    """
    if prior_precision is None:
        lam = np.asarray(lam, dtype=np.float64)
        prior_precision = (tau * lam) ** -2.0
    diag = X.gram_diagonal(omega) + prior_precision
    if np.any(diag <= 0) or np.any(~np.isfinite(diag)):
        raise DegeneratePreconditionerError("Phi has a nonpositive diagonal entry")
    return Preconditioner(PreconditionerKind.JACOBI, 1.0 / diag)


def augmented_prior(tau, lam, gamma):
    """Prior preconditioner extended over unshrunk coefficients.

    The unshrunk block (first ``len(gamma)`` coordinates) uses M_jj =
    gamma_j^{-2}; the remaining coordinates use the prior diagonal.  With an
    empty ``gamma`` this is exactly :func:`prior_preconditioner`.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.size == 0:
        return prior_preconditioner(tau, lam)
    if np.any(~np.isfinite(gamma)) or np.any(gamma <= 0):
        raise ValueError("gamma entries must be positive and finite")
    lam = np.asarray(lam, dtype=np.float64)
    inv_diag = np.concatenate([gamma ** 2, (tau * lam) ** 2])
    return Preconditioner(PreconditionerKind.AUGMENTED_PRIOR, inv_diag)


def gamma_policy(chain, c=1.0, prior_sd=None, sd_cap=10.0, sd_floor=1e-3):
    """Scales for the unshrunk block of the augmented preconditioner.

    Returns ``c`` times the running sample sd of each unshrunk coefficient's
    draws.  Before two draws exist the prior sds are used instead (infinite
    sds capped at ``sd_cap``); degenerate running sds fall back to
    ``sd_floor``.

    ``chain`` may be None (cold start); otherwise it must expose
    ``unshrunk_sd()`` returning per-coordinate running sds or None.
    """
    sds = chain.unshrunk_sd() if chain is not None else None
    if sds is None:
        if prior_sd is None:
            raise ValueError("cold-start gamma_policy needs the prior sds")
        sds = np.minimum(np.asarray(prior_sd, dtype=np.float64), sd_cap)
    return c * np.maximum(np.asarray(sds, dtype=np.float64), sd_floor)


def block_threshold(X, omega, tau, lam, k, dense_cap=DEFAULT_DENSE_CAP):
    """Thresholding preconditioner layered on top of the prior transform.

    The prior-transformed matrix tau^2 Lambda X'OmegaX Lambda + I is
    approximated by the identity plus its k-by-k block on the k largest
    tau*lambda_j indices (ties broken toward the lower index).  ``k = 0``
    degenerates to the plain prior preconditioner; ``k = p`` makes PCG
    converge in one iteration.
    """
    lam = np.asarray(lam, dtype=np.float64)
    p = len(lam)
    if not 0 <= k <= p:
        raise ValueError("block size k must lie in [0, p]")
    prior = prior_preconditioner(tau, lam)
    if k == 0:
        return prior
    if k > dense_cap:
        raise ValueError(f"block size {k} exceeds the dense cap {dense_cap}")
    order = np.argsort(-tau * lam, kind="stable")
    idx = np.sort(order[:k])
    sub = _column_gram(X, omega, idx)
    tl = tau * lam[idx]
    block = tl[:, None] * sub * tl[None, :] + np.eye(k)
    factor = cholesky(0.5 * (block + block.T))
    return Preconditioner(PreconditionerKind.BLOCK_THRESHOLD, prior.inv_diagonal,
                          block_indices=idx, block_chol=factor)


def _column_gram(X, omega, idx):
    """(X' Omega X)[idx, idx] via one matvec_t per selected column."""
    omega = np.asarray(omega, dtype=np.float64)
    k = len(idx)
    sub = np.empty((k, k))
    for a, j in enumerate(idx):
        e = np.zeros(X.n_cols)
        e[j] = 1.0
        col = X.matvec_t(omega * X.matvec(e))
        sub[:, a] = col[idx]
    return 0.5 * (sub + sub.T)
