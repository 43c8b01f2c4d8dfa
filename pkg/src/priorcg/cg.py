"""Preconditioned conjugate gradients with an RMS prior-residual stopping rule.

The solver runs the classical Hestenes-Stiefel recurrence (no restarts, no
reorthogonalization) and terminates when the root-mean-squared scaled residual

    p^{-1/2} || s * (Phi x_k - b) ||_2

drops below the configured threshold, where the metric scale ``s`` is
tau*lambda_j for shrunk coordinates (gamma_j for unshrunk ones).  The same
metric is used under every preconditioner so that iteration counts are
comparable across them.

Also here: condition-number error bounds for the CG trajectory and the
deflated ("effective") condition number obtained by splitting off the largest
prior-scale directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from priorcg.precond import Preconditioner, PreconditionerKind
from priorcg.sparse import NotPositiveDefiniteError


class NumericBreakdownError(RuntimeError):
    """Non-finite quantity inside the CG recurrence."""

    def __init__(self, iteration, message=None):
        super().__init__(message or f"non-finite value at CG iteration {iteration}")
        self.iteration = iteration


@dataclass
class CGConfig:
    """Solver knobs.  ``max_iter`` defaults to 2p at solve time."""

    max_iter: int | None = None
    rtol: float = 1e-6
    trace_level: str = "norms"

    def __post_init__(self):
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.trace_level not in ("none", "norms", "full"):
            raise ValueError("trace_level must be one of none|norms|full")


@dataclass
class CGReport:
    """Outcome of one PCG solve.

    ``rms_precond_residual_trace`` has ``iterations + 1`` entries (the leading
    one belongs to the initial vector).  ``iterates`` is populated only at
    trace level "full".  ``alphas``/``betas`` are the CG step and conjugation
    coefficients, from which :meth:`lanczos_tridiagonal` rebuilds the Lanczos
    matrix whose eigenvalues are the Ritz values of the preconditioned
    operator.
    """

    iterations: int
    termination: str
    rms_precond_residual_trace: np.ndarray
    solution: np.ndarray
    matvec_count: int
    alphas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    betas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterates: list | None = None

    def lanczos_tridiagonal(self):
        """(diagonal, offdiagonal) of the k-by-k Lanczos tridiagonal matrix."""
        k = len(self.alphas)
        diag = np.empty(k)
        off = np.empty(max(k - 1, 0))
        for i in range(k):
            diag[i] = 1.0 / self.alphas[i]
            if i > 0:
                diag[i] += self.betas[i - 1] / self.alphas[i - 1]
            if i < k - 1:
                off[i] = math.sqrt(self.betas[i]) / self.alphas[i]
        return diag, off


def _metric_scale(phi, M, residual_scale, p):
    if residual_scale is not None:
        scale = np.asarray(residual_scale, dtype=np.float64)
        if scale.shape != (p,) or np.any(scale <= 0) or np.any(~np.isfinite(scale)):
            raise ValueError("residual_scale must be positive, finite, length p")
        return scale
    prior_diag = getattr(phi, "prior_precision_diag", None)
    if prior_diag is not None and np.all(prior_diag > 0):
        return np.asarray(prior_diag, dtype=np.float64) ** -0.5
    if M.kind in (PreconditionerKind.PRIOR, PreconditionerKind.AUGMENTED_PRIOR):
        return np.sqrt(M.inv_diagonal)
    raise ValueError(
        "cannot derive the residual metric (flat-prior coordinates present); "
        "pass residual_scale explicitly")


def pcg_solve(phi, b, M, x0=None, config=None, residual_scale=None):
    """Solve Phi x = b by preconditioned CG.

    Parameters
    ----------
    phi : object with ``apply(v)`` or a callable
        The precision operator; applied exactly ``iterations + 1`` times.
    b : array
        Right-hand side.
    M : Preconditioner
    x0 : array, optional
        Initial vector (default zero).
    config : CGConfig, optional
    residual_scale : array, optional
        Metric scale for the termination rule; derived from the operator's
        prior precision diagonal (or a prior-type M) when omitted.

    Returns
    -------
    CGReport
    """
    cfg = config if config is not None else CGConfig()
    apply_phi = phi.apply if hasattr(phi, "apply") else phi
    b = np.asarray(b, dtype=np.float64)
    p = b.shape[0]
    max_iter = cfg.max_iter if cfg.max_iter is not None else 2 * p
    scale = _metric_scale(phi, M, residual_scale, p)
    block = M.kind is PreconditionerKind.BLOCK_THRESHOLD
    minv = None if block else M.inv_diagonal
    full = cfg.trace_level == "full"

    x = np.zeros(p) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply_phi(x)
    matvecs = 1
    t = scale * r
    rms = math.sqrt(float(np.dot(t, t)) / p)
    if not np.isfinite(rms):
        raise NumericBreakdownError(0)
    trace = [rms]
    alphas = []
    betas = []
    iterates = [x.copy()] if full else None
    rtol = cfg.rtol
    k = 0
    if rms > rtol:
        z = M.apply_inverse(r) if block else minv * r
        rz = float(np.dot(r, z))
        d = z.copy()
        while k < max_iter:
            k += 1
            Ad = apply_phi(d)
            matvecs += 1
            dAd = float(np.dot(d, Ad))
            if not dAd > 0:
                raise NotPositiveDefiniteError(
                    f"direction with d'Phi d = {dAd} at CG iteration {k}")
            alpha = rz / dAd
            alphas.append(alpha)
            x += alpha * d
            r -= alpha * Ad
            t = scale * r
            rms = math.sqrt(float(np.dot(t, t)) / p)
            trace.append(rms)
            if full:
                iterates.append(x.copy())
            if rms <= rtol:
                break
            if not np.isfinite(rms):
                raise NumericBreakdownError(k)
            z = M.apply_inverse(r) if block else minv * r
            rz_new = float(np.dot(r, z))
            beta = rz_new / rz
            betas.append(beta)
            rz = rz_new
            d *= beta
            d += z

    termination = "converged" if rms <= rtol else "max_iter"
    return CGReport(
        iterations=k,
        termination=termination,
        rms_precond_residual_trace=np.array(trace),
        solution=x,
        matvec_count=matvecs,
        alphas=np.array(alphas),
        betas=np.array(betas),
        iterates=iterates,
    )


def initial_vector(chain, tau, lam, n_unshrunk=0):
    """Warm-start vector: current scales times the running scaled-draw mean.

    Each stored draw is divided by the tau*lambda it was conditioned on
    (unshrunk coordinates stay raw); the running mean of those ratios times the
    current tau*lambda is the start vector.  An empty or absent chain yields
    zeros.
    """
    lam = np.asarray(lam, dtype=np.float64)
    p_total = n_unshrunk + len(lam)
    mean = chain.scaled_beta_mean() if chain is not None else None
    if mean is None:
        return np.zeros(p_total)
    if mean.shape != (p_total,):
        raise ValueError("chain coefficient count does not match tau/lambda")
    scale = np.concatenate([np.ones(n_unshrunk), tau * lam])
    return scale * mean


def cg_error_bound(kappa, iters):
    """Condition-number bound 2 ((sqrt(k)-1)/(sqrt(k)+1))^iters on the
    Phi-norm error relative to the initial error."""
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    rho = (math.sqrt(kappa) - 1.0) / (math.sqrt(kappa) + 1.0)
    if rho == 0.0:
        # One-point spectrum: CG is exact from its first step on.
        return 0.0
    return 2.0 * rho ** iters


def chebyshev_error_bound(nu_min, nu_max, iters):
    """Sharp interval bound 1 / |T_k(c)| with c = (max+min)/(max-min).

    This is the min-max value over polynomials of degree ``iters`` equal to 1
    at the origin, evaluated on [nu_min, nu_max]; it is tighter than
    :func:`cg_error_bound` (which over-bounds it by the factor 2).
    """
    if not 0 < nu_min <= nu_max:
        raise ValueError("need 0 < nu_min <= nu_max")
    if iters == 0:
        return 1.0
    if nu_max == nu_min:
        return 0.0
    c = (nu_max + nu_min) / (nu_max - nu_min)
    with np.errstate(over="ignore"):
        return float(1.0 / np.cosh(iters * np.arccosh(c)))


def effective_condition_number(tau, lam, subspectra, m):
    """Deflated condition number after the m largest directions resolve.

    ``subspectra`` maps a drop count k to the descending spectrum of
    X'OmegaX with the k largest tau*lambda coordinates removed (k = 0 being
    the full spectrum).  The result is

        1 + min over k + l = m of tau^2 lambda_(k+1)^2 nu_{l+1}(subspectra[k])

    minimized over the drop counts available in ``subspectra``.
    """
    lam_sorted = np.sort(np.asarray(lam, dtype=np.float64))[::-1]
    p = len(lam_sorted)
    if m < 0:
        raise ValueError("m must be nonnegative")
    best = None
    for k, spectrum in _iter_subspectra(subspectra):
        ell = m - k
        if ell < 0 or k >= p:
            continue
        spectrum = np.asarray(spectrum, dtype=np.float64)
        if ell >= len(spectrum):
            continue
        cand = tau ** 2 * lam_sorted[k] ** 2 * spectrum[ell]
        if best is None or cand < best:
            best = cand
    if best is None:
        raise ValueError(f"no subspectrum covers a split of m = {m}")
    return 1.0 + best


def _iter_subspectra(subspectra):
    if isinstance(subspectra, dict):
        return sorted(subspectra.items())
    return enumerate(subspectra)
