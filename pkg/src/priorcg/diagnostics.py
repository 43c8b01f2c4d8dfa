"""Spectrum reports, iterate-error metrics, and chain accuracy checks.

Everything here runs at desk scale: matrices are formed densely, so the
routines double as numerical verification of the eigenvalue and
convergence bounds that the matrix-free solver relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .precond import Preconditioner, PreconditionerKind
from .sampler import PrecisionOperator
from .sparse import cholesky, sym_eigenvalues

_LOG10_BIN_WIDTH = 0.1

_DEFAULT_TRIM = {
    PreconditionerKind.PRIOR: (0.0, 1.0),
    PreconditionerKind.JACOBI: (-1.0, 0.0),
}
_VARIANT_TRIM = (-0.5, 0.5)


@dataclass
class SpectrumReport:
    """Descending eigenvalues with a fixed-width log10 histogram.

    ``trim_range`` is the log10 window conventionally dropped when the
    spectrum is displayed; the histogram itself always covers every
    eigenvalue.
    """

    eigenvalues: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    trim_range: tuple

    def trimmed_eigenvalues(self):
        """Eigenvalues outside the display window [10^lo, 10^hi]."""
        lo, hi = self.trim_range
        logs = np.log10(self.eigenvalues)
        return self.eigenvalues[(logs < lo) | (logs > hi)]


def _log10_histogram(values):
    logs = np.log10(values)
    lo = math.floor(logs.min() / _LOG10_BIN_WIDTH) * _LOG10_BIN_WIDTH
    hi = math.ceil(logs.max() / _LOG10_BIN_WIDTH) * _LOG10_BIN_WIDTH
    if hi <= lo + 1e-12:
        hi = lo + _LOG10_BIN_WIDTH
    n_bins = int(round((hi - lo) / _LOG10_BIN_WIDTH))
    edges = lo + _LOG10_BIN_WIDTH * np.arange(n_bins + 1)
    # rounding in the edge arithmetic must never push a value outside
    edges[0] = min(edges[0], logs.min())
    edges[-1] = max(edges[-1], logs.max())
    counts, _ = np.histogram(logs, bins=edges)
    return edges, counts


def preconditioned_spectrum(X, omega, tau, lam, M: Preconditioner,
                            trim_range=None, dense_cap=None,
                            prior_precision=None) -> SpectrumReport:
    """Eigenvalues of M^{-1/2} Phi M^{-1/2}, built densely.

    ``prior_precision`` overrides the (tau lam)^{-2} diagonal when the
    model carries an unshrunk block. The default display trim is (0, 1)
    in log10 for the prior preconditioner, (-1, 0) for Jacobi, and
    (-0.5, 0.5) for the other variants.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if prior_precision is None:
        prior_precision = (tau * lam) ** -2.0
    phi = PrecisionOperator(X, omega, prior_precision)
    dense = phi.dense_matrix(dense_cap=dense_cap)
    if M.kind is PreconditionerKind.BLOCK_THRESHOLD:
        # M^{-1} is not diagonal; use M^{-1} = S S' and the similarity
        # of S' Phi S to the symmetrically preconditioned matrix.
        S = cholesky(M.to_dense_inverse())
        mat = S.T @ dense @ S
    else:
        d = np.sqrt(M.inv_diagonal)
        mat = d[:, None] * dense * d[None, :]
    eigs = sym_eigenvalues(0.5 * (mat + mat.T))
    if trim_range is None:
        trim_range = _DEFAULT_TRIM.get(M.kind, _VARIANT_TRIM)
    edges, counts = _log10_histogram(eigs)
    return SpectrumReport(eigenvalues=eigs, bin_edges=edges, counts=counts,
                          trim_range=tuple(trim_range))


def submatrix_spectra(X, omega, lam, ks, dense_cap=None):
    """Descending spectra of X' Omega X with the k largest-lambda
    rows/columns removed, for each k in ``ks``.

    Ties in lambda break toward the lower column index, matching the
    thresholding preconditioner's selection rule.
    """
    lam = np.asarray(lam, dtype=np.float64)
    p = lam.size
    kwargs = {} if dense_cap is None else {"dense_cap": dense_cap}
    gram = X.weighted_gram(omega, **kwargs).entries
    order = np.argsort(-lam, kind="stable")
    out = {}
    for k in sorted(set(int(k) for k in ks)):
        if not 0 <= k < p:
            raise ValueError(f"cannot drop {k} of {p} coordinates")
        keep = np.sort(order[k:])
        out[k] = sym_eigenvalues(gram[np.ix_(keep, keep)])
    return out


@dataclass
class SpectrumBoundCheck:
    """One (k, l) evaluation of the eigenvalue sandwich."""

    k: int
    ell: int
    observed: float          # nu_{k+l+1} of the preconditioned matrix
    submatrix_bound: float   # 1 + tau^2 lam_(k+1)^2 nu_{l+1}(gram minus k)
    full_bound: float        # same with the unreduced gram spectrum
    passed: bool


def check_spectrum_bounds(X, omega, tau, lam, grid, slack=1e-8,
                          dense_cap=None):
    """Check 1 <= nu_{k+l+1}(Phi-tilde) <= submatrix bound <= full bound
    over a grid of (k, l) pairs.

    ``grid`` is an iterable of (k, l) with k, l >= 0; each pair drops the
    k largest local scales and looks l eigenvalues into the remaining
    spectrum. ``slack`` is relative.
    """
    lam = np.asarray(lam, dtype=np.float64)
    p = lam.size
    grid = [(int(k), int(ell)) for k, ell in grid]
    for k, ell in grid:
        if k < 0 or ell < 0 or k + ell + 1 > p or ell + 1 > p - k:
            raise ValueError(f"grid point (k={k}, l={ell}) is out of range "
                             f"for p={p}")
    kwargs = {} if dense_cap is None else {"dense_cap": dense_cap}
    gram = X.weighted_gram(omega, **kwargs).entries
    scaled = (tau * lam)[:, None] * gram * (tau * lam)[None, :]
    tilde_spectrum = sym_eigenvalues(
        0.5 * (scaled + scaled.T) + np.eye(p))
    full_spectrum = sym_eigenvalues(gram)
    subspectra = submatrix_spectra(X, omega, lam, {k for k, _ in grid},
                                   dense_cap=dense_cap)
    lam_desc = np.sort(lam)[::-1]
    out = []
    for k, ell in grid:
        observed = float(tilde_spectrum[k + ell])
        factor = tau ** 2 * lam_desc[k] ** 2
        sub = 1.0 + factor * float(subspectra[k][ell])
        full = 1.0 + factor * float(full_spectrum[ell])
        passed = (observed >= 1.0 - slack
                  and observed <= sub * (1.0 + slack)
                  and sub <= full * (1.0 + slack))
        out.append(SpectrumBoundCheck(k, ell, observed, sub, full, passed))
    return out


@dataclass
class ErrorTrace:
    """Per-iteration error metrics against an oracle solution."""

    rel_coord_error: np.ndarray
    l2_error: np.ndarray
    phi_norm_error: np.ndarray
    rms_precond_residual: np.ndarray
    n_guarded_coords: int

    def __post_init__(self):
        lengths = {len(self.rel_coord_error), len(self.l2_error),
                   len(self.phi_norm_error), len(self.rms_precond_residual)}
        if len(lengths) != 1:
            raise ValueError("error trace arrays must share one length")


def error_trace(report, beta_star, phi) -> ErrorTrace:
    """Evaluate all four error metrics along a CG trajectory.

    ``report`` must come from a solve with trace_level="full" so the
    iterates are available; ``phi`` is applied once per iterate for the
    Phi-norm. Coordinates with |beta*_j| < 1e-300 are left out of the
    relative coordinate error and counted in ``n_guarded_coords``.
    """
    if report.iterates is None:
        raise ValueError("error_trace needs a report with stored iterates "
                         "(trace_level='full')")
    beta_star = np.asarray(beta_star, dtype=np.float64)
    apply_phi = phi.apply if hasattr(phi, "apply") else phi
    usable = np.abs(beta_star) >= 1e-300
    n_guarded = int(beta_star.size - usable.sum())
    rel = np.empty(len(report.iterates))
    l2 = np.empty_like(rel)
    phin = np.empty_like(rel)
    for i, it in enumerate(report.iterates):
        delta = it - beta_star
        l2[i] = math.sqrt(float(delta @ delta))
        phin[i] = math.sqrt(max(float(delta @ apply_phi(delta)), 0.0))
        if usable.any():
            rel[i] = float(np.mean(np.abs(delta[usable] / beta_star[usable])))
        else:
            rel[i] = 0.0
    return ErrorTrace(rel_coord_error=rel, l2_error=l2, phi_norm_error=phin,
                      rms_precond_residual=np.asarray(
                          report.rms_precond_residual_trace, dtype=np.float64),
                      n_guarded_coords=n_guarded)


@dataclass
class TauLambdaProfile:
    """Sorted tau*lambda magnitudes and their display summaries."""

    sorted_values: np.ndarray       # descending
    relative_top: np.ndarray        # leading <=250 values over the max
    bin_edges: np.ndarray
    counts: np.ndarray


def tau_lambda_profile(state, top=250) -> TauLambdaProfile:
    """Profile of the shrinkage scales tau*lambda_j of one state."""
    values = np.sort(state.tau * np.asarray(state.lam, dtype=np.float64))[::-1]
    if values.size == 0 or values[0] <= 0:
        raise ValueError("profile needs positive scales")
    edges, counts = _log10_histogram(values)
    return TauLambdaProfile(sorted_values=values,
                            relative_top=values[:top] / values[0],
                            bin_edges=edges, counts=counts)


def effective_sample_size(x) -> float:
    """ESS from the initial-positive-sequence autocorrelation estimator,
    capped at the series length."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2:
        return float(n)
    x = x - x.mean()
    var = float(x @ x)
    if var <= 0.0 or not math.isfinite(var):
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n]
    rho = acov / acov[0]
    iact = -1.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        iact += 2.0 * pair
        k += 1
    if iact <= 0.0:
        return float(n)
    return float(min(n / iact, n))


@dataclass
class DifferenceTest:
    """Per-coefficient standardized mean differences of two chains."""

    z_scores: np.ndarray
    excluded: np.ndarray   # True where either chain's ESS fell below floor
    ess_a: np.ndarray
    ess_b: np.ndarray


def standardized_difference_test(chain_a, chain_b,
                                 ess_floor=10.0) -> DifferenceTest:
    """z-scores (meanA_j - meanB_j) / se_j with ESS-adjusted standard
    errors; under matching stationary distributions they are roughly
    standard normal.

    Coefficients whose ESS drops below ``ess_floor`` in either chain are
    flagged in ``excluded`` and should be left out of omnibus normality
    checks.
    """
    draws_a = chain_a.draws if hasattr(chain_a, "draws") else np.asarray(chain_a)
    draws_b = chain_b.draws if hasattr(chain_b, "draws") else np.asarray(chain_b)
    if draws_a.ndim != 2 or draws_b.ndim != 2 \
            or draws_a.shape[1] != draws_b.shape[1]:
        raise ValueError("chains must store draws for the same model")
    if min(draws_a.shape[0], draws_b.shape[0]) < 2:
        raise ValueError("need at least two draws per chain")
    p = draws_a.shape[1]
    ess_a = np.array([effective_sample_size(draws_a[:, j]) for j in range(p)])
    ess_b = np.array([effective_sample_size(draws_b[:, j]) for j in range(p)])
    var_a = draws_a.var(axis=0, ddof=1)
    var_b = draws_b.var(axis=0, ddof=1)
    diff = draws_a.mean(axis=0) - draws_b.mean(axis=0)
    se = np.sqrt(var_a / ess_a + var_b / ess_b)
    z = np.zeros(p)
    moved = diff != 0.0
    with np.errstate(divide="ignore"):
        z[moved] = diff[moved] / se[moved]
    return DifferenceTest(z_scores=z, excluded=(ess_a < ess_floor)
                          | (ess_b < ess_floor), ess_a=ess_a, ess_b=ess_b)
