"""Gibbs sampler for sparse Bayesian logistic regression.

Model: y_i ~ Bernoulli(sigmoid(x_i' beta)). Shrunk coefficients carry a
bridge prior with exponent alpha through the scale mixture
beta_j | lam_j, tau ~ N(0, tau^2 lam_j^2); an optional leading block of
unshrunk coefficients carries independent N(0, sigma_j^2) or flat
priors. The global scale is handled on the phi = tau^{-alpha} axis,
where a Gamma(a0, b0) prior is conjugate once the local scales are
integrated out.

Scan order per iteration: omega | beta (Polya-Gamma), tau | beta
(collapsed over lam), lam | beta, tau, then beta | omega, lam, tau, y
through either the matrix-free CG sampler or the dense Cholesky one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .cg import CGConfig, initial_vector
from .polya_gamma import pg_draw_batch
from .precond import (
    augmented_prior,
    block_threshold,
    gamma_policy,
    identity_preconditioner,
    jacobi_preconditioner,
)
from .sampler import GaussianTarget, PrecisionOperator, cg_sample, direct_sample


class UnsupportedUpdateError(NotImplementedError):
    """Raised for conditional updates outside the exact alpha = 1 path."""


class GibbsAbortError(RuntimeError):
    """A scan failed; carries the 1-based iteration index."""

    def __init__(self, iteration, message):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class BridgeConfig:
    """Prior settings for the bridge-logistic model.

    ``unshrunk_prior_sd`` lists the prior sds of the leading unshrunk
    coefficients (possibly empty); ``inf`` encodes a flat prior.
    """

    alpha: float = 1.0
    global_shape: float = 1.0
    global_rate: float = 1.0
    unshrunk_prior_sd: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("bridge exponent alpha must lie in (0, 1]")
        if self.global_shape <= 0.0 or self.global_rate <= 0.0:
            raise ValueError("Gamma prior on tau^-alpha needs positive "
                             "shape and rate")
        sds = tuple(float(s) for s in self.unshrunk_prior_sd)
        if any(s <= 0.0 or math.isnan(s) for s in sds):
            raise ValueError("unshrunk prior sds must be positive (inf = flat)")
        object.__setattr__(self, "unshrunk_prior_sd", sds)

    @property
    def n_unshrunk(self) -> int:
        return len(self.unshrunk_prior_sd)

    def unshrunk_precision(self) -> np.ndarray:
        """Prior precisions of the unshrunk block; flat entries become 0."""
        sd = np.asarray(self.unshrunk_prior_sd, dtype=np.float64)
        out = np.zeros(sd.shape)
        finite = np.isfinite(sd)
        out[finite] = sd[finite] ** -2.0
        return out


@dataclass
class ShrinkageState:
    """One snapshot of the sampler: beta is the unshrunk block followed
    by the shrunk block."""

    beta: np.ndarray
    omega: np.ndarray
    lam: np.ndarray
    tau: float

    def __post_init__(self):
        self.beta = np.ascontiguousarray(self.beta, dtype=np.float64)
        self.omega = np.ascontiguousarray(self.omega, dtype=np.float64)
        self.lam = np.ascontiguousarray(self.lam, dtype=np.float64)
        self.tau = float(self.tau)
        if self.beta.size < self.lam.size:
            raise ValueError("beta must contain the shrunk block")
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("beta must be finite")
        if np.any(self.omega <= 0.0) or not np.all(np.isfinite(self.omega)):
            raise ValueError("omega must be positive and finite")
        if np.any(self.lam <= 0.0) or not np.all(np.isfinite(self.lam)):
            raise ValueError("lambda must be positive and finite")
        if self.tau <= 0.0 or not math.isfinite(self.tau):
            raise ValueError("tau must be positive and finite")


@dataclass
class ChainOutput:
    """Stored draws plus the running statistics the warm-start and
    gamma policies feed on."""

    draws: np.ndarray
    tau_draws: np.ndarray
    logdensity_trace: np.ndarray
    cg_iteration_counts: np.ndarray
    running_mean_scaled_beta: np.ndarray | None
    running_var_unshrunk: np.ndarray
    final_state: ShrinkageState
    seed: int
    n_unshrunk: int
    stat_count: int = field(default=0)

    def scaled_beta_mean(self):
        if self.stat_count == 0:
            return None
        return self.running_mean_scaled_beta

    def unshrunk_sd(self):
        if self.stat_count < 2 or self.n_unshrunk == 0:
            return None
        return np.sqrt(self.running_var_unshrunk)


class _RunningStats:
    """Welford accumulator over scaled beta draws."""

    def __init__(self, p_total, n_unshrunk):
        self.count = 0
        self.mean = np.zeros(p_total)
        self.m2 = np.zeros(n_unshrunk)
        self.n_unshrunk = n_unshrunk

    def update(self, scaled):
        self.count += 1
        delta = scaled - self.mean
        self.mean += delta / self.count
        q = self.n_unshrunk
        if q:
            self.m2 += delta[:q] * (scaled[:q] - self.mean[:q])

    def scaled_beta_mean(self):
        return self.mean if self.count else None

    def unshrunk_sd(self):
        if self.count < 2 or self.n_unshrunk == 0:
            return None
        return np.sqrt(self.m2 / (self.count - 1))

    def var_unshrunk(self):
        if self.count < 2:
            return np.full(self.n_unshrunk, np.nan)
        return self.m2 / (self.count - 1)


def update_omega(state: ShrinkageState, X, y, rng):
    """Polya-Gamma weights omega_i | beta and the pseudo-outcome
    y'_i = (y_i - 1/2) / omega_i."""
    z = X.matvec(state.beta)
    omega = pg_draw_batch(z, rng)
    y_prime = (np.asarray(y, dtype=np.float64) - 0.5) / omega
    return omega, y_prime


def update_global_scale(beta_shrunk, cfg: BridgeConfig, rng) -> float:
    """Conjugate tau draw with the local scales integrated out.

    phi = tau^{-alpha} is Gamma(a0 + p/alpha, b0 + sum_j |beta_j|^alpha).
    """
    beta_shrunk = np.asarray(beta_shrunk, dtype=np.float64)
    rate = cfg.global_rate + float(np.sum(np.abs(beta_shrunk) ** cfg.alpha))
    if rate <= 0.0 or not math.isfinite(rate):
        raise ValueError("improper conditional for tau: nonpositive rate")
    shape = cfg.global_shape + beta_shrunk.size / cfg.alpha
    phi = rng.gamma(shape) / rate
    return float(phi ** (-1.0 / cfg.alpha))


def update_local_scales(beta_shrunk, tau, cfg: BridgeConfig, rng):
    """Local-scale draws for alpha = 1: 1/lam_j^2 is inverse-Gaussian
    with mean tau/|beta_j| and unit shape.

    beta_j = 0 (and near-zero, |beta_j|/tau < 1e-10) uses the exact
    limiting conditional, under which lam_j^2 is chi-square(1).
    """
    if cfg.alpha != 1.0:
        raise UnsupportedUpdateError(
            "exact local-scale draws exist for alpha = 1 only; pass a "
            "custom local_scale_sampler to gibbs_run for other exponents")
    ratio = np.abs(np.asarray(beta_shrunk, dtype=np.float64)) / tau
    lam = np.empty(ratio.shape)
    limit = ratio < 1e-10
    if limit.any():
        lam[limit] = np.maximum(
            np.abs(rng.standard_normal(int(limit.sum()))), 1e-150)
    rest = ~limit
    if rest.any():
        inv_sq = rng.wald(1.0 / ratio[rest], 1.0)
        lam[rest] = np.maximum(inv_sq, 1e-300) ** -0.5
    return lam


def log_density(beta, tau, X, y, cfg: BridgeConfig) -> float:
    """log pi(beta, tau | y, X) up to the model constant, with omega and
    the local scales integrated out."""
    z = X.matvec(beta)
    y = np.asarray(y, dtype=np.float64)
    loglik = float(y @ z - np.sum(np.logaddexp(0.0, z)))
    q = cfg.n_unshrunk
    shrunk = beta[q:]
    p = shrunk.size
    a = cfg.alpha
    out = loglik
    out += p * (math.log(a) - math.log(2.0) - float(gammaln(1.0 / a)))
    out -= p * math.log(tau) + float(np.sum(np.abs(shrunk / tau) ** a))
    if q:
        sd = np.asarray(cfg.unshrunk_prior_sd)
        finite = np.isfinite(sd)
        u = beta[:q][finite] / sd[finite]
        out -= 0.5 * float(u @ u)
        out -= float(np.sum(np.log(sd[finite]))) \
            + 0.5 * finite.sum() * math.log(2.0 * math.pi)
    out += cfg.global_shape * math.log(cfg.global_rate) \
        - float(gammaln(cfg.global_shape)) + math.log(a) \
        - (a * cfg.global_shape + 1.0) * math.log(tau) \
        - cfg.global_rate * tau ** -a
    return out


def _make_preconditioner(name, X, omega, tau, lam, gamma, prior_precision):
    if name == "prior":
        return augmented_prior(tau, lam, gamma)
    if name == "identity":
        return identity_preconditioner(X.n_cols)
    if name == "jacobi":
        return jacobi_preconditioner(X, omega, tau, lam,
                                     prior_precision=prior_precision)
    if name.startswith("block:"):
        if len(gamma):
            raise ValueError("block preconditioner supports models without "
                             "an unshrunk block only")
        return block_threshold(X, omega, tau, lam, int(name[6:]))
    raise ValueError(f"unknown preconditioner {name!r}")


def gibbs_run(X, y, cfg: BridgeConfig, n_iter, burn_in=0, sampler="cg",
              seed=0, thin=1, preconditioner="prior", cg_config=None,
              burn_in_sampler=None, init_state=None, local_scale_sampler=None,
              gamma_scale=1.0, allow_max_iter=False,
              fixed_omega=None, fixed_tau=None, fixed_lam=None,
              on_progress=None) -> ChainOutput:
    """Run the sampler for ``n_iter`` scans (the first ``burn_in`` of
    which are warmup) and store every ``thin``-th post-warmup draw.

    ``sampler`` selects the beta update ("cg" or "direct");
    ``burn_in_sampler`` optionally overrides it during warmup.  The CG
    path warm-starts from the running scaled-beta mean, preconditions
    with the prior (augmented over any unshrunk block), and measures
    convergence in the scale-standardized residual metric regardless of
    the preconditioner in force.  A CG solve that exhausts max_iter
    aborts the run unless ``allow_max_iter`` is set.

    ``fixed_omega`` / ``fixed_tau`` / ``fixed_lam`` pin individual
    updates, which turns the chain into an exactly tractable sampler
    used by the correctness tests.  ``on_progress``, if given, is called
    as ``on_progress(t, n_iter)`` after every completed scan.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.n_rows,):
        raise ValueError("outcome length must match the design")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("outcomes must be 0/1")
    if n_iter < 0 or burn_in < 0 or burn_in > n_iter:
        raise ValueError("need 0 <= burn_in <= n_iter")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    for name in (sampler, burn_in_sampler):
        if name not in (None, "cg", "direct"):
            raise ValueError(f"unknown sampler {name!r}")

    q = cfg.n_unshrunk
    p = X.n_cols - q
    if p < 0:
        raise ValueError("more unshrunk prior sds than design columns")
    p_total = X.n_cols
    rng = np.random.default_rng(seed)

    if init_state is None:
        state = ShrinkageState(np.zeros(p_total), np.full(X.n_rows, 0.25),
                               np.ones(p), 1.0)
    else:
        state = init_state
        if state.beta.shape != (p_total,) or state.lam.shape != (p,):
            raise ValueError("initial state does not match the model shape")

    unshrunk_prec = cfg.unshrunk_precision()
    local_update = local_scale_sampler or update_local_scales
    stats = _RunningStats(p_total, q)
    n_stored = max(0, (n_iter - burn_in + thin - 1) // thin) if n_iter else 0
    draws = np.empty((n_stored, p_total))
    tau_draws = np.empty(n_stored)
    logdens = np.empty(n_iter)
    cg_counts = []
    stored = 0

    for t in range(1, n_iter + 1):
        if fixed_omega is None:
            omega, y_prime = update_omega(state, X, y, rng)
        else:
            omega = np.asarray(fixed_omega, dtype=np.float64)
            y_prime = (y - 0.5) / omega
        tau = fixed_tau if fixed_tau is not None else \
            update_global_scale(state.beta[q:], cfg, rng)
        lam = np.asarray(fixed_lam, dtype=np.float64) if fixed_lam is not None \
            else local_update(state.beta[q:], tau, cfg, rng)
        if np.any(omega <= 0.0) or tau <= 0.0 or np.any(lam <= 0.0) \
                or not (np.all(np.isfinite(lam)) and math.isfinite(tau)):
            raise GibbsAbortError(t, "scale positivity violated")

        prior_prec = np.concatenate([unshrunk_prec, (tau * lam) ** -2.0])
        phi = PrecisionOperator(X, omega, prior_prec)
        target = GaussianTarget.from_pseudo_outcome(phi, y_prime)
        use = burn_in_sampler if (burn_in_sampler and t <= burn_in) else sampler
        try:
            if use == "direct":
                beta = direct_sample(target, rng)
            else:
                gamma = gamma_policy(stats, c=gamma_scale,
                                     prior_sd=cfg.unshrunk_prior_sd) \
                    if q else np.zeros(0)
                M = _make_preconditioner(preconditioner, X, omega, tau, lam,
                                         gamma, prior_prec)
                x0 = initial_vector(stats, tau, lam, n_unshrunk=q)
                scale = np.concatenate([gamma, tau * lam])
                beta, report = cg_sample(target, M, rng, x0=x0,
                                         config=cg_config,
                                         residual_scale=scale)
                cg_counts.append(report.iterations)
                if report.termination == "max_iter" and not allow_max_iter:
                    raise GibbsAbortError(
                        t, f"CG used all {report.iterations} iterations "
                        "without converging")
        except GibbsAbortError:
            raise
        except Exception as exc:
            raise GibbsAbortError(t, f"beta update failed: {exc}") from exc

        logdens[t - 1] = log_density(beta, tau, X, y, cfg)
        state = ShrinkageState(beta, omega, lam, tau)
        scaled = np.concatenate([beta[:q], beta[q:] / (tau * lam)])
        stats.update(scaled)
        if t > burn_in and (t - burn_in - 1) % thin == 0:
            draws[stored] = beta
            tau_draws[stored] = tau
            stored += 1
        if on_progress is not None:
            on_progress(t, n_iter)

    return ChainOutput(
        draws=draws[:stored], tau_draws=tau_draws[:stored],
        logdensity_trace=logdens,
        cg_iteration_counts=np.asarray(cg_counts, dtype=np.int64),
        running_mean_scaled_beta=stats.scaled_beta_mean(),
        running_var_unshrunk=stats.var_unshrunk(),
        final_state=state, seed=seed, n_unshrunk=q, stat_count=stats.count)
