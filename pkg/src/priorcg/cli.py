"""Command line front end.

Subcommands cover the whole workflow: ``simulate`` writes a synthetic
design, ``gibbs`` runs the sampler, ``cg-bench`` re-solves a frozen
conditional Gaussian under different preconditioners, ``eig-diag`` and
``trace`` emit spectrum and shrinkage-profile diagnostics, and
``compare-chains`` tests two chains for distributional agreement.

Every run writes a ``manifest.json`` next to its outputs with the
resolved flags, seed, library version and input digests; re-running
with the recorded arguments reproduces the outputs bit for bit. Exit
codes: 0 on success, 1 on argument or input errors, 2 on numeric
failure. Flags can come from a file via ``@path`` arguments holding
``name=value`` lines.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.stats
from threadpoolctl import threadpool_limits

from . import __version__
from . import matrixio, plots, stateio
from .cg import CGConfig, NumericBreakdownError, pcg_solve
from .diagnostics import (ErrorTrace, error_trace, preconditioned_spectrum,
                          standardized_difference_test, tau_lambda_profile)
from .gibbs import (BridgeConfig, GibbsAbortError, _make_preconditioner,
                    gibbs_run)
from .sampler import GaussianTarget, PrecisionOperator, generate_rhs
from .sparse import (NotPositiveDefiniteError, SparseDesignMatrix, cholesky,
                     hstack_dense_columns)
from .synthdata import SimSpec, offdiagonal_correlation_sd, simulate_design, \
    simulate_outcomes

OUT_DIR_ENV = "PRIORCG_OUT_DIR"

_NUMERIC_ERRORS = (NumericBreakdownError, GibbsAbortError,
                   NotPositiveDefiniteError, np.linalg.LinAlgError,
                   FloatingPointError)


class UsageError(Exception):
    """Bad command line; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    """argparse variant that raises instead of calling sys.exit(2)."""

    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\n"
                         f"{self.prog}: error: {message}")

    def convert_arg_line_to_args(self, line):
        line = line.strip()
        if not line or line.startswith("#"):
            return []
        if line.startswith("-"):
            return line.split()
        if "=" in line:
            key, value = line.split("=", 1)
            return [f"--{key.strip()}", value.strip()]
        return [f"--{line}"]


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out_dir: Path, args, argv, started, inputs=(),
                    outputs=()) -> None:
    flags = {k: v for k, v in vars(args).items()
             if k not in ("func", "subcommand")}
    manifest = {
        "subcommand": args.subcommand,
        "argv": list(argv),
        "flags": flags,
        "seed": flags.get("seed"),
        "version": __version__,
        "input_digests": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": _utc_now(),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def _validate_preconditioner(name: str) -> str:
    if name in ("prior", "jacobi", "identity"):
        return name
    if name.startswith("block:"):
        try:
            k = int(name[6:])
        except ValueError:
            raise UsageError(f"bad block size in {name!r}") from None
        if k < 0:
            raise UsageError("block size must be >= 0")
        return name
    raise UsageError(f"unknown preconditioner {name!r} (expected prior, "
                     "jacobi, identity, or block:<k>)")


def _load_bench_inputs(args):
    """Shared setup for cg-bench and eig-diag: rebuild the conditional
    Gaussian frozen in a state file.

    Coefficients beyond the shrunk block (an intercept saved by
    ``gibbs --add-intercept``) are treated as flat-prior coordinates
    with unit residual scale.
    """
    state = stateio.load_state(args.state)
    design = matrixio.load_design(args.x)
    X = SparseDesignMatrix.from_dense(design)
    if X.n_rows != state.omega.size or X.n_cols != state.beta.size:
        raise UsageError(
            f"design is {X.n_rows}x{X.n_cols} but the state holds "
            f"{state.omega.size} weights and {state.beta.size} coefficients")
    q = state.beta.size - state.lam.size
    prior_prec = np.concatenate([np.zeros(q), (state.tau * state.lam) ** -2.0])
    M = _make_preconditioner(args.preconditioner, X, state.omega, state.tau,
                             state.lam, np.ones(q), prior_prec)
    scale = np.concatenate([np.ones(q), state.tau * state.lam])
    return state, X, prior_prec, M, scale


def _cmd_simulate(args, argv, started) -> int:
    spec = SimSpec(n=args.n, p=args.p, n_factors=args.m, n_signals=args.k,
                   seed=args.seed, signal_value=args.signal_value)
    rng = np.random.default_rng(spec.seed)
    design = simulate_design(spec, rng)
    y = simulate_outcomes(design, spec, rng)
    out = _out_dir(args)
    if args.format == "mtx":
        x_path = out / "X.mtx"
        matrixio.write_design(x_path, design)
    else:
        x_path = out / "X.csv"
        matrixio.write_design_csv(x_path, design)
    y_path = out / "y.csv"
    matrixio.write_vector_csv(y_path, y, "y")
    corr_sd = offdiagonal_correlation_sd(
        design, rng=np.random.default_rng(spec.seed))
    print(f"simulated n={spec.n} p={spec.p} factors={spec.n_factors} "
          f"signals={spec.n_signals} cases={int(y.sum())}")
    print(f"realized off-diagonal correlation sd: {corr_sd:.6f}")
    print(f"wrote {x_path} and {y_path}")
    _write_manifest(out, args, argv, started, outputs=[x_path, y_path])
    return 0


def _cmd_gibbs(args, argv, started) -> int:
    _validate_preconditioner(args.preconditioner)
    design = matrixio.load_design(args.x)
    y = matrixio.read_vector_csv(args.y, "y")
    X = SparseDesignMatrix.from_dense(design)
    sds = ()
    if args.add_intercept:
        X = hstack_dense_columns(np.ones((X.n_rows, 1)), X)
        sds = (np.inf,)
    cfg = BridgeConfig(global_shape=args.global_shape,
                       global_rate=args.global_rate, unshrunk_prior_sd=sds)
    cg_config = CGConfig(max_iter=args.max_iter, rtol=args.rtol)

    on_progress = None
    if args.progress_every > 0:
        def on_progress(t, total, every=args.progress_every):
            if t % every == 0 or t == total:
                print(f"scan {t}/{total}", file=sys.stderr)

    chain = gibbs_run(X, y, cfg, n_iter=args.n_iter, burn_in=args.burn_in,
                      sampler=args.sampler, seed=args.seed, thin=args.thin,
                      preconditioner=args.preconditioner, cg_config=cg_config,
                      burn_in_sampler=args.burn_in_sampler,
                      gamma_scale=args.gamma_scale,
                      allow_max_iter=args.allow_max_iter,
                      on_progress=on_progress)

    out = _out_dir(args)
    n_stored = chain.draws.shape[0]
    stored_scans = args.burn_in + args.thin * np.arange(n_stored)
    chain_path = out / "chain.csv"
    matrixio.write_chain_csv(chain_path, chain.draws, chain.tau_draws,
                             chain.logdensity_trace[stored_scans])
    state_path = out / args.save_state
    stateio.save_state(state_path, chain.final_state)
    outputs = [chain_path, state_path]
    if not args.no_plots and args.n_iter > 0:
        png = out / "logdensity.png"
        plots.save_logdensity_plot(png, chain.logdensity_trace,
                                   burn_in=args.burn_in)
        outputs.append(png)
    if chain.cg_iteration_counts.size:
        print(f"CG iterations per scan: mean "
              f"{chain.cg_iteration_counts.mean():.1f}, max "
              f"{chain.cg_iteration_counts.max()}")
    print(f"wrote {chain_path} ({n_stored} rows) and {state_path}")
    _write_manifest(out, args, argv, started, inputs=[args.x, args.y],
                    outputs=outputs)
    return 0


def _cmd_cg_bench(args, argv, started) -> int:
    _validate_preconditioner(args.preconditioner)
    state, X, prior_prec, M, scale = _load_bench_inputs(args)
    y = matrixio.read_vector_csv(args.y, "y")
    if y.size != X.n_rows:
        raise UsageError("outcome length does not match the design")
    phi = PrecisionOperator(X, state.omega, prior_prec)
    y_prime = (y - 0.5) / state.omega
    target = GaussianTarget.from_pseudo_outcome(phi, y_prime)

    with_oracle = X.n_cols <= args.oracle_cap
    config = CGConfig(max_iter=args.max_iter, rtol=args.rtol,
                      trace_level="full" if with_oracle else "norms")
    factor = cholesky(phi.dense_matrix()) if with_oracle else None

    out = _out_dir(args)
    base = Path(args.trace)
    if not base.is_absolute() and base.parent == Path("."):
        base = out / base
    rng = np.random.default_rng(args.seed)
    traces, outputs, unconverged = {}, [], 0
    for rep in range(args.replicates):
        b = generate_rhs(target, rng)
        report = pcg_solve(phi, b, M, config=config, residual_scale=scale)
        if report.termination == "max_iter":
            unconverged += 1
        if with_oracle:
            x_star = scipy.linalg.cho_solve((factor, True), b)
            trace = error_trace(report, x_star, phi)
        else:
            nan = np.full(len(report.rms_precond_residual_trace), np.nan)
            trace = ErrorTrace(rel_coord_error=nan.copy(),
                               l2_error=nan.copy(), phi_norm_error=nan.copy(),
                               rms_precond_residual=np.asarray(
                                   report.rms_precond_residual_trace),
                               n_guarded_coords=0)
        path = base if rep == 0 else \
            base.with_name(f"{base.stem}_rep{rep}{base.suffix}")
        matrixio.write_trace_csv(path, trace)
        outputs.append(path)
        traces[f"replicate {rep}"] = trace
        print(f"replicate {rep}: {report.iterations} iterations, "
              f"final rms residual {trace.rms_precond_residual[-1]:.3e}")
    if not args.no_plots:
        png = out / "cg_bench.png"
        metric = "rel_coord_error" if with_oracle else "rms_precond_residual"
        plots.save_error_trace_plot(png, traces, metric=metric,
                                    title=args.preconditioner)
        outputs.append(png)
    _write_manifest(out, args, argv, started,
                    inputs=[args.state, args.x, args.y], outputs=outputs)
    if unconverged and not args.allow_max_iter:
        print(f"numeric failure: {unconverged} of {args.replicates} "
              f"replicates did not reach rtol {args.rtol}", file=sys.stderr)
        return 2
    return 0


def _cmd_eig_diag(args, argv, started) -> int:
    _validate_preconditioner(args.preconditioner)
    state, X, prior_prec, M, _ = _load_bench_inputs(args)
    report = preconditioned_spectrum(X, state.omega, state.tau, state.lam, M,
                                     prior_precision=prior_prec)
    out = _out_dir(args)
    spath = out / "spectrum.csv"
    hpath = out / "spectrum_hist.csv"
    matrixio.write_spectrum_csv(spath, report.eigenvalues)
    matrixio.write_histogram_csv(hpath, report.bin_edges, report.counts)
    outputs = [spath, hpath]
    if not args.no_plots:
        png = out / "spectrum.png"
        plots.save_spectrum_plot(png, report, title=args.preconditioner)
        outputs.append(png)
    inside = report.trimmed_eigenvalues()
    lo, hi = report.trim_range
    print(f"{report.eigenvalues.size} eigenvalues, min "
          f"{report.eigenvalues[-1]:.6e}, max {report.eigenvalues[0]:.6e}")
    print(f"{inside.size / report.eigenvalues.size:.1%} within "
          f"log10 range [{lo}, {hi}]")
    _write_manifest(out, args, argv, started, inputs=[args.state, args.x],
                    outputs=outputs)
    return 0


def _cmd_trace(args, argv, started) -> int:
    state = stateio.load_state(args.state)
    profile = tau_lambda_profile(state, top=args.top)
    out = _out_dir(args)
    ppath = out / "tau_lambda.csv"
    hpath = out / "tau_lambda_hist.csv"
    matrixio.write_profile_csv(ppath, profile)
    matrixio.write_histogram_csv(hpath, profile.bin_edges, profile.counts)
    outputs = [ppath, hpath]
    if not args.no_plots:
        png = out / "tau_lambda.png"
        plots.save_profile_plot(png, profile)
        outputs.append(png)
    vals = profile.sorted_values
    print(f"{vals.size} shrinkage scales, largest {vals[0]:.6e}, "
          f"median {np.median(vals):.6e}")
    _write_manifest(out, args, argv, started, inputs=[args.state],
                    outputs=outputs)
    return 0


def _cmd_compare_chains(args, argv, started) -> int:
    draws_a, _, _ = matrixio.read_chain_csv(args.chain_a)
    draws_b, _, _ = matrixio.read_chain_csv(args.chain_b)
    test = standardized_difference_test(draws_a, draws_b,
                                        ess_floor=args.ess_floor)
    out = _out_dir(args)
    zpath = out / "zscores.csv"
    matrixio.write_zscore_csv(zpath, test)
    outputs = [zpath]
    kept = test.z_scores[~test.excluded]
    if kept.size == 0:
        raise UsageError("no coefficient cleared the ESS floor; "
                         "chains are too short to compare")
    if not args.no_plots:
        png = out / "zscores.png"
        plots.save_zscore_plot(png, kept)
        outputs.append(png)
    ks = scipy.stats.kstest(kept, "norm")
    print(f"KS statistic {ks.statistic:.4f}, p-value {ks.pvalue:.4g} over "
          f"{kept.size} coefficients ({int(test.excluded.sum())} excluded)")
    violation = ks.pvalue < args.alpha
    print("chains agree" if not violation else
          f"chains differ at level {args.alpha}")
    _write_manifest(out, args, argv, started,
                    inputs=[args.chain_a, args.chain_b], outputs=outputs)
    if violation and args.fail_on_violation:
        print("numeric failure: paired chains do not match", file=sys.stderr)
        return 2
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="priorcg", description=__doc__,
                     fromfile_prefix_chars="@")
    parser.add_argument("--version", action="version",
                        version=f"priorcg {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                parser_class=_Parser)

    def common(p, plots_flag=True):
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${OUT_DIR_ENV} "
                            "or the working directory)")
        p.add_argument("--threads", type=int, default=1,
                       help="BLAS thread cap (default 1)")
        if plots_flag:
            p.add_argument("--no-plots", action="store_true",
                           help="skip PNG rendering")

    p = sub.add_parser("simulate", help="write a synthetic design and "
                       "outcomes")
    p.add_argument("--n", type=int, required=True, help="rows")
    p.add_argument("--p", type=int, required=True, help="columns")
    p.add_argument("--m", type=int, default=99,
                   help="latent factors (default 99)")
    p.add_argument("--k", type=int, default=0, help="nonzero signals")
    p.add_argument("--signal-value", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("mtx", "csv"), default="mtx")
    common(p, plots_flag=False)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gibbs", help="run the bridge-logistic sampler")
    p.add_argument("--x", required=True, help="design (.mtx or .csv)")
    p.add_argument("--y", required=True, help="0/1 outcomes (CSV)")
    p.add_argument("--n-iter", type=int, required=True)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--sampler", choices=("cg", "direct"), default="cg")
    p.add_argument("--burn-in-sampler", choices=("cg", "direct"),
                   default=None)
    p.add_argument("--preconditioner", default="prior",
                   help="prior, jacobi, identity, or block:<k>")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--global-shape", type=float, default=1.0)
    p.add_argument("--global-rate", type=float, default=1.0)
    p.add_argument("--gamma-scale", type=float, default=1.0)
    p.add_argument("--add-intercept", action="store_true",
                   help="prepend a flat-prior intercept column")
    p.add_argument("--allow-max-iter", action="store_true",
                   help="keep going when a CG solve exhausts max-iter")
    p.add_argument("--save-state", default="state.bin", metavar="NAME",
                   help="state file name inside the output directory")
    p.add_argument("--progress-every", type=int, default=0, metavar="N",
                   help="log every N scans to stderr (0 = silent)")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=_cmd_gibbs)

    p = sub.add_parser("cg-bench", help="re-solve a frozen conditional "
                       "Gaussian and trace the error metrics")
    p.add_argument("--state", required=True, help="state file from gibbs")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--preconditioner", default="prior")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--replicates", type=int, default=1,
                   help="fresh right-hand sides to solve (default 1)")
    p.add_argument("--trace", default="trace.csv", metavar="PATH",
                   help="trace CSV; extra replicates get _rep<i> suffixes")
    p.add_argument("--oracle-cap", type=int, default=4000,
                   help="max dimension for the dense oracle solution")
    p.add_argument("--allow-max-iter", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=_cmd_cg_bench)

    p = sub.add_parser("eig-diag", help="spectrum of the preconditioned "
                       "precision matrix")
    p.add_argument("--state", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--preconditioner", default="prior")
    common(p)
    p.set_defaults(func=_cmd_eig_diag)

    p = sub.add_parser("trace", help="shrinkage-scale profile of a state")
    p.add_argument("--state", required=True)
    p.add_argument("--top", type=int, default=250,
                   help="length of the relative-magnitude view")
    common(p)
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("compare-chains", help="standardized-difference "
                       "test between two chain files")
    p.add_argument("--chain-a", required=True)
    p.add_argument("--chain-b", required=True)
    p.add_argument("--ess-floor", type=float, default=10.0)
    p.add_argument("--alpha", type=float, default=0.01,
                   help="KS rejection level (default 0.01)")
    p.add_argument("--fail-on-violation", action="store_true",
                   help="exit 2 when the chains disagree")
    common(p)
    p.set_defaults(func=_cmd_compare_chains)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    started = _utc_now()
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        with threadpool_limits(limits=args.threads):
            return args.func(args, argv, started)
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
