"""Readers and writers for the delimited artifact formats.

Designs travel as Matrix Market files, everything else as headed CSV.
Floats are printed with ``%.17g`` so every file round-trips to the bit;
the header strings below are part of the public contract and are pinned
by golden tests.
"""

from __future__ import annotations

import csv
import io

import numpy as np
import scipy.io
import scipy.sparse

from .sparse import SparseDesignMatrix

FLOAT_FMT = "%.17g"

CHAIN_FIXED_COLUMNS = ("tau", "logdensity")
TRACE_COLUMNS = ("iter", "rms_precond_residual", "phi_norm_error",
                 "l2_error", "rel_coord_error")
SPECTRUM_COLUMNS = ("index", "eigenvalue", "log10_eigenvalue")
PROFILE_COLUMNS = ("rank", "tau_lambda", "relative_to_max")
HISTOGRAM_COLUMNS = ("bin_left", "bin_right", "count")
ZSCORE_COLUMNS = ("index", "z_score", "ess_a", "ess_b", "excluded")


class FileFormatError(ValueError):
    """A file exists but does not parse as the expected format."""


def write_design(path, X) -> None:
    """Write a design to Matrix Market format.

    Dense arrays go out in array format, ``SparseDesignMatrix`` and
    scipy sparse inputs in coordinate format.
    """
    if isinstance(X, SparseDesignMatrix):
        X = scipy.sparse.csr_matrix((X.values, X.col_idx, X.row_ptr),
                                    shape=(X.n_rows, X.n_cols))
    scipy.io.mmwrite(str(path), X if scipy.sparse.issparse(X)
                     else np.asarray(X, dtype=np.float64), precision=17)


def read_design(path) -> np.ndarray:
    """Read a Matrix Market design back as a dense float array."""
    try:
        mat = scipy.io.mmread(str(path))
    except ValueError as exc:
        raise FileFormatError(f"{path}: not a Matrix Market file ({exc})") \
            from exc
    if scipy.sparse.issparse(mat):
        mat = mat.toarray()
    return np.asarray(mat, dtype=np.float64)


def write_design_csv(path, X) -> None:
    """Dense CSV alternative to Matrix Market, one column per feature."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    header = ",".join(f"x_{j}" for j in range(X.shape[1]))
    np.savetxt(path, X, fmt=FLOAT_FMT, delimiter=",", header=header,
               comments="")


def load_design(path) -> np.ndarray:
    """Read a design from ``.mtx`` or ``.csv`` by file extension."""
    suffix = str(path).lower()
    if suffix.endswith(".mtx") or suffix.endswith(".mtx.gz"):
        return read_design(path)
    if suffix.endswith(".csv"):
        header, body = _read_csv(path)
        if not all(name == f"x_{j}" for j, name in enumerate(header)):
            raise FileFormatError(f"{path}: not a design CSV "
                                  "(expected columns x_0, x_1, ...)")
        return body
    raise FileFormatError(f"{path}: design must be .mtx or .csv")


def _write_csv(path, header, columns) -> None:
    rows = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns])
    np.savetxt(path, rows, fmt=FLOAT_FMT, delimiter=",",
               header=",".join(header), comments="")


def _read_csv(path, expected_header=None):
    """Return (header tuple, float matrix with one row per record)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first:
            raise FileFormatError(f"{path}: empty file")
        header = tuple(next(csv.reader(io.StringIO(first))))
        rest = fh.read()
    if rest.strip():
        try:
            body = np.loadtxt(io.StringIO(rest), delimiter=",", ndmin=2)
        except ValueError as exc:
            raise FileFormatError(f"{path}: bad CSV body ({exc})") from exc
    else:
        body = np.empty((0, len(header)))
    if body.shape[1] != len(header):
        raise FileFormatError(f"{path}: {body.shape[1]} columns under a "
                              f"{len(header)}-column header")
    if expected_header is not None and header != tuple(expected_header):
        raise FileFormatError(f"{path}: header {header} does not match the "
                              f"expected {tuple(expected_header)}")
    return header, body


def write_vector_csv(path, values, name) -> None:
    _write_csv(path, (name,), (values,))


def read_vector_csv(path, name=None) -> np.ndarray:
    header, body = _read_csv(path, (name,) if name else None)
    return body[:, 0]


def chain_columns(p: int) -> tuple:
    return tuple(f"beta_{j}" for j in range(p)) + CHAIN_FIXED_COLUMNS


def write_chain_csv(path, draws, tau_draws, logdensity) -> None:
    """One row per stored draw: beta_0..beta_{p-1}, tau, logdensity."""
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    n, p = draws.shape
    if len(tau_draws) != n or len(logdensity) != n:
        raise ValueError("draws, tau and logdensity must align")
    cols = [draws[:, j] for j in range(p)] + [tau_draws, logdensity]
    _write_csv(path, chain_columns(p), cols)


def read_chain_csv(path):
    """Return (beta draws, tau draws, logdensity) from a chain file."""
    header, body = _read_csv(path)
    if len(header) < 3 or header[-2:] != CHAIN_FIXED_COLUMNS:
        raise FileFormatError(f"{path}: not a chain file")
    p = len(header) - 2
    if header[:p] != chain_columns(p)[:p]:
        raise FileFormatError(f"{path}: beta columns out of order")
    return body[:, :p], body[:, p], body[:, p + 1]


def write_trace_csv(path, trace) -> None:
    """Per-iteration CG error metrics; oracle-free columns may be nan."""
    n = len(trace.rms_precond_residual)
    _write_csv(path, TRACE_COLUMNS,
               (np.arange(n), trace.rms_precond_residual,
                trace.phi_norm_error, trace.l2_error, trace.rel_coord_error))


def read_trace_csv(path):
    _, body = _read_csv(path, TRACE_COLUMNS)
    return body


def write_spectrum_csv(path, eigenvalues) -> None:
    vals = np.asarray(eigenvalues, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logs = np.log10(vals)
    _write_csv(path, SPECTRUM_COLUMNS, (np.arange(vals.size), vals, logs))


def read_spectrum_csv(path) -> np.ndarray:
    _, body = _read_csv(path, SPECTRUM_COLUMNS)
    return body[:, 1]


def write_profile_csv(path, profile) -> None:
    """Sorted tau*lambda values with their size relative to the max."""
    vals = profile.sorted_values
    _write_csv(path, PROFILE_COLUMNS,
               (np.arange(1, vals.size + 1), vals, vals / vals[0]))


def write_histogram_csv(path, bin_edges, counts) -> None:
    _write_csv(path, HISTOGRAM_COLUMNS,
               (bin_edges[:-1], bin_edges[1:], counts))


def write_zscore_csv(path, test) -> None:
    """Standardized two-chain differences, one row per coefficient."""
    p = test.z_scores.size
    _write_csv(path, ZSCORE_COLUMNS,
               (np.arange(p), test.z_scores, test.ess_a, test.ess_b,
                test.excluded.astype(np.float64)))


def read_zscore_csv(path):
    _, body = _read_csv(path, ZSCORE_COLUMNS)
    return body[:, 1], body[:, 4].astype(bool)
