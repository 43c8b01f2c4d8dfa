"""CSR design matrices with implicit column standardization, plus dense fallbacks.

The regression designs handled here are tall and sparse.  Columns can be
centered and rescaled without densifying anything: the shifts and scales are
stored next to the raw CSR arrays and every kernel applies the rank-one
centering correction on the fly, so products against the standardized matrix
cost the same as against the raw one.

Dense operations (Gram matrix, Cholesky, eigenvalues) exist for the direct
sampler and for desk-scale diagnostics only, and refuse to run above a
configurable dimension cap.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse

DEFAULT_DENSE_CAP = 5000

# Above this many stored entries the weighted Gram product falls back to
# scipy.sparse instead of caching a dense copy of the raw matrix.
_DENSE_CACHE_BUDGET = 50_000_000


class DimensionCapError(RuntimeError):
    """Dense operation requested above the dimension cap; use the CG path."""


class NotPositiveDefiniteError(RuntimeError):
    """A matrix that must be positive definite is not."""


class ZeroVarianceColumnError(ValueError):
    """Standardization hit a constant column that was not excluded."""


def _as_float_array(x, name):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class SparseDesignMatrix:
    """A CSR matrix with separately stored standardization shifts.

    Parameters
    ----------
    n_rows, n_cols : int
        Matrix shape.
    row_ptr : array of int64, length n_rows + 1
        Row segment boundaries into ``col_idx`` / ``values``.
    col_idx : array of int64
        Column index of each stored entry, strictly increasing within a row.
    values : array of float64
        Stored entries.
    col_means, col_scales : arrays of float64, length n_cols, optional
        Standardization parameters.  The matrix the kernels implement is
        ``(X_raw - 1 mean') diag(1/scale)``.  Defaults (zeros, ones) leave the
        raw matrix untouched.

    Notes
    -----
    The standardized matrix is never formed.  ``matvec`` and ``matvec_t``
    run on the raw CSR arrays and append the rank-one correction, so
    standardizing a sparse design does not destroy sparsity.  All kernels
    accumulate in storage order, which makes repeated calls bit-identical.
    """

    def __init__(self, n_rows, n_cols, row_ptr, col_idx, values,
                 col_means=None, col_scales=None):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_ptr = np.ascontiguousarray(row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(col_idx, dtype=np.int64)
        self.values = _as_float_array(values, "values")
        if col_means is None:
            col_means = np.zeros(self.n_cols)
        if col_scales is None:
            col_scales = np.ones(self.n_cols)
        self.col_means = _as_float_array(col_means, "col_means")
        self.col_scales = _as_float_array(col_scales, "col_scales")
        self.constant_columns: np.ndarray = np.zeros(0, dtype=np.int64)
        self.matvec_calls = 0
        self.matvec_t_calls = 0
        self.weighted_gram_calls = 0
        self._row_of_nnz = None
        self._nonempty_rows = None
        self._dense_raw = None
        self._validate()

    def _validate(self):
        if self.row_ptr.shape != (self.n_rows + 1,):
            raise ValueError("row_ptr must have length n_rows + 1")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.values):
            raise ValueError("row_ptr endpoints must be 0 and nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if len(self.col_idx) != len(self.values):
            raise ValueError("col_idx and values must have equal length")
        if self.col_idx.size:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise ValueError("col_idx entry out of range")
            # Strictly increasing within each row: differences may only be
            # nonpositive at row boundaries.
            d = np.diff(self.col_idx)
            boundary = np.zeros(len(self.col_idx) - 1, dtype=bool)
            inner = self.row_ptr[1:-1]
            boundary[inner[(inner > 0) & (inner < len(self.col_idx))] - 1] = True
            if np.any((d <= 0) & ~boundary):
                raise ValueError("col_idx must be strictly increasing within each row")
        if self.col_means.shape != (self.n_cols,) or self.col_scales.shape != (self.n_cols,):
            raise ValueError("col_means/col_scales must have length n_cols")
        if np.any(self.col_scales <= 0):
            raise ValueError("col_scales must be strictly positive")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_dense(cls, dense):
        """Build from a dense array, dropping exact zeros."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ValueError("expected a 2-d array")
        n, p = dense.shape
        mask = dense != 0.0
        counts = mask.sum(axis=1)
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        rows, cols = np.nonzero(mask)
        return cls(n, p, row_ptr, cols.astype(np.int64), dense[rows, cols])

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals):
        """Build from coordinate triplets; duplicate entries are summed."""
        coo = scipy.sparse.coo_matrix(
            (np.asarray(vals, dtype=np.float64),
             (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(n_rows, n_cols))
        csr = coo.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(n_rows, n_cols, csr.indptr, csr.indices, csr.data)

    # -- internal caches ---------------------------------------------------

    @property
    def nnz(self):
        return len(self.values)

    def _row_index(self):
        if self._row_of_nnz is None:
            self._row_of_nnz = np.repeat(
                np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_ptr))
        return self._row_of_nnz

    def _nonempty(self):
        if self._nonempty_rows is None:
            self._nonempty_rows = np.flatnonzero(np.diff(self.row_ptr) > 0)
        return self._nonempty_rows

    def _segment_sums(self, contrib):
        out = np.zeros(self.n_rows)
        rows = self._nonempty()
        if rows.size:
            out[rows] = np.add.reduceat(contrib, self.row_ptr[rows])
        return out

    def _dense_cache(self):
        if self._dense_raw is None:
            self._dense_raw = self.to_dense_raw(dense_cap=None)
        return self._dense_raw

    # -- kernels -----------------------------------------------------------

    def matvec(self, v):
        """Standardized matrix times ``v``; returns a length-``n_rows`` array.

        Row sums accumulate left to right over the stored entries, so the
        result is deterministic for a fixed matrix.
        """
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_cols,):
            raise ValueError("matvec: vector length must equal n_cols")
        self.matvec_calls += 1
        u = v / self.col_scales
        out = self._segment_sums(self.values * u[self.col_idx])
        shift = self.col_means @ u
        if shift != 0.0:
            out -= shift
        return out

    def matvec_t(self, w):
        """Transpose of :meth:`matvec`: returns a length-``n_cols`` array."""
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.n_rows,):
            raise ValueError("matvec_t: vector length must equal n_rows")
        self.matvec_t_calls += 1
        raw = np.bincount(self.col_idx, weights=self.values * w[self._row_index()],
                          minlength=self.n_cols)
        return (raw - w.sum() * self.col_means) / self.col_scales

    def weighted_gram(self, omega, dense_cap=DEFAULT_DENSE_CAP):
        """Dense X' diag(omega) X of the standardized matrix.

        This is the direct-sampler path; it refuses to run when ``n_cols``
        exceeds ``dense_cap``.
        """
        omega = np.asarray(omega, dtype=np.float64)
        if omega.shape != (self.n_rows,):
            raise ValueError("weighted_gram: omega length must equal n_rows")
        _check_cap(self.n_cols, dense_cap, "weighted_gram")
        self.weighted_gram_calls += 1
        if self.n_rows * self.n_cols <= _DENSE_CACHE_BUDGET:
            raw = self._dense_cache()
            g_raw = (raw * omega[:, None]).T @ raw
        else:
            csr = scipy.sparse.csr_matrix(
                (self.values, self.col_idx, self.row_ptr),
                shape=(self.n_rows, self.n_cols))
            g_raw = (csr.multiply(omega[:, None]).T @ csr).toarray()
        g_col = np.bincount(self.col_idx,
                            weights=self.values * omega[self._row_index()],
                            minlength=self.n_cols)
        mu = self.col_means
        g = g_raw - np.outer(g_col, mu) - np.outer(mu, g_col) \
            + omega.sum() * np.outer(mu, mu)
        g /= self.col_scales[:, None]
        g /= self.col_scales[None, :]
        g = 0.5 * (g + g.T)
        return DenseSymmetric(g, dense_cap=dense_cap)

    def gram_diagonal(self, omega):
        """diag(X' diag(omega) X) in one pass over the stored entries."""
        omega = np.asarray(omega, dtype=np.float64)
        if omega.shape != (self.n_rows,):
            raise ValueError("gram_diagonal: omega length must equal n_rows")
        w = omega[self._row_index()]
        sq = np.bincount(self.col_idx, weights=self.values ** 2 * w,
                         minlength=self.n_cols)
        g_col = np.bincount(self.col_idx, weights=self.values * w,
                            minlength=self.n_cols)
        mu = self.col_means
        return (sq - 2.0 * mu * g_col + omega.sum() * mu ** 2) / self.col_scales ** 2

    # -- standardization ---------------------------------------------------

    def standardize(self, exclude=None):
        """Set ``col_means``/``col_scales`` to center and scale each column.

        Means and sample standard deviations (ddof=1) are computed over all
        ``n_rows`` entries, implicit zeros included.  Columns listed in
        ``exclude`` (a boolean mask or an index array) are left untouched.
        Constant columns are also left untouched and recorded in
        ``self.constant_columns`` rather than rejected.

        Returns ``self`` for chaining.
        """
        if self.n_rows < 2:
            raise ValueError("standardize needs at least 2 rows")
        keep = np.ones(self.n_cols, dtype=bool)
        if exclude is not None:
            exclude = np.asarray(exclude)
            if exclude.dtype == bool:
                if exclude.shape != (self.n_cols,):
                    raise ValueError("boolean exclude mask must have length n_cols")
                keep &= ~exclude
            else:
                keep[exclude] = False
        col_sum = np.bincount(self.col_idx, weights=self.values,
                              minlength=self.n_cols)
        col_sq = np.bincount(self.col_idx, weights=self.values ** 2,
                             minlength=self.n_cols)
        col_nnz = np.bincount(self.col_idx, minlength=self.n_cols)
        n = self.n_rows
        mean = col_sum / n
        # Two-pass centered sum of squares: stable on (near-)constant columns,
        # where the textbook col_sq - n*mean^2 form cancels catastrophically.
        ssq = np.bincount(self.col_idx,
                          weights=(self.values - mean[self.col_idx]) ** 2,
                          minlength=self.n_cols)
        ssq += (n - col_nnz) * mean ** 2
        var = ssq / (n - 1)
        # A column counts as constant when its relative sd is below 1e-7.
        scale_ref = col_sq / n
        constant = ssq <= (n - 1) * 1e-14 * np.maximum(scale_ref, 1e-300)
        self.constant_columns = np.flatnonzero(constant & keep)
        active = keep & ~constant
        means = np.zeros(self.n_cols)
        scales = np.ones(self.n_cols)
        means[active] = mean[active]
        scales[active] = np.sqrt(var[active])
        self.col_means = means
        self.col_scales = scales
        return self

    # -- dense views (oracles and diagnostics only) ------------------------

    def to_dense_raw(self, dense_cap=DEFAULT_DENSE_CAP):
        """Raw entries as a dense array (no standardization applied)."""
        _check_cap(self.n_cols, dense_cap, "to_dense_raw")
        out = np.zeros((self.n_rows, self.n_cols))
        out[self._row_index(), self.col_idx] = self.values
        return out

    def to_dense(self, dense_cap=DEFAULT_DENSE_CAP):
        """Standardized matrix as a dense array."""
        raw = self.to_dense_raw(dense_cap=dense_cap)
        return (raw - self.col_means) / self.col_scales


def hstack_dense_columns(cols, X):
    """Prepend dense columns (for example an intercept) to a sparse design.

    ``cols`` is an (n, q) array stored densely inside the CSR structure; the
    existing column indices shift right by q.  Standardization parameters of
    the prepended block default to identity.
    """
    cols = np.atleast_2d(np.asarray(cols, dtype=np.float64))
    if cols.shape[0] != X.n_rows:
        raise ValueError("column block row count must match the design")
    q = cols.shape[1]
    if q == 0:
        return X
    n = X.n_rows
    row_ptr = X.row_ptr + q * np.arange(n + 1, dtype=np.int64)
    col_idx = np.empty(X.nnz + n * q, dtype=np.int64)
    values = np.empty(X.nnz + n * q)
    dense_pos = (X.row_ptr[:-1] + q * np.arange(n, dtype=np.int64))[:, None] \
        + np.arange(q, dtype=np.int64)
    col_idx[dense_pos.ravel()] = np.tile(np.arange(q, dtype=np.int64), n)
    values[dense_pos.ravel()] = cols.ravel()
    orig_pos = np.arange(X.nnz, dtype=np.int64) + q * (X._row_index() + 1)
    col_idx[orig_pos] = X.col_idx + q
    values[orig_pos] = X.values
    means = np.concatenate([np.zeros(q), X.col_means])
    scales = np.concatenate([np.ones(q), X.col_scales])
    return SparseDesignMatrix(n, X.n_cols + q, row_ptr, col_idx, values,
                              col_means=means, col_scales=scales)


class DenseSymmetric:
    """A dense symmetric matrix guarded by the dimension cap."""

    def __init__(self, entries, dense_cap=DEFAULT_DENSE_CAP):
        entries = np.ascontiguousarray(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("expected a square matrix")
        _check_cap(entries.shape[0], dense_cap, "DenseSymmetric")
        scale = np.abs(entries).max() if entries.size else 0.0
        if not np.allclose(entries, entries.T, rtol=0.0, atol=1e-12 * max(scale, 1.0)):
            raise ValueError("matrix is not symmetric to 1e-12 relative")
        self.entries = entries

    @property
    def dim(self):
        return self.entries.shape[0]


def _check_cap(dim, dense_cap, what):
    if dense_cap is not None and dim > dense_cap:
        raise DimensionCapError(
            f"{what}: dimension {dim} exceeds the dense cap {dense_cap}; "
            "use the matrix-free CG path or raise the cap explicitly")


def cholesky(A):
    """Lower-triangular factor L with L L' = A.

    Raises :class:`NotPositiveDefiniteError` when a pivot fails.
    """
    mat = A.entries if isinstance(A, DenseSymmetric) else np.asarray(A)
    try:
        return scipy.linalg.cholesky(mat, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc


def sym_eigenvalues(A):
    """Eigenvalues of a symmetric matrix, sorted descending."""
    mat = A.entries if isinstance(A, DenseSymmetric) else np.asarray(A)
    vals = scipy.linalg.eigh(mat, eigvals_only=True)
    return vals[::-1].copy()
