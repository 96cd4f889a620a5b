"""Sparse column storage and the small dense solves used by the L-BFGS model.

The data matrix is kept instance-major: each column is one data point and a
worker owns a contiguous range of columns.  Accumulations run in ascending
index order so that results do not depend on how the columns are split.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class DimensionError(ValueError):
    """Raised when operand shapes do not agree."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a small symmetric system is numerically singular."""


class SparseColumns:
    """Column-compressed sparse matrix with strictly increasing row indices.

    Parameters
    ----------
    n_rows : int
        Number of rows (the feature dimension).
    indptr : array of int, length n_cols + 1
        Column pointers into ``indices`` / ``data``.
    indices : array of int
        Row index of every stored entry.
    data : array of float
        Stored values; explicit zeros are not allowed.
    """

    def __init__(self, n_rows, indptr, indices, data, check=True):
        self.n_rows = int(n_rows)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        if check:
            self._validate()
        self._col_ids = np.repeat(np.arange(self.n_cols), np.diff(self.indptr))

    @property
    def n_cols(self):
        return len(self.indptr) - 1

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.indptr[-1])

    def _validate(self):
        ip = self.indptr
        if ip.ndim != 1 or len(ip) < 1 or ip[0] != 0:
            raise ValueError("indptr must start at 0")
        if np.any(np.diff(ip) < 0):
            raise ValueError("column pointers must be nondecreasing")
        if ip[-1] != len(self.indices) or len(self.indices) != len(self.data):
            raise ValueError("indptr, indices and data lengths disagree")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= self.n_rows:
                raise ValueError("row index out of range")
        if np.any(self.data == 0.0):
            raise ValueError("explicit zeros are not stored")
        for c in range(len(ip) - 1):
            rows = self.indices[ip[c]:ip[c + 1]]
            if len(rows) > 1 and np.any(np.diff(rows) <= 0):
                raise ValueError(f"column {c}: row indices must strictly increase")

    @classmethod
    def from_columns(cls, n_rows, columns):
        """Build from a list of ``[(row, value), ...]`` per column.

        Zero values are dropped.
        """
        indptr = [0]
        indices, data = [], []
        for col in columns:
            for r, v in col:
                if v != 0.0:
                    indices.append(r)
                    data.append(v)
            indptr.append(len(indices))
        return cls(n_rows, indptr, indices, data)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError("expected a 2-D array")
        mask = a != 0.0
        indptr = np.concatenate(([0], np.cumsum(mask.sum(axis=0))))
        rows, cols = np.nonzero(mask.T)
        # nonzero on the transpose walks column by column, rows ascending
        return cls(a.shape[0], indptr, cols, a.T[rows, cols])

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.indices, self._col_ids] = self.data
        return out

    def to_scipy(self):
        import scipy.sparse

        return scipy.sparse.csc_matrix(
            (self.data, self.indices, self.indptr), shape=self.shape
        )

    def column(self, c):
        lo, hi = self.indptr[c], self.indptr[c + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def column_range(self, start, stop):
        """Columns ``start:stop`` as a new matrix (the worker block X_k)."""
        lo, hi = self.indptr[start], self.indptr[stop]
        return SparseColumns(
            self.n_rows,
            self.indptr[start:stop + 1] - lo,
            self.indices[lo:hi],
            self.data[lo:hi],
            check=False,
        )

    def scale_columns(self, w):
        """Return a copy with column ``c`` multiplied by ``w[c]``."""
        w = np.asarray(w, dtype=np.float64)
        if len(w) != self.n_cols:
            raise DimensionError("scale vector length != n_cols")
        return SparseColumns(
            self.n_rows, self.indptr, self.indices, self.data * w[self._col_ids],
            check=False,
        )

    def column_sq_norms(self):
        return np.bincount(self._col_ids, weights=self.data**2, minlength=self.n_cols)

    def __eq__(self, other):
        if not isinstance(other, SparseColumns):
            return NotImplemented
        return (
            self.n_rows == other.n_rows
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"SparseColumns(shape={self.shape}, nnz={self.nnz})"


def spmv(a, v, out=None):
    """Compute ``A @ v``.

    When ``out`` is given the products are accumulated onto it in place, so a
    running sum can be handed from one column block to the next and the
    per-row addition sequence is the same as for the unsplit matrix.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (a.n_cols,):
        raise DimensionError(f"spmv: expected vector of length {a.n_cols}, got {v.shape}")
    if out is None:
        out = np.zeros(a.n_rows)
    elif out.shape != (a.n_rows,):
        raise DimensionError("spmv: accumulator has the wrong length")
    # ufunc.at is unbuffered: entries are applied in storage order
    np.add.at(out, a.indices, a.data * v[a._col_ids])
    return out


def spmv_transpose(a, u):
    """Compute ``A.T @ u``; one inner product per column."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (a.n_rows,):
        raise DimensionError(
            f"spmv_transpose: expected vector of length {a.n_rows}, got {u.shape}"
        )
    return np.bincount(a._col_ids, weights=a.data * u[a.indices], minlength=a.n_cols)


class SymmetricFactor:
    """Bunch-Kaufman (LDL^T) factorization of a small symmetric matrix.

    Raises :class:`SingularMatrixError` if any pivot block has an eigenvalue
    below ``1e-14 * max|M|`` in magnitude.
    """

    def __init__(self, m):
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError("matrix must be square")
        self.order = m.shape[0]
        if self.order == 0:
            self._lu = self._d = self._perm = None
            return
        scale = np.abs(m).max()
        lu, d, perm = scipy.linalg.ldl(m, lower=True)
        # d is block diagonal with 1x1 / 2x2 pivots; its eigenvalues are the pivots
        pivots = np.linalg.eigvalsh(d)
        if scale == 0.0 or np.abs(pivots).min() < 1e-14 * scale:
            raise SingularMatrixError("symmetric matrix is numerically singular")
        self._lower = lu[perm]
        self._d = d
        self._perm = perm

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.order:
            raise DimensionError("right-hand side length != matrix order")
        if self.order == 0:
            return b.copy()
        v = scipy.linalg.solve_triangular(
            self._lower, b[self._perm], lower=True, unit_diagonal=True
        )
        y = scipy.linalg.solve(self._d, v, assume_a="sym")
        xp = scipy.linalg.solve_triangular(
            self._lower, y, trans="T", lower=True, unit_diagonal=True
        )
        x = np.empty_like(xp)
        x[self._perm] = xp
        return x


def solve_small_symmetric(m, b):
    """Solve ``M x = b`` for a small symmetric (possibly indefinite) ``M``."""
    return SymmetricFactor(m).solve(b)


def power_iteration(matvec, n, iters=50, seed=0):
    """Estimate the largest eigenvalue of a symmetric PSD operator."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return lam
