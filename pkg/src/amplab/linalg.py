"""Dense symmetric-matrix storage, vector kernels, a Jacobi eigensolver, and Cholesky.

Symmetric matrices are kept in packed upper-triangle storage, column ordered
(BLAS 'U' convention): entry (i, j) with i <= j lives at ``i + j*(j+1)//2``.
This halves the memory of the n x n noise matrices that dominate the footprint
and feeds straight into the BLAS packed matvec.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import dspmv

from .errors import (
    NotPositiveSemidefiniteError,
    NumericalFailureError,
    RejectedInputError,
)

JACOBI_MAX_SWEEPS = 100


def packed_length(n):
    return n * (n + 1) // 2


def packed_index(i, j):
    """Packed position of entry (i, j); symmetric, so order does not matter."""
    if i > j:
        i, j = j, i
    return i + j * (j + 1) // 2


def packed_diagonal_indices(n):
    i = np.arange(n)
    return i * (i + 3) // 2


@dataclass(frozen=True, eq=False)
class SymmetricMatrix:
    """Dense symmetric n x n matrix, packed upper triangle (length n(n+1)/2)."""

    n: int
    entries: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise RejectedInputError(f"dimension must be >= 1, got {self.n}")
        entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        if entries.shape != (packed_length(self.n),):
            raise RejectedInputError(
                f"packed entries must have length {packed_length(self.n)}, "
                f"got shape {entries.shape}"
            )
        object.__setattr__(self, "entries", entries)

    @classmethod
    def zeros(cls, n):
        return cls(n, np.zeros(packed_length(n)))

    @classmethod
    def identity(cls, n):
        entries = np.zeros(packed_length(n))
        entries[packed_diagonal_indices(n)] = 1.0
        return cls(n, entries)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise RejectedInputError(f"expected a square matrix, got shape {a.shape}")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > 1e-12 * scale:
            raise RejectedInputError("matrix is not symmetric")
        n = a.shape[0]
        i, j = np.triu_indices(n)
        entries = np.empty(packed_length(n))
        entries[i + j * (j + 1) // 2] = a[i, j]
        return cls(n, entries)

    def to_dense(self):
        i, j = np.triu_indices(self.n)
        pos = i + j * (j + 1) // 2
        out = np.empty((self.n, self.n))
        out[i, j] = self.entries[pos]
        out[j, i] = self.entries[pos]
        return out

    def get(self, i, j):
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise RejectedInputError(f"index ({i}, {j}) out of range for n={self.n}")
        return float(self.entries[packed_index(i, j)])

    def apply(self, x):
        return sym_matvec(self, x)

    def frobenius_norm(self):
        # off-diagonal packed entries appear once but contribute twice
        diag = self.entries[packed_diagonal_indices(self.n)]
        total = 2.0 * float(np.dot(self.entries, self.entries)) - float(np.dot(diag, diag))
        return float(np.sqrt(total))


@dataclass(frozen=True, eq=False)
class EigenDecomp:
    """Eigenvalues sorted descending with orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column r pairs with eigenvalues[r]


def sym_matvec(m, x):
    """y = M x for a packed SymmetricMatrix, via BLAS dspmv."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (m.n,):
        raise RejectedInputError(f"vector length {x.shape} does not match n={m.n}")
    return dspmv(m.n, 1.0, m.entries, x)


def jacobi_eigendecomp(m, tol=1e-12):
    """Classical cyclic Jacobi rotations until max |off-diagonal| <= tol * ||M||_F.

    Oracle-scale solver (n <= 1024); raises after 100 sweeps without convergence.
    """
    if tol <= 0:
        raise RejectedInputError(f"tol must be positive, got {tol}")
    if m.n > 1024:
        raise RejectedInputError(f"jacobi_eigendecomp is limited to n <= 1024, got {m.n}")
    n = m.n
    a = m.to_dense()
    v = np.eye(n)
    fro = np.linalg.norm(a)
    if fro == 0.0 or n == 1:
        return _sorted_decomp(np.diag(a).copy(), v)
    threshold = tol * fro
    # entries below this are skipped inside a sweep; convergence is still
    # judged against the true maximum at the top of each sweep
    skip = 0.1 * threshold
    off = _max_offdiag(a)
    for _ in range(JACOBI_MAX_SWEEPS):
        if off <= threshold:
            return _sorted_decomp(np.diag(a).copy(), v)
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vcol_p = v[:, p].copy()
                vcol_q = v[:, q].copy()
                v[:, p] = c * vcol_p - s * vcol_q
                v[:, q] = s * vcol_p + c * vcol_q
        off = _max_offdiag(a)
    raise NumericalFailureError(
        f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps "
        f"(residual {off:.3e} > {threshold:.3e})",
        residual=float(off),
    )


def _max_offdiag(a):
    b = np.abs(a)
    np.fill_diagonal(b, 0.0)
    return float(b.max())


def _sorted_decomp(eigenvalues, eigenvectors):
    order = np.argsort(eigenvalues)[::-1]
    return EigenDecomp(eigenvalues[order], eigenvectors[:, order])


def cholesky(s, jitter=1e-12):
    """Lower-triangular L with L L^T = S + jitter*I."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise RejectedInputError(f"expected a square matrix, got shape {s.shape}")
    if jitter < 0:
        raise RejectedInputError(f"jitter must be >= 0, got {jitter}")
    scale = max(1.0, float(np.max(np.abs(s)))) if s.size else 1.0
    if np.max(np.abs(s - s.T)) > 1e-10 * scale:
        raise RejectedInputError("matrix is not symmetric")
    target = s + jitter * np.eye(s.shape[0])
    try:
        return np.linalg.cholesky(target)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveSemidefiniteError(
            f"matrix is not positive semidefinite within jitter {jitter}: {exc}"
        ) from exc


def dot(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise RejectedInputError(f"length mismatch: {x.shape} vs {y.shape}")
    return float(np.dot(x, y))


def norm2(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise RejectedInputError(f"expected a vector, got shape {x.shape}")
    return float(np.linalg.norm(x))


def axpy(a, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise RejectedInputError(f"length mismatch: {x.shape} vs {y.shape}")
    return a * x + y


def scale(a, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise RejectedInputError(f"expected a vector, got shape {x.shape}")
    return a * x
