from __future__ import annotations

import logging
import threading
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

SOLVER_METHODS = ("direct", "iterative")

ITERATIVE_RTOL = 1e-10
GRAM_RANK_TOL = 1e-10
PIVOT_TOL = 1e-14


class SolverError(RuntimeError):
    def __init__(self, message: str, pivot: int | None = None) -> None:
        super().__init__(message if pivot is None else f"{message} (pivot {pivot})")
        self.pivot = pivot


class GramError(RuntimeError):
    pass


@dataclass(frozen=True)
class SparseSystem:
    """Full-size matrix plus the free (unconstrained) DOFs it is solved on."""

    matrix: sparse.csr_matrix
    free: np.ndarray

    @property
    def n(self) -> int:
        return int(self.free.size)

    @property
    def reduced(self) -> sparse.csc_matrix:
        return self.matrix[self.free][:, self.free].tocsc()


class Factorization:
    """
    A factorized square matrix. solve() accepts one right-hand side (n,) or several (n, r)
    and is safe to call from several threads.
    """

    def __init__(self, matrix, method: str = "direct") -> None:
        if method not in SOLVER_METHODS:
            raise ValueError(f"unknown solver method: {method} (supported: {', '.join(SOLVER_METHODS)})")
        self.method = method
        self.shape = matrix.shape
        self.dtype = np.result_type(matrix.dtype, np.float64)
        self._lock = threading.Lock()
        self._dense = None
        self._lu = None
        self._matrix = None
        self._precond = None

        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got {matrix.shape}")
        if matrix.shape[0] == 0:
            return

        if not sparse.issparse(matrix):
            self._dense = self._factor_dense(np.asarray(matrix, dtype=self.dtype))
        elif method == "direct":
            self._lu = self._factor_sparse(sparse.csc_matrix(matrix, dtype=self.dtype))
        else:
            self._matrix = sparse.csr_matrix(matrix, dtype=self.dtype)
            try:
                ilu = spla.spilu(sparse.csc_matrix(self._matrix), drop_tol=1e-6, fill_factor=20)
                self._precond = spla.LinearOperator(self.shape, ilu.solve, dtype=self.dtype)
            except RuntimeError:
                logger.warning("incomplete factorization failed; running unpreconditioned GMRES")

    @staticmethod
    def _factor_dense(a: np.ndarray):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu, piv = la.lu_factor(a, check_finite=True)
        _check_pivots(np.diag(lu))
        return lu, piv

    @staticmethod
    def _factor_sparse(a: sparse.csc_matrix):
        try:
            lu = spla.splu(a)
        except RuntimeError as e:
            raise SolverError(f"sparse factorization failed: {e}") from e
        _check_pivots(lu.U.diagonal())
        return lu

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.asarray(rhs)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"rhs has {b.shape[0]} rows, system has {self.shape[0]}")
        if self.shape[0] == 0:
            return np.zeros(b.shape, dtype=np.result_type(self.dtype, b.dtype))
        if np.iscomplexobj(b) and not np.issubdtype(self.dtype, np.complexfloating):
            return self.solve(b.real) + 1j * self.solve(b.imag)
        b = b.astype(self.dtype, copy=False)

        with self._lock:
            if self._dense is not None:
                return la.lu_solve(self._dense, b)
            if self._lu is not None:
                return self._lu.solve(np.ascontiguousarray(b) if b.ndim == 1 else np.asfortranarray(b))
        return self._solve_iterative(b)

    def _solve_iterative(self, b: np.ndarray) -> np.ndarray:
        if b.ndim == 2:
            return np.stack([self._solve_iterative(b[:, c]) for c in range(b.shape[1])], axis=1)
        x, info = spla.gmres(
            self._matrix,
            b,
            rtol=ITERATIVE_RTOL,
            atol=0.0,
            restart=200,
            maxiter=50,
            M=self._precond,
        )
        if info != 0:
            raise SolverError(f"GMRES did not converge to rtol={ITERATIVE_RTOL} (info={info})")
        return x


def _check_pivots(diag: np.ndarray) -> None:
    if diag.size == 0:
        return
    mag = np.abs(diag)
    scale = mag.max()
    bad = np.flatnonzero(~np.isfinite(mag) | (mag <= PIVOT_TOL * max(scale, 1e-300)))
    if bad.size:
        raise SolverError("singular matrix in factorization", pivot=int(bad[0]))


def factorize(matrix, method: str = "direct") -> Factorization:
    return Factorization(matrix, method=method)


def submatrix(matrix: sparse.csr_matrix, rows: np.ndarray, cols: np.ndarray) -> sparse.csr_matrix:
    """matrix[rows][:, cols] for sorted cols, touching only the selected rows."""
    sub = sparse.csr_matrix(matrix)[rows].tocoo()
    if not cols.size:
        return sparse.csr_matrix((rows.size, 0), dtype=matrix.dtype)
    pos = np.minimum(np.searchsorted(cols, sub.col), cols.size - 1)
    hit = cols[pos] == sub.col
    return sparse.csr_matrix((sub.data[hit], (sub.row[hit], pos[hit])), shape=(rows.size, cols.size))


def solve_sparse(system: SparseSystem, rhs: np.ndarray, method: str = "direct") -> np.ndarray:
    """Solve on the free DOFs; rhs and result are given on the free DOFs as well."""
    a = system.reduced
    x = factorize(a, method=method).solve(rhs)
    check_residual(a, x, rhs)
    return x


def check_residual(a, x: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> None:
    if a.shape[0] == 0:
        return
    r = a @ x - b
    norm_a = spla.norm(a, 1) if sparse.issparse(a) else np.linalg.norm(a, 1)
    x2 = x[:, None] if x.ndim == 1 else x
    r2 = r[:, None] if r.ndim == 1 else r
    b2 = np.asarray(b)[:, None] if np.ndim(b) == 1 else np.asarray(b)
    for c in range(x2.shape[1]):
        bound = tol * (norm_a * np.linalg.norm(x2[:, c]) + np.linalg.norm(b2[:, c]))
        if np.linalg.norm(r2[:, c]) > bound:
            raise SolverError(f"residual {np.linalg.norm(r2[:, c]):.3e} above bound {bound:.3e} in column {c}")


def hermitian_part(g: np.ndarray, name: str = "matrix", tol: float = 1e-12) -> np.ndarray:
    g = np.asarray(g)
    scale = max(np.abs(g).max(initial=0.0), 1e-300)
    asym = np.abs(g - g.conj().T).max(initial=0.0)
    if asym > tol * scale * max(g.shape[0], 1):
        raise GramError(f"{name} is not Hermitian: asymmetry {asym:.3e} relative to {scale:.3e}")
    return 0.5 * (g + g.conj().T)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Scale each column so its largest-magnitude entry is real and positive."""
    out = np.array(vectors, copy=True)
    for c in range(out.shape[1]):
        col = out[:, c]
        if not col.size:
            continue
        k = int(np.argmax(np.abs(col)))
        if col[k] == 0:
            continue
        out[:, c] = col * (np.abs(col[k]) / col[k])
    if np.iscomplexobj(out) and not np.iscomplexobj(vectors):
        out = out.real
    return out


def generalized_hermitian_eig(a: np.ndarray, b: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Top-m pairs of  a v = λ b v  for Hermitian a (PSD) and b (PSD).

    b is deflated to its numerical range: eigen-directions of b below 1e-10 * λ_max(b)
    are dropped and the pencil is solved there as a standard Hermitian problem, so at
    most rank(b) pairs come back. Values are returned in descending order, vectors
    b-orthonormal with signs fixed by fix_signs.
    """
    a = hermitian_part(a, "stiffness Gram")
    b = hermitian_part(b, "mass Gram")
    n = a.shape[0]
    if b.shape != (n, n):
        raise ValueError(f"Gram shapes differ: {a.shape} vs {b.shape}")
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")

    mu, u = la.eigh(b)
    top = mu[-1]
    if not np.isfinite(top) or top <= 0:
        raise GramError(f"mass Gram is not positive semi-definite (largest eigenvalue {top:.3e})")
    if mu[0] < -GRAM_RANK_TOL * top:
        raise GramError(f"mass Gram is indefinite: eigenvalue {mu[0]:.3e} against {top:.3e}")
    keep = mu > GRAM_RANK_TOL * top
    dropped = n - int(np.count_nonzero(keep))
    if dropped:
        logger.debug("mass Gram deflated by %d of %d directions", dropped, n)
    w = u[:, keep] / np.sqrt(mu[keep])

    reduced = w.conj().T @ a @ w
    reduced = 0.5 * (reduced + reduced.conj().T)
    r = reduced.shape[0]
    mm = min(m, r)
    try:
        values, coef = la.eigh(reduced, subset_by_index=[r - mm, r - 1])
    except la.LinAlgError as e:
        raise GramError(f"generalized eigenproblem failed: {e}") from e

    order = np.argsort(-values, kind="stable")
    return values[order], fix_signs(w @ coef[:, order])
