"""Linear algebra kernels: SPD solves, saddle-point solves, null spaces, Tikhonov.

Every sparse routine has a dense counterpart (``*_dense``) used as a reference
in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConstraintDegeneracyError, DimensionOverflowError, IndefiniteError,
                     NumericalError, RankDeficiencyError)


def finalize(A) -> sp.csr_matrix:
    """Canonical CSR form: summed duplicates, sorted indices, no stored zeros."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def is_symmetric(A) -> bool:
    A = finalize(A)
    return (A != A.T).nnz == 0


def solve_spd(A, b, tol: float = 1e-10, maxiter: int | None = None, x0=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    Raises :class:`IndefiniteError` on breakdown (non-positive curvature) or
    when the iteration cap is reached; the error carries the residual history.
    """
    A = finalize(A)
    b = np.asarray(b, dtype=float)
    n = b.size
    if A.shape != (n, n):
        raise ValueError("dimension mismatch")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    maxiter = maxiter or max(10 * n, 100)
    d = A.diagonal()
    inv_d = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    trace = [np.linalg.norm(r) / bnorm]
    for _ in range(maxiter):
        if trace[-1] <= tol:
            return x
        Ap = A @ p
        curv = p @ Ap
        if not curv > 0.0:
            raise IndefiniteError("conjugate gradients met non-positive curvature", trace)
        step = rz / curv
        x += step * p
        r -= step * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        trace.append(np.linalg.norm(r) / bnorm)
    if trace[-1] <= tol:
        return x
    raise IndefiniteError(f"conjugate gradients did not converge in {maxiter} iterations", trace)


def solve_spd_dense(A, b) -> np.ndarray:
    """Dense Cholesky reference; raises :class:`IndefiniteError` if not SPD."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    try:
        c = sla.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteError(f"dense Cholesky failed: {exc}") from exc
    return sla.cho_solve(c, np.asarray(b, dtype=float))


class Factorization:
    """Reusable sparse LU of a square (possibly indefinite) matrix."""

    def __init__(self, A):
        self.A = finalize(A)
        try:
            self._lu = spla.splu(self.A.tocsc())
        except RuntimeError as exc:
            raise NumericalError(f"sparse factorization failed: {exc}") from exc
        self.n = self.A.shape[0]

    def solve(self, b) -> np.ndarray:
        x = self._lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(x)):
            raise NumericalError("sparse factorization produced non-finite values")
        return x


def _constraint_rows(B, n: int) -> np.ndarray:
    B = np.zeros((0, n)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if B.size == 0:
        return np.zeros((0, n))
    if B.shape[1] != n:
        raise ValueError("constraint matrix has the wrong number of columns")
    s = np.linalg.svd(B, compute_uv=False)
    if s.size < B.shape[0] or s[-1] <= 1e-12 * s[0]:
        raise ConstraintDegeneracyError("constraint matrix is rank deficient")
    return B


class SaddleSolver:
    """Solver for ``[[A, B^T], [B, 0]] [x; lam] = [b; c]`` with small ``k``.

    ``A`` may be singular as long as ``B`` is injective on its null space.
    The augmented-Lagrangian matrix ``A + rho B^T B`` is factorized once and
    the ``k x k`` Schur complement is formed densely.
    """

    def __init__(self, A, B=None):
        self.A = finalize(A)
        n = self.A.shape[0]
        self.B = _constraint_rows(B, n)
        k = self.B.shape[0]
        if k:
            cols = np.flatnonzero(np.any(self.B != 0.0, axis=0))
            Bc = self.B[:, cols]
            BtB = Bc.T @ Bc
            scale = abs(self.A).sum(axis=1).max()
            rho = scale / max(np.abs(BtB).sum(axis=1).max(), np.finfo(float).tiny)
            self.rho = float(rho)
            ii, jj = np.meshgrid(cols, cols, indexing="ij")
            aug = sp.csr_matrix((rho * BtB.ravel(), (ii.ravel(), jj.ravel())), shape=(n, n))
            self._fact = Factorization(self.A + aug)
            self._KinvBt = np.column_stack([self._fact.solve(row) for row in self.B])
            self._schur = self.B @ self._KinvBt
            self._schur_lu = sla.lu_factor(self._schur)
        else:
            self.rho = 0.0
            self._fact = Factorization(self.A)

    def solve(self, b, c=None) -> tuple[np.ndarray, np.ndarray]:
        b = np.asarray(b, dtype=float)
        k = self.B.shape[0]
        if k == 0:
            return self._fact.solve(b), np.zeros(0)
        c = np.zeros(k) if c is None else np.asarray(c, dtype=float)
        y = self._fact.solve(b)
        mu = sla.lu_solve(self._schur_lu, c - self.B @ y)
        x = y + self._KinvBt @ mu
        lam = self.rho * c - mu
        return x, lam


def solve_saddle(A, B, b, c=None) -> tuple[np.ndarray, np.ndarray]:
    """Constrained solve; returns ``(x, multipliers)``."""
    return SaddleSolver(A, B).solve(b, c)


def solve_saddle_dense(A, B, b, c=None) -> tuple[np.ndarray, np.ndarray]:
    """Dense reference: assemble and solve the full augmented system."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    n = A.shape[0]
    B = _constraint_rows(B, n)
    k = B.shape[0]
    c = np.zeros(k) if c is None else np.asarray(c, dtype=float)
    K = np.block([[A, B.T], [B, np.zeros((k, k))]])
    sol = np.linalg.solve(K, np.concatenate([np.asarray(b, dtype=float), c]))
    return sol[:n], sol[n:]


def nullspace_estimate(A, svtol: float = 1e-8, kmax: int = 8, method: str = "auto") -> np.ndarray:
    """Orthonormal basis (columns) of the numerical null space of symmetric ``A``.

    Eigenvectors with ``|eigenvalue| <= svtol * max|eigenvalue|`` qualify.
    ``method`` is ``"dense"`` (full eigendecomposition), ``"sparse"``
    (shift-invert Lanczos) or ``"auto"`` (dense up to 3000 unknowns).
    """
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n <= 3000 else "sparse"
    if method == "dense":
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        vals, vecs = np.linalg.eigh(Ad)
        top = np.max(np.abs(vals)) if n else 0.0
        keep = np.abs(vals) <= svtol * top
        basis = vecs[:, keep]
    elif method == "sparse":
        A = finalize(A)
        top = abs(spla.eigsh(A, k=1, which="LM", return_eigenvectors=False)[0])
        k = min(kmax + 1, n - 1)
        shift = -1e-3 * svtol * top
        vals, vecs = spla.eigsh(A, k=k, sigma=shift, which="LM")
        keep = np.abs(vals) <= svtol * top
        basis, _ = np.linalg.qr(vecs[:, keep]) if keep.any() else (np.zeros((n, 0)), None)
    else:
        raise ValueError(f"unknown method {method!r}")
    if basis.shape[1] > kmax:
        raise DimensionOverflowError(
            f"numerical null space has dimension {basis.shape[1]} > kmax={kmax}")
    # fix the sign so that results are reproducible
    for j in range(basis.shape[1]):
        pivot = np.argmax(np.abs(basis[:, j]))
        if basis[pivot, j] < 0:
            basis[:, j] = -basis[:, j]
    return basis


@dataclass(frozen=True)
class LsqProblem:
    """``min ||K x - y||^2 + alpha ||x||^2``."""

    K: np.ndarray
    y: np.ndarray
    alpha: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if K.shape[0] < 1 or K.shape[1] < 1:
            raise ValueError("K must have at least one row and one column")
        if np.asarray(self.y).shape != (K.shape[0],):
            raise ValueError("data vector length must match K")


def tikhonov_solve(p: LsqProblem) -> np.ndarray:
    """Solve the normal equations ``(K^T K + alpha I) x = K^T y`` densely."""
    K = np.atleast_2d(np.asarray(p.K, dtype=float))
    y = np.asarray(p.y, dtype=float)
    if p.alpha == 0.0 and np.linalg.matrix_rank(K) < K.shape[1]:
        raise RankDeficiencyError("K is rank deficient and alpha = 0")
    N = K.T @ K
    N[np.diag_indices_from(N)] += p.alpha
    try:
        c = sla.cho_factor(N)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"normal equations are singular: {exc}") from exc
    return sla.cho_solve(c, K.T @ y)
