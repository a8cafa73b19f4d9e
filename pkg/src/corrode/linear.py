"""Linear Robin problems with a possibly nontrivial kernel.

The discrete operator is ``K = A + M_q`` (stiffness plus Robin boundary mass
on the inaccessible part).  When ``K`` is singular, loads are made compatible
by subtracting a correction supported on the accessible part, and the
solution is fixed by requiring its accessible trace to be orthogonal to the
traces of the kernel fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InputError, NumericalError
from .fem import (_gamma, assemble_boundary_mass, assemble_mass, assemble_stiffness, edge_quadrature)
from .mesh import ACCESSIBLE, INACCESSIBLE, BoundaryField, Mesh
from .numerics import SaddleSolver, finalize, nullspace_estimate

KERNEL_RTOL = 1e-8


@dataclass(frozen=True)
class KernelBasis:
    """Kernel of the discrete Robin operator.

    ``fields`` are normalized so that their accessible traces are orthonormal
    in ``L2(Gamma_A)``; ``volume_fields`` span the same space and are
    orthonormal in ``L2(Omega)``.
    """

    fields: np.ndarray
    volume_fields: np.ndarray
    trace_nodes: np.ndarray
    trace_mass: sp.csr_matrix        # accessible boundary mass, full size
    volume_mass: sp.csr_matrix
    residuals: np.ndarray
    operator_norm: float

    @property
    def dim(self) -> int:
        return self.fields.shape[1]

    @property
    def traces(self) -> np.ndarray:
        return self.fields[self.trace_nodes]

    def trace_gram(self) -> np.ndarray:
        return self.fields.T @ (self.trace_mass @ self.fields)

    def volume_gram(self) -> np.ndarray:
        return self.volume_fields.T @ (self.volume_mass @ self.volume_fields)

    def trace_coefficients(self, v) -> np.ndarray:
        """``<v, psi_i>_{L2(Gamma_A)}`` for a nodal vector or accessible BoundaryField."""
        return self.fields.T @ (self.trace_mass @ _nodal_trace(v, self))


def _nodal_trace(v, basis: KernelBasis) -> np.ndarray:
    n = basis.fields.shape[0]
    if isinstance(v, BoundaryField):
        if v.tag is not ACCESSIBLE:
            raise InputError("trace projection expects accessible boundary data")
        return v.to_nodal(n)
    v = np.asarray(v, dtype=float)
    if v.shape == (n,):
        return v
    out = np.zeros(n)
    out[basis.trace_nodes] = v
    return out


def robin_matrices(mesh: Mesh, gamma=None, q=0.0):
    """``(A, M_q)`` with ``q`` on the inaccessible part (see assemble_boundary_mass)."""
    A = assemble_stiffness(mesh, gamma)
    Mq = assemble_boundary_mass(mesh, INACCESSIBLE, q)
    return A, Mq


def kernel_of(mesh: Mesh, K, svtol: float = KERNEL_RTOL, kmax: int = 8) -> KernelBasis:
    """Kernel basis of an assembled Robin operator ``K``."""
    K = finalize(K)
    V = nullspace_estimate(K, svtol=svtol, kmax=kmax)
    M_A = assemble_boundary_mass(mesh, ACCESSIBLE, 1.0)
    M = assemble_mass(mesh)
    k = V.shape[1]
    op_norm = spectral_norm(K)
    if k:
        G = V.T @ (M_A @ V)
        if np.linalg.matrix_rank(G, tol=1e-10 * max(np.abs(G).max(), 1e-300)) < k:
            raise NumericalError("kernel field with vanishing accessible trace")
        L = np.linalg.cholesky(G)
        fields = sla.solve_triangular(L, V.T, lower=True).T
        Gv = fields.T @ (M @ fields)
        Lv = np.linalg.cholesky(Gv)
        volume_fields = sla.solve_triangular(Lv, fields.T, lower=True).T
        residuals = np.linalg.norm(K @ fields, axis=0) / (op_norm * np.linalg.norm(fields, axis=0))
    else:
        fields = np.zeros((mesh.n_nodes, 0))
        volume_fields = fields
        residuals = np.zeros(0)
    for arr in (fields, volume_fields):
        arr.setflags(write=False)
    return KernelBasis(fields, volume_fields, mesh.partition(ACCESSIBLE).nodes, M_A, M, residuals, op_norm)


def spectral_norm(K) -> float:
    """Largest eigenvalue magnitude of a symmetric matrix."""
    n = K.shape[0]
    if n <= 200:
        return float(np.max(np.abs(np.linalg.eigvalsh(K.toarray()))))
    return float(abs(spla.eigsh(K, k=1, which="LM", return_eigenvectors=False)[0]))


def compute_kernel(mesh: Mesh, gamma=None, q=0.0, svtol: float = KERNEL_RTOL, kmax: int = 8) -> KernelBasis:
    A, Mq = robin_matrices(mesh, gamma, q)
    return kernel_of(mesh, A + Mq, svtol, kmax)


def project_onto_kernel(u, basis: KernelBasis) -> np.ndarray:
    """L2(Omega)-orthogonal projection onto the kernel."""
    u = np.asarray(u, dtype=float)
    if basis.dim == 0:
        return np.zeros_like(u)
    V = basis.volume_fields
    return V @ (V.T @ (basis.volume_mass @ u))


def project_trace(v, basis: KernelBasis) -> BoundaryField:
    """L2(Gamma_A)-orthogonal projection of an accessible trace onto kernel traces."""
    c = basis.trace_coefficients(v)
    vals = basis.traces @ c if basis.dim else np.zeros(basis.trace_nodes.size)
    return BoundaryField(ACCESSIBLE, basis.trace_nodes, vals)


def lift_trace(v, basis: KernelBasis) -> np.ndarray:
    """Kernel field whose accessible trace is the projection of ``v``."""
    if basis.dim == 0:
        return np.zeros(basis.fields.shape[0])
    return basis.fields @ basis.trace_coefficients(v)


def check_compatibility(F, basis: KernelBasis) -> float:
    """``max_i |<F, psi_i>|``: zero means the load is solvable as is."""
    if basis.dim == 0:
        return 0.0
    return float(np.max(np.abs(basis.fields.T @ np.asarray(F, dtype=float))))


def phi_correction(f, g, basis: KernelBasis) -> BoundaryField:
    """Accessible-boundary field whose induced load removes the incompatibility of ``f + g``."""
    F = np.asarray(f, dtype=float) + np.asarray(g, dtype=float)
    c = basis.fields.T @ F if basis.dim else np.zeros(0)
    vals = basis.traces @ c if basis.dim else np.zeros(basis.trace_nodes.size)
    return BoundaryField(ACCESSIBLE, basis.trace_nodes, vals)


def phi_load(f, g, basis: KernelBasis) -> np.ndarray:
    """Load induced on the accessible part by :func:`phi_correction`."""
    phi = phi_correction(f, g, basis)
    return basis.trace_mass @ phi.to_nodal(basis.fields.shape[0])


@dataclass
class RestrictedSolveReport:
    kernel_dim: int
    phi_norm: float
    defect_before: float
    residual: float
    constraint_violation: float
    full_boundary_pairing: float
    iterations: int = 1
    notes: list = field(default_factory=list)


class RobinOperator:
    """Assembled linear Robin operator with kernel basis and constrained solver.

    Parameters
    ----------
    mesh : Mesh
    gamma : conductivity (scalar, 2x2 matrix or ConductivityField); identity by default.
    q : Robin coefficient on the inaccessible part: scalar, callable of (x, y),
        BoundaryField, or Gauss-point array of shape (E, 3).
    """

    def __init__(self, mesh: Mesh, gamma=None, q=0.0, svtol: float = KERNEL_RTOL, kmax: int = 8):
        self.mesh = mesh
        self.gamma = _gamma(mesh, gamma)
        self.A, self.Mq = robin_matrices(mesh, self.gamma, q)
        self.K = finalize(self.A + self.Mq)
        self.kernel = kernel_of(mesh, self.K, svtol, kmax)
        self.M_A = self.kernel.trace_mass
        B = (self.M_A @ self.kernel.fields).T if self.kernel.dim else None
        self._saddle = SaddleSolver(self.K, B)
        self._full_mass = None

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    def phi(self, f, g=0.0) -> BoundaryField:
        return phi_correction(f, np.broadcast_to(g, (self.n,)), self.kernel)

    def phi_load(self, F) -> np.ndarray:
        return phi_load(F, np.zeros(self.n), self.kernel)

    def _boundary_mass(self):
        if self._full_mass is None:
            self._full_mass = self.M_A + assemble_boundary_mass(self.mesh, INACCESSIBLE, 1.0)
        return self._full_mass

    def solve_load(self, F, tol: float = 1e-10) -> tuple[np.ndarray, RestrictedSolveReport]:
        """Constrained solve for a total load ``F`` (any support)."""
        F = np.asarray(F, dtype=float)
        basis = self.kernel
        defect = check_compatibility(F, basis)
        if basis.dim:
            coeff = basis.fields.T @ F
            rhs = F - self.M_A @ (basis.fields @ coeff)
            phi_norm = float(np.linalg.norm(coeff))
        else:
            rhs, phi_norm = F, 0.0
        u, _ = self._saddle.solve(rhs)
        res_abs = np.linalg.norm(self.K @ u - rhs)
        scale = max(np.linalg.norm(rhs), np.linalg.norm(F))
        residual = float(res_abs / scale) if scale > 0 else float(res_abs)
        if basis.dim:
            cv = float(np.max(np.abs(basis.fields.T @ (self.M_A @ u))))
            fb = float(np.max(np.abs(basis.fields.T @ (self._boundary_mass() @ u))))
        else:
            cv = fb = 0.0
        report = RestrictedSolveReport(basis.dim, phi_norm, defect, residual, cv, fb)
        if not residual <= tol:
            raise NumericalError(f"restricted solve residual {residual:.3e} exceeds {tol:.1e}", report)
        return u, report

    def solve_restricted(self, f, g=None, tol: float = 1e-10) -> tuple[np.ndarray, RestrictedSolveReport]:
        """Solve with accessible load ``f`` and inaccessible load ``g``."""
        f = np.zeros(self.n) if f is None else np.asarray(f, dtype=float)
        g = np.zeros(self.n) if g is None else np.asarray(g, dtype=float)
        _check_support(self.mesh, f, ACCESSIBLE, "f")
        _check_support(self.mesh, g, INACCESSIBLE, "g")
        return self.solve_load(f + g, tol)


def _check_support(mesh: Mesh, load: np.ndarray, tag, name: str) -> None:
    if load.shape != (mesh.n_nodes,):
        raise InputError(f"load {name} must be a nodal vector")
    outside = np.ones(mesh.n_nodes, dtype=bool)
    outside[mesh.partition(tag).nodes] = False
    if np.any(load[outside] != 0.0):
        raise InputError(f"load {name} has entries outside the {tag.value.lower()} boundary")


def solve_restricted(mesh: Mesh, f, g, q=0.0, gamma=None, tol: float = 1e-10):
    """One-shot convenience wrapper around :class:`RobinOperator`."""
    return RobinOperator(mesh, gamma, q).solve_restricted(f, g, tol)


def steklov_eigenvalues(mesh: Mesh, gamma=None) -> np.ndarray:
    """Eigenvalues of ``A u = mu M_I u`` (finite ones, ascending).

    Interior and accessible unknowns are eliminated, leaving a dense
    generalized problem on the inaccessible nodes.
    """
    A = assemble_stiffness(mesh, gamma).tocsr()
    M = assemble_boundary_mass(mesh, INACCESSIBLE, 1.0).tocsr()
    I = mesh.partition(INACCESSIBLE).nodes
    O = np.setdiff1d(np.arange(mesh.n_nodes), I)
    A_II = A[I][:, I].toarray()
    A_IO = A[I][:, O]
    A_OO = A[O][:, O].tocsc()
    X = spla.splu(A_OO).solve(A_IO.T.toarray())
    S = A_II - A_IO @ X
    S = 0.5 * (S + S.T)
    return sla.eigh(S, M[I][:, I].toarray(), eigvals_only=True)


def kernel_making_coefficient(mesh: Mesh, gamma=None) -> float:
    """Constant Robin coefficient ``-mu*`` whose operator has a one-dimensional kernel.

    ``mu*`` is the smallest positive discrete Steklov-type eigenvalue.
    """
    mu = steklov_eigenvalues(mesh, gamma)
    positive = mu[mu > 1e-8 * np.max(np.abs(mu))]
    return -float(positive[0])


def robin_quadrature_values(mesh: Mesh, q) -> np.ndarray:
    """Gauss-point values of a Robin coefficient on the inaccessible part."""
    return edge_quadrature(mesh, INACCESSIBLE).evaluate(q)
