"""P1 finite elements: stiffness, masses, loads, flux recovery and norms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError, InputError, NumericalError
from .mesh import ACCESSIBLE, INACCESSIBLE, BoundaryField, Mesh, Tag
from .numerics import Factorization, finalize

# 3-point Gauss-Legendre on [0, 1]
_G = np.sqrt(3.0 / 5.0) / 2.0
EDGE_POINTS = np.array([0.5 - _G, 0.5, 0.5 + _G])
EDGE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0

# 7-point degree-5 rule on the reference triangle, barycentric coordinates
_A1, _A2 = 0.470142064105115, 0.101286507323456
TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [1 - 2 * _A1, _A1, _A1], [_A1, 1 - 2 * _A1, _A1], [_A1, _A1, 1 - 2 * _A1],
    [1 - 2 * _A2, _A2, _A2], [_A2, 1 - 2 * _A2, _A2], [_A2, _A2, 1 - 2 * _A2],
])
TRI_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


@dataclass(frozen=True)
class ConductivityField:
    """Per-triangle symmetric positive definite 2x2 conductivity."""

    matrices: np.ndarray
    c_min: float

    @classmethod
    def from_matrices(cls, matrices) -> "ConductivityField":
        g = np.asarray(matrices, dtype=float)
        if g.ndim != 3 or g.shape[1:] != (2, 2):
            raise InputError("conductivity must be an array of 2x2 matrices")
        if not np.array_equal(g, np.swapaxes(g, 1, 2)):
            raise InputError("conductivity matrices must be symmetric")
        c = float(np.linalg.eigvalsh(g).min())
        if not c > 0.0:
            raise InputError("conductivity must be uniformly positive definite")
        return cls(g, c)

    @classmethod
    def constant(cls, mesh: Mesh, value=1.0) -> "ConductivityField":
        v = np.asarray(value, dtype=float)
        mat = v * np.eye(2) if v.ndim == 0 else v.reshape(2, 2)
        return cls.from_matrices(np.broadcast_to(mat, (mesh.n_triangles, 2, 2)).copy())

    def scaled(self, s: float) -> "ConductivityField":
        return ConductivityField.from_matrices(self.matrices * s)


def _gamma(mesh: Mesh, gamma) -> ConductivityField:
    if gamma is None:
        return ConductivityField.constant(mesh, 1.0)
    if isinstance(gamma, ConductivityField):
        if gamma.matrices.shape[0] != mesh.n_triangles:
            raise InputError("conductivity is not defined on every triangle")
        return gamma
    return ConductivityField.constant(mesh, gamma)


def p1_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Constant hat-function gradients ``(T, 3, 2)`` and triangle areas."""
    area = mesh.signed_areas
    if np.any(area <= 0):
        raise GeometryError("degenerate triangle")
    p = mesh.nodes[mesh.triangles]
    # gradient of barycentric lambda_i is rot(p_k - p_j) / (2 area)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    grads = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2.0 * area[:, None, None])
    return grads, area


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    return finalize(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def local_stiffness(mesh: Mesh, gamma=None) -> np.ndarray:
    g = _gamma(mesh, gamma)
    grads, area = p1_gradients(mesh)
    flux = np.einsum("tab,tjb->tja", g.matrices, grads)
    return area[:, None, None] * np.einsum("tia,tja->tij", grads, flux)


def assemble_stiffness(mesh: Mesh, gamma=None) -> sp.csr_matrix:
    """Entries ``int gamma grad phi_i . grad phi_j`` (exact for P1)."""
    K = _scatter(mesh, local_stiffness(mesh, gamma))
    return _symmetrize(K)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 volume mass matrix."""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.signed_areas[:, None, None] * ref[None]
    return _symmetrize(_scatter(mesh, local))


def _symmetrize(K: sp.csr_matrix) -> sp.csr_matrix:
    # floating-point accumulation can differ in the last bit between (i,j) and (j,i)
    return finalize(0.5 * (K + K.T))


class EdgeQuadrature:
    """3-point Gauss rule on every edge of one boundary part."""

    def __init__(self, mesh: Mesh, tag: Tag):
        part = mesh.partition(tag)
        self.mesh = mesh
        self.tag = part.tag
        self.edges = part.edges
        self.lengths = part.lengths
        self.phi = np.column_stack([1.0 - EDGE_POINTS, EDGE_POINTS])      # (3, 2)
        a = mesh.nodes[self.edges[:, 0]]
        b = mesh.nodes[self.edges[:, 1]]
        self.points = a[:, None, :] * self.phi[None, :, 0:1] + b[:, None, :] * self.phi[None, :, 1:2]
        self.weights = self.lengths[:, None] * EDGE_WEIGHTS[None, :]     # (E, 3)

    @property
    def x(self) -> np.ndarray:
        return self.points[..., 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[..., 1]

    def interpolate(self, u: np.ndarray) -> np.ndarray:
        """Values of the P1 function ``u`` (nodal vector) at the Gauss points."""
        u = np.asarray(u, dtype=float)
        return u[self.edges[:, 0], None] * self.phi[None, :, 0] + u[self.edges[:, 1], None] * self.phi[None, :, 1]

    def load(self, values: np.ndarray) -> np.ndarray:
        """Nodal vector ``int f phi_i ds`` from Gauss-point values of ``f``."""
        wv = self.weights * np.broadcast_to(values, self.weights.shape)
        contrib = wv @ self.phi                                           # (E, 2)
        out = np.zeros(self.mesh.n_nodes)
        np.add.at(out, self.edges[:, 0], contrib[:, 0])
        np.add.at(out, self.edges[:, 1], contrib[:, 1])
        return out

    def mass(self, q: np.ndarray) -> sp.csr_matrix:
        """Matrix ``int q phi_i phi_j ds`` from Gauss-point values of ``q``."""
        wq = self.weights * np.broadcast_to(q, self.weights.shape)
        local = np.einsum("eg,ga,gb->eab", wq, self.phi, self.phi)
        e = self.edges
        rows = np.repeat(e, 2, axis=1).ravel()
        cols = np.tile(e, (1, 2)).ravel()
        n = self.mesh.n_nodes
        return _symmetrize(finalize(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))))

    def evaluate(self, f) -> np.ndarray:
        """Gauss-point values of a scalar, callable ``f(x, y)``, or BoundaryField."""
        if f is None:
            return np.zeros(self.weights.shape)
        if isinstance(f, BoundaryField):
            if f.tag != self.tag:
                raise InputError("boundary field carries the wrong tag")
            return self.interpolate(f.to_nodal(self.mesh.n_nodes))
        if callable(f):
            return np.broadcast_to(np.asarray(f(self.x, self.y), dtype=float), self.weights.shape).copy()
        if np.isscalar(f):
            return np.full(self.weights.shape, float(f))
        arr = np.asarray(f, dtype=float)
        if arr.shape == self.weights.shape:
            return arr
        return self.interpolate(self.mesh.boundary_field(self.tag, arr).to_nodal(self.mesh.n_nodes))


def edge_quadrature(mesh: Mesh, tag: Tag) -> EdgeQuadrature:
    cache = mesh.__dict__.setdefault("_edge_quadrature", {})
    tag = Tag(tag)
    if tag not in cache:
        cache[tag] = EdgeQuadrature(mesh, tag)
    return cache[tag]


def assemble_boundary_mass(mesh: Mesh, tag: Tag = INACCESSIBLE, q=1.0) -> sp.csr_matrix:
    """Entries ``int_Gamma q phi_i phi_j ds``.

    ``q`` may be a scalar, a BoundaryField (piecewise linear), a callable of
    ``(x, y)``, or an array of Gauss-point values of shape ``(E, 3)``.
    """
    quad = edge_quadrature(mesh, tag)
    return quad.mass(quad.evaluate(q))


def assemble_neumann_load(mesh: Mesh, tag: Tag, f) -> np.ndarray:
    """Nodal vector ``int_Gamma f phi_i ds``."""
    quad = edge_quadrature(mesh, tag)
    return quad.load(quad.evaluate(f))


def assemble_volume_load(mesh: Mesh, f) -> np.ndarray:
    """Nodal vector ``int_Omega f phi_i dx`` for callable or nodal ``f``."""
    if not callable(f):
        return assemble_mass(mesh) @ np.asarray(f, dtype=float)
    p = mesh.nodes[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", TRI_BARY, p)
    vals = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(pts.shape[:2])
    local = mesh.signed_areas[:, None] * ((vals * TRI_WEIGHTS[None, :]) @ TRI_BARY)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.triangles.ravel(), local.ravel())
    return out


def lumped_boundary_mass(mesh: Mesh, tag: Tag) -> np.ndarray:
    """``int_Gamma phi_i ds`` at the nodes of the tagged partition (partition order)."""
    part = mesh.partition(tag)
    return assemble_neumann_load(mesh, tag, 1.0)[part.nodes]


@dataclass(frozen=True)
class FluxField(BoundaryField):
    """Nodal flux plus the raw functional weights it was lumped from."""

    weights: np.ndarray = None

    def weights_nodal(self, n_nodes: int) -> np.ndarray:
        out = np.zeros(n_nodes)
        out[self.nodes] = self.weights
        return out


def flux_from_weights(mesh: Mesh, tag: Tag, weights: np.ndarray) -> FluxField:
    part = mesh.partition(tag)
    w = np.asarray(weights, dtype=float)
    return FluxField(part.tag, part.nodes, w / lumped_boundary_mass(mesh, tag), w)


def flux_from_values(mesh: Mesh, tag: Tag, values: np.ndarray) -> FluxField:
    part = mesh.partition(tag)
    v = np.asarray(values, dtype=float)
    return FluxField(part.tag, part.nodes, v, v * lumped_boundary_mass(mesh, tag))


def conormal_flux(mesh: Mesh, u, A, load, tag: Tag) -> FluxField:
    """Residual functional ``A u - load`` on the tagged boundary test functions.

    Weights are divided by the lumped mass of the tagged part to give nodal
    flux values.
    """
    r = A @ np.asarray(u, dtype=float) - (0.0 if load is None else np.asarray(load, dtype=float))
    return flux_from_weights(mesh, tag, r[mesh.partition(tag).nodes])


class Norms(NamedTuple):
    l2: float
    h1: float
    linf: float


def discrete_norms(u, A_ref, M_ref) -> Norms:
    u = np.asarray(u, dtype=float)
    m = float(u @ (M_ref @ u))
    a = float(u @ (A_ref @ u))
    return Norms(np.sqrt(max(m, 0.0)), np.sqrt(max(m + a, 0.0)), float(np.max(np.abs(u))) if u.size else 0.0)


class NormKit:
    """Reference matrices (gamma = I) for discrete norms on one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.A = assemble_stiffness(mesh)
        self.M = assemble_mass(mesh)

    def __call__(self, u) -> Norms:
        return discrete_norms(u, self.A, self.M)

    def h1(self, u) -> float:
        return self(u).h1

    def l2(self, u) -> float:
        return self(u).l2


def norm_kit(mesh: Mesh) -> NormKit:
    cache = mesh.__dict__
    if "_norm_kit" not in cache:
        cache["_norm_kit"] = NormKit(mesh)
    return cache["_norm_kit"]


def coercivity_check(A, Mq, lam: float, M_unit, tol: float = 1e-12, maxiter: int = 5000) -> float:
    """Smallest eigenvalue of ``A + Mq + lam * M_unit`` by inverse iteration.

    The matrix is shifted by a Gershgorin lower bound so that the iteration
    targets the algebraically smallest eigenvalue.
    """
    B = finalize(A + Mq + lam * M_unit)
    n = B.shape[0]
    diag = B.diagonal()
    off = np.asarray(abs(B).sum(axis=1)).ravel() - np.abs(diag)
    scale = float(np.max(np.abs(diag) + off))
    shift = max(0.0, -float(np.min(diag - off))) + 1e-12 * scale
    fact = Factorization(B + shift * sp.identity(n, format="csr"))
    x = 1.0 + 0.1 * np.sin(np.arange(n) + 0.5)
    x /= np.linalg.norm(x)
    mu = float(x @ (B @ x))
    for _ in range(maxiter):
        x = fact.solve(x)
        x /= np.linalg.norm(x)
        mu_new = float(x @ (B @ x))
        if abs(mu_new - mu) <= tol * scale:
            return mu_new
        mu = mu_new
    raise NumericalError(f"inverse iteration did not converge in {maxiter} steps")


def error_norms(mesh: Mesh, u_h, exact: Callable, grad: Callable) -> tuple[float, float]:
    """``(L2 error, H1 error)`` of P1 ``u_h`` against an exact solution.

    ``exact(x, y)`` returns values and ``grad(x, y)`` returns ``(ux, uy)``;
    integrals use a degree-5 triangle rule.
    """
    u_h = np.asarray(u_h, dtype=float)
    p = mesh.nodes[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", TRI_BARY, p)
    uq = np.einsum("qk,tk->tq", TRI_BARY, u_h[mesh.triangles])
    grads, area = p1_gradients(mesh)
    gh = np.einsum("tk,tkd->td", u_h[mesh.triangles], grads)
    ex = exact(pts[..., 0], pts[..., 1])
    gx, gy = grad(pts[..., 0], pts[..., 1])
    w = area[:, None] * TRI_WEIGHTS[None, :]
    l2sq = np.sum(w * (uq - ex) ** 2)
    semisq = np.sum(w * ((gh[:, None, 0] - gx) ** 2 + (gh[:, None, 1] - gy) ** 2))
    return float(np.sqrt(l2sq)), float(np.sqrt(l2sq + semisq))


__all__ = [
    "ACCESSIBLE", "INACCESSIBLE", "ConductivityField", "EdgeQuadrature", "FluxField", "NormKit", "Norms",
    "assemble_boundary_mass", "assemble_mass", "assemble_neumann_load", "assemble_stiffness",
    "assemble_volume_load", "coercivity_check", "conormal_flux", "discrete_norms", "edge_quadrature",
    "error_norms", "flux_from_values", "flux_from_weights", "local_stiffness", "lumped_boundary_mass",
    "norm_kit", "p1_gradients",
]
