"""Lab and reconstructor roles of the corrosion identification experiment.

The lab role (:func:`generate_cauchy_data`) knows the true nonlinearity and
produces Cauchy pairs on the accessible boundary.  The reconstructor role
(:class:`CompletionOperator`, :func:`harvest_samples`,
:func:`reconstruct_nonlinearity`) only ever sees those pairs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import CompletionError, InputError
from .fem import FluxField, assemble_boundary_mass, flux_from_weights, lumped_boundary_mass
from .linear import RobinOperator
from .mesh import ACCESSIBLE, INACCESSIBLE, BoundaryField, Mesh
from .nonlinear import NonlinearRobin, Nonlinearity
from .numerics import LsqProblem, tikhonov_solve
from .runge import RungeCertificate, SweepResult, amplitude_sweep, approximate_trace, \
    default_alpha_schedule, max_stable_amplitude

MOROZOV_SAFETY = 1.2
FLAG_THRESHOLD = 0.05
# misfits below this fraction of the data norm are rounding noise
ROUNDOFF_LEVEL = 1e-12
COMPLETION_ALPHAS = default_alpha_schedule(1e0, 1e-12)


@dataclass
class CauchyPair:
    """Trace and conormal flux of one solution on the accessible boundary."""

    id: int
    trace: BoundaryField
    flux: FluxField
    noise: float = 0.0

    def __post_init__(self):
        if self.trace.tag is not ACCESSIBLE or self.flux.tag is not ACCESSIBLE:
            raise InputError("Cauchy data must live on the accessible boundary")
        if not np.array_equal(self.trace.nodes, self.flux.nodes):
            raise InputError("trace and flux of a Cauchy pair need the same nodes")


@dataclass
class Design:
    """Lab-side experiment design.

    ``t_max = None`` picks the amplitude with :func:`max_stable_amplitude`.
    ``baseline_flux`` is a constant Neumann value on the accessible boundary
    defining the baseline solution ``w``.
    """

    theta: float = 0.01
    alpha_schedule: tuple | None = None
    t_max: float | None = 0.3
    n_t: int = 21
    beta: float = 0.5
    baseline_flux: float = 0.0
    fp_tol: float = 1e-12

    def t_grid(self, t_max: float) -> np.ndarray:
        if self.n_t == 1:
            return np.zeros(1)
        k = 2.0 * np.arange(self.n_t) - (self.n_t - 1)
        return t_max * k / (self.n_t - 1)


@dataclass
class LabRun:
    """Everything the lab produced; only ``pairs`` is handed to the reconstructor.

    ``true_u`` and ``true_flux`` hold the exact inaccessible traces and fluxes
    (``-a(x, u)``) per pair for harness comparisons.  ``conservation`` holds
    ``sum(accessible weights) + total inaccessible Robin flux`` per pair.
    """

    pairs: list
    w: np.ndarray
    certificate: RungeCertificate | None
    sweep: SweepResult | None
    fields: list
    true_u: list
    true_flux: list
    conservation: list


def _accessible_load(mesh: Mesh, value: float) -> np.ndarray:
    F = np.zeros(mesh.n_nodes)
    part = mesh.partition(ACCESSIBLE)
    F[part.nodes] = value * lumped_boundary_mass(mesh, ACCESSIBLE)
    return F


def _noisy_pair(mesh: Mesh, pid: int, u, weights, noise: float, rng) -> CauchyPair:
    acc = mesh.partition(ACCESSIBLE)
    xi_trace = rng.standard_normal(acc.size)
    xi_flux = rng.standard_normal(acc.size)
    trace = BoundaryField(ACCESSIBLE, acc.nodes, u[acc.nodes] * (1.0 + noise * xi_trace))
    flux = flux_from_weights(mesh, ACCESSIBLE, weights * (1.0 + noise * xi_flux))
    return CauchyPair(pid, trace, flux, noise)


def generate_cauchy_data(mesh: Mesh, a_true: Nonlinearity, design: Design | None = None,
                         noise: float = 0.0, seed: int = 0, gamma=None, svtol: float = 1e-8,
                         kmax: int = 8) -> LabRun:
    """Run the lab side: baseline, Runge certificate, amplitude sweep, noisy Cauchy pairs.

    The noise is multiplicative Gaussian of relative level ``noise`` on both
    the nodal trace and the nodal flux.  Normal draws are taken for every
    pair regardless of ``noise`` so runs with the same seed share one stream.
    """
    design = design or Design()
    rng = np.random.default_rng(seed)
    problem = NonlinearRobin(mesh, a_true, gamma, svtol, kmax)
    F0 = _accessible_load(mesh, design.baseline_flux)
    w, _ = problem.newton_solve(F0)
    inacc = mesh.partition(INACCESSIBLE)
    quad_pts = mesh.nodes[inacc.nodes]

    cert, sweep = None, None
    if design.n_t == 1:
        fields = [w]
    else:
        lin = problem.linearize(w)
        cert = approximate_trace(lin.op, 1.0, design.theta, design.alpha_schedule)
        t_max = design.t_max
        if t_max is None:
            t_max = max_stable_amplitude(lin, cert.v)
        sweep = amplitude_sweep(lin, cert, design.beta, design.t_grid(t_max), fp_tol=design.fp_tol)
        fields = [sweep.fields[i] for i in np.flatnonzero(sweep.ok)]

    pairs, true_u, true_flux, conservation = [], [], [], []
    for pid, u in enumerate(fields):
        flux = problem.accessible_flux(u)
        pairs.append(_noisy_pair(mesh, pid, u, flux.weights, noise, rng))
        true_u.append(u[inacc.nodes].copy())
        true_flux.append(-a_true.eval(quad_pts, u[inacc.nodes]))
        robin_total = -float(problem.boundary_term(u).sum())
        conservation.append(float(flux.weights.sum()) + robin_total)
    return LabRun(pairs, w, cert, sweep, fields, true_u, true_flux, conservation)


def transfer_pair(pair: CauchyPair, src: Mesh, dst: Mesh) -> CauchyPair:
    """Interpolate a pair along accessible arclength onto another mesh of the same geometry."""
    sa, da = src.partition(ACCESSIBLE), dst.partition(ACCESSIBLE)
    if not math.isclose(sa.length, da.length, rel_tol=1e-9):
        raise InputError("meshes describe different accessible boundaries")
    trace = np.interp(da.arclength, sa.arclength, pair.trace.values)
    flux = np.interp(da.arclength, sa.arclength, pair.flux.values)
    lumped = lumped_boundary_mass(dst, ACCESSIBLE)
    return CauchyPair(pair.id, BoundaryField(ACCESSIBLE, da.nodes, trace),
                      FluxField(ACCESSIBLE, da.nodes, flux, flux * lumped), pair.noise)


@dataclass
class CompletionReport:
    """``curve`` rows are ``(alpha, misfit, |h|)``; misfits are L2 norms on the accessible part."""

    alpha: float
    misfit: float
    relative_misfit: float
    discrepancy: float
    flagged: bool
    curve: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "misfit": self.misfit,
            "relative_misfit": self.relative_misfit,
            "discrepancy": self.discrepancy,
            "flagged": self.flagged,
            "curve": [list(map(float, row)) for row in self.curve],
        }


class CompletionOperator:
    """Quasi-solution data completion for the conductivity equation.

    The unknown is the nodal flux ``h`` on the inaccessible part (load
    ``M_I h``).  Fredholm compatibility is built in by writing
    ``h = h_p + Z y`` with ``Z`` an orthonormal basis of the admissible
    directions; the additive kernel component of ``u`` is eliminated by
    projecting the misfit onto the complement of the kernel traces.
    """

    def __init__(self, mesh: Mesh, gamma=None):
        self.mesh = mesh
        self.op = RobinOperator(mesh, gamma, 0.0)
        n = mesh.n_nodes
        self.acc = mesh.partition(ACCESSIBLE).nodes
        self.inacc = mesh.partition(INACCESSIBLE).nodes
        self.M_I_full = assemble_boundary_mass(mesh, INACCESSIBLE, 1.0)
        M_I = self.M_I_full[self.inacc][:, self.inacc].toarray()
        M_AA = self.op.M_A[self.acc][:, self.acc].toarray()
        self.L_A = np.linalg.cholesky(M_AA)
        psi = self.op.kernel.fields
        self.psi = psi
        self.C = psi[self.inacc].T @ M_I
        self.Z = sla.null_space(self.C) if psi.shape[1] else np.eye(self.inacc.size)
        self.C_pinv = np.linalg.pinv(self.C) if psi.shape[1] else np.zeros((self.inacc.size, 0))
        self.W_psi = self.L_A.T @ psi[self.acc]
        self.Q = np.linalg.qr(self.W_psi)[0] if psi.shape[1] else np.zeros((self.acc.size, 0))
        E = np.zeros((n, self.Z.shape[1]))
        E[self.inacc] = self.Z
        loads = self.M_I_full @ E
        self.U = np.column_stack([self.op.solve_load(loads[:, j])[0] for j in range(loads.shape[1])])
        self.K = self._project(self.L_A.T @ self.U[self.acc])
        # weights are relative to the largest squared singular value of the trace map
        self.scale = float(np.linalg.norm(self.K, 2) ** 2) if self.K.size else 1.0

    def _project(self, X):
        return X - self.Q @ (self.Q.T @ X)

    def trace_norm(self, values) -> float:
        return float(np.linalg.norm(self.L_A.T @ values))

    def complete(self, pair: CauchyPair, alpha_schedule=None, noise: float | None = None,
                 flag_threshold: float = FLAG_THRESHOLD):
        """Return ``(u_I, flux_I, report)`` for one Cauchy pair.

        ``noise`` is the relative noise estimate used by the discrepancy rule
        (defaults to the level recorded on the pair).
        """
        if not np.array_equal(pair.trace.nodes, self.acc):
            raise InputError("pair does not live on this mesh's accessible boundary")
        alphas = COMPLETION_ALPHAS if alpha_schedule is None else np.asarray(alpha_schedule, dtype=float)
        noise = pair.noise if noise is None else float(noise)
        n = self.mesh.n_nodes
        FA = pair.flux.weights_nodal(n)
        h_p = self.C_pinv @ (-(self.psi.T @ FA))
        hp_nodal = np.zeros(n)
        hp_nodal[self.inacc] = h_p
        u_b, _ = self.op.solve_load(FA + self.M_I_full @ hp_nodal)
        d = pair.trace.values
        r0 = self._project(self.L_A.T @ (d - u_b[self.acc]))
        d_norm = self.trace_norm(d)
        disc = MOROZOV_SAFETY * noise * d_norm

        curve, sols = [], []
        for alpha in alphas:
            y = tikhonov_solve(LsqProblem(self.K, r0, float(alpha) * self.scale))
            misfit = float(np.linalg.norm(self.K @ y - r0))
            h = h_p + self.Z @ y
            curve.append((float(alpha), misfit, float(np.linalg.norm(h))))
            sols.append(y)
        if noise == 0.0:
            # exact data: smoothest fit that matches to rounding, else the weakest weight
            exact = [i for i, row in enumerate(curve) if row[1] <= ROUNDOFF_LEVEL * d_norm]
            pick = max(exact, key=lambda i: alphas[i]) if exact else int(np.argmin(alphas))
        else:
            ok = [i for i, row in enumerate(curve) if row[1] >= disc]
            pick = min(ok, key=lambda i: alphas[i]) if ok else None
        if pick is None:
            # the misfit never reaches the noise level: keep the smoothest fit, flagged,
            # with residual tau*delta/misfit > 1
            top = int(np.argmax(alphas))
            shortfall = disc / max(curve[top][1], np.finfo(float).tiny)
            report = CompletionReport(float(alphas[top]), curve[top][1], float(shortfall), disc, True, curve)
            fallback = self._assemble(u_b, h_p, sols[top], d) + (report,)
            raise CompletionError(f"no weight reaches the discrepancy level {disc:.3e}", report, fallback)
        misfit = curve[pick][1]
        rel = misfit / d_norm if d_norm > 0 else misfit
        report = CompletionReport(float(alphas[pick]), misfit, rel, disc, rel > flag_threshold, curve)
        return self._assemble(u_b, h_p, sols[pick], d) + (report,)

    def _assemble(self, u_b, h_p, y, d):
        u = u_b + self.U @ y
        if self.psi.shape[1]:
            c = np.linalg.lstsq(self.W_psi, self.L_A.T @ (d - u[self.acc]), rcond=None)[0]
            u = u + self.psi @ c
        h = h_p + self.Z @ y
        return (BoundaryField(INACCESSIBLE, self.inacc, u[self.inacc]),
                BoundaryField(INACCESSIBLE, self.inacc, h))


def complete_cauchy_data(pair: CauchyPair, mesh: Mesh, gamma=None, alpha_schedule=None,
                         noise: float | None = None):
    return CompletionOperator(mesh, gamma).complete(pair, alpha_schedule, noise)


@dataclass(frozen=True)
class ReachableSample:
    id: int
    node: int
    arclength: float
    z: float
    value: float
    residual: float
    flagged: bool = False


def harvest_samples(mesh: Mesh, u_I: BoundaryField, flux_I: BoundaryField, pid: int,
                    residual: float, flag_threshold: float = FLAG_THRESHOLD) -> list:
    """One sample ``(x, u(x), -flux(x))`` per inaccessible node."""
    part = mesh.partition(INACCESSIBLE)
    if not np.isfinite(residual):
        raise InputError("completion residual must be finite")
    flagged = residual > flag_threshold
    return [ReachableSample(pid, int(nd), float(s), float(z), float(-f), float(residual), flagged)
            for nd, s, z, f in zip(part.nodes, part.arclength, u_I.values, flux_I.values)]


SAMPLE_HEADER = ["id", "node", "arclength", "z", "value", "residual"]


def write_samples_csv(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SAMPLE_HEADER)
        for s in samples:
            out.writerow([s.id, s.node, f"{s.arclength:.17g}", f"{s.z:.17g}", f"{s.value:.17g}",
                          f"{s.residual:.17g}"])


def read_samples_csv(path, flag_threshold: float = FLAG_THRESHOLD) -> list:
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        if rows.fieldnames != SAMPLE_HEADER:
            raise InputError(f"unexpected sample header {rows.fieldnames}")
        return [ReachableSample(int(r["id"]), int(r["node"]), float(r["arclength"]), float(r["z"]),
                                float(r["value"]), float(r["residual"]),
                                float(r["residual"]) > flag_threshold) for r in rows]


@dataclass
class ReconstructionGrid:
    """Node-by-z-bin estimate of ``a``.

    Bin ``k`` is centered at ``z0 + k dz``.  Unpopulated cells have
    ``count == 0`` and ``value == nan``; ``mean_z`` is the weighted mean of the
    sample potentials in each cell.
    """

    nodes: np.ndarray
    arclength: np.ndarray
    z0: float
    dz: float
    k: np.ndarray
    values: np.ndarray
    mean_z: np.ndarray
    counts: np.ndarray

    @property
    def z_centers(self) -> np.ndarray:
        return self.z0 + self.k * self.dz

    @property
    def mask(self) -> np.ndarray:
        return self.counts > 0

    def cell(self, node: int, z: float):
        """``(value, count)`` of the cell containing ``(node, z)``; ``(nan, 0)`` outside the grid."""
        i = np.flatnonzero(self.nodes == node)
        j = np.flatnonzero(self.k == bin_index(z, self.z0, self.dz))
        if i.size == 0 or j.size == 0:
            return math.nan, 0
        return float(self.values[i[0], j[0]]), int(self.counts[i[0], j[0]])


def bin_index(z, z0: float, dz: float):
    return np.floor((np.asarray(z) - z0) / dz + 0.5).astype(np.int64)


def reconstruct_nonlinearity(samples, dz: float, z0: float = 0.0, residual_floor: float = 1e-12
                             ) -> ReconstructionGrid:
    """Bin samples by (node, z) and average with weights ``1 / max(residual, floor)``."""
    if not dz > 0:
        raise ValueError("bin width must be positive")
    if not samples:
        empty = np.zeros((0, 0))
        return ReconstructionGrid(np.zeros(0, np.int64), np.zeros(0), z0, dz, np.zeros(0, np.int64),
                                  empty, empty, np.zeros((0, 0), np.int64))
    node = np.array([s.node for s in samples])
    arc = np.array([s.arclength for s in samples])
    z = np.array([s.z for s in samples])
    val = np.array([s.value for s in samples])
    wts = 1.0 / np.maximum(np.array([s.residual for s in samples]), residual_floor)
    nodes, first = np.unique(node, return_index=True)
    order = np.argsort(arc[first], kind="stable")
    nodes, arclength = nodes[order], arc[first][order]
    kk = bin_index(z, z0, dz)
    k = np.arange(kk.min(), kk.max() + 1)
    index = {int(nd): i for i, nd in enumerate(nodes)}
    row = np.array([index[int(nd)] for nd in node])
    col = kk - k[0]
    shape = (nodes.size, k.size)
    wsum = np.zeros(shape)
    vsum = np.zeros(shape)
    zsum = np.zeros(shape)
    counts = np.zeros(shape, np.int64)
    np.add.at(wsum, (row, col), wts)
    np.add.at(vsum, (row, col), wts * val)
    np.add.at(zsum, (row, col), wts * z)
    np.add.at(counts, (row, col), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, vsum / wsum, np.nan)
        mean_z = np.where(counts > 0, zsum / wsum, np.nan)
    return ReconstructionGrid(nodes, arclength, z0, dz, k, values, mean_z, counts)


@dataclass
class IdentificationReport:
    sup_abs: float
    sup_rel: float | None
    l2_abs: float
    populated: int
    band_cells: int | None
    band_populated: int | None

    @property
    def coverage(self) -> float | None:
        if not self.band_cells:
            return None
        return self.band_populated / self.band_cells

    def to_dict(self) -> dict:
        return {"sup_abs": self.sup_abs, "sup_rel": self.sup_rel, "l2_abs": self.l2_abs,
                "populated_cells": self.populated, "band_cells": self.band_cells,
                "band_populated": self.band_populated, "coverage": self.coverage}


def verify_identification(grid: ReconstructionGrid, a_true: Nonlinearity, mesh: Mesh,
                          w_trace: np.ndarray | None = None, lam: float | None = None
                          ) -> IdentificationReport:
    """Compare populated cells with ``a_true`` at each cell's mean potential.

    With ``w_trace`` (values on all inaccessible nodes, partition order) and
    ``lam`` the report also counts how many cells of the band
    ``|z - w(x)| <= lam`` are populated.
    """
    mask = grid.mask
    if mask.any():
        rows, cols = np.nonzero(mask)
        pts = mesh.nodes[grid.nodes[rows]]
        truth = a_true.eval(pts, grid.mean_z[rows, cols])
        err = grid.values[rows, cols] - truth
        sup_abs = float(np.max(np.abs(err)))
        scale = float(np.max(np.abs(truth)))
        sup_rel = sup_abs / scale if scale > 0 else None
        inacc = mesh.partition(INACCESSIBLE)
        lumped = dict(zip(inacc.nodes.tolist(), lumped_boundary_mass(mesh, INACCESSIBLE)))
        cell_w = np.array([lumped.get(int(nd), 0.0) for nd in grid.nodes[rows]]) * grid.dz
        l2_abs = float(np.sqrt(np.sum(cell_w * err**2)))
    else:
        sup_abs, sup_rel, l2_abs = 0.0, None, 0.0
    band_cells = band_pop = None
    if w_trace is not None and lam is not None:
        inacc = mesh.partition(INACCESSIBLE)
        band_cells = band_pop = 0
        tol = 1e-12 * max(1.0, lam)
        for nd, wx in zip(inacc.nodes, w_trace):
            lo = int(math.ceil((wx - lam - tol - grid.z0) / grid.dz))
            hi = int(math.floor((wx + lam + tol - grid.z0) / grid.dz))
            for kk in range(lo, hi + 1):
                band_cells += 1
                _, count = grid.cell(int(nd), grid.z0 + kk * grid.dz)
                band_pop += count > 0
    return IdentificationReport(sup_abs, sup_rel, l2_abs, int(mask.sum()), band_cells, band_pop)


def coverage_check(samples, node: int, z0: float, radii, dz: float, mesh: Mesh) -> bool:
    """Whether every (node, z-bin) cell meeting the rectangle around ``(node, z0)`` holds a sample.

    The rectangle spans inaccessible nodes within arclength ``radii[0]`` and
    potentials within ``radii[1]``; bins have width ``dz`` and are centered at
    ``z0 + k dz``.
    """
    rho_x, rho_z = radii
    part = mesh.partition(INACCESSIBLE)
    loc = part.local_index(mesh.n_nodes)
    if loc[node] < 0:
        raise InputError("node is not on the inaccessible boundary")
    s0 = part.arclength[loc[node]]
    tol = 1e-12 * max(1.0, part.length)
    near = part.nodes[np.abs(part.arclength - s0) <= rho_x + tol]
    k_hi = int(math.floor(rho_z / dz + 0.5 - 1e-12)) if rho_z > 0 else 0
    needed = {(int(nd), k) for nd in near for k in range(-k_hi, k_hi + 1)}
    for s in samples:
        if not needed:
            break
        key = (s.node, int(bin_index(s.z, z0, dz)))
        needed.discard(key)
    return not needed
