"""Runge approximation on the inaccessible boundary and amplitude sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ApproximationError, NonContractionError, NumericalError, SweepError
from .fem import assemble_boundary_mass
from .linear import RobinOperator
from .mesh import ACCESSIBLE, INACCESSIBLE, BoundaryField
from .nonlinear import FixedPointReport, Linearization
from .numerics import LsqProblem, tikhonov_solve


def default_alpha_schedule(hi: float = 1e0, lo: float = 1e-10, ratio: float = 0.1) -> np.ndarray:
    """Geometric decreasing schedule ``hi, hi*ratio, ..., lo``."""
    count = int(round(math.log(lo / hi) / math.log(ratio))) + 1
    return np.geomspace(hi, lo, count)


@dataclass
class RungeCertificate:
    """Result of a trace approximation.

    ``g`` holds nodal Neumann values on the accessible nodes and
    ``kernel_coeffs`` the coefficients of kernel fields added to the
    restricted solution.  ``curve`` lists ``(alpha, sup error, L2 misfit,
    coefficient norm)`` for every weight tried.
    """

    target: np.ndarray
    target_label: str
    theta_requested: float
    theta_achieved: float
    alpha: float
    g: np.ndarray
    kernel_coeffs: np.ndarray
    data_norm: float
    v: np.ndarray
    curve: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "target": self.target_label,
            "theta_requested": self.theta_requested,
            "theta_achieved": self.theta_achieved,
            "alpha": self.alpha,
            "data_norm": self.data_norm,
            "kernel_coeffs": self.kernel_coeffs.tolist(),
            "curve": [list(map(float, row)) for row in self.curve],
        }


def _target_values(op: RobinOperator, target) -> tuple[np.ndarray, str]:
    mesh = op.mesh
    if isinstance(target, BoundaryField):
        field_ = target
        label = "field"
    else:
        field_ = mesh.boundary_field(INACCESSIBLE, target)
        label = f"constant {float(target):.17g}" if np.isscalar(target) else "function"
    if field_.tag is not INACCESSIBLE:
        raise ValueError("target must live on the inaccessible boundary")
    return field_.values, label


def synthesize(op: RobinOperator, g: np.ndarray, kernel_coeffs: np.ndarray) -> np.ndarray:
    """Restricted solution for nodal Neumann values ``g`` plus kernel fields."""
    n = op.mesh.n_nodes
    gn = np.zeros(n)
    gn[op.mesh.partition(ACCESSIBLE).nodes] = g
    v, _ = op.solve_load(op.M_A @ gn)
    if op.kernel.dim:
        v = v + op.kernel.fields @ kernel_coeffs
    return v


def trace_map(op: RobinOperator, include_kernel: bool = True) -> np.ndarray:
    """Matrix from (accessible Neumann nodal values, kernel coefficients) to inaccessible traces."""
    mesh = op.mesh
    acc = mesh.partition(ACCESSIBLE).nodes
    inacc = mesh.partition(INACCESSIBLE).nodes
    E = np.zeros((mesh.n_nodes, acc.size))
    E[acc, np.arange(acc.size)] = 1.0
    loads = op.M_A @ E
    cols = [op.solve_load(loads[:, j])[0][inacc] for j in range(acc.size)]
    T = np.column_stack(cols)
    if include_kernel and op.kernel.dim:
        T = np.hstack([T, op.kernel.fields[inacc]])
    return T


def approximate_trace(op: RobinOperator, target=1.0, theta: float = 0.1, alpha_schedule=None,
                      include_kernel: bool = True, stop_early: bool = True) -> RungeCertificate:
    """Tikhonov search for accessible data whose solution trace is within ``theta`` of ``target``.

    Weights are tried in decreasing order; the first one with sup error below
    ``theta`` is accepted.  Raises :class:`ApproximationError` carrying the best
    certificate when none succeeds.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    alphas = default_alpha_schedule() if alpha_schedule is None else np.asarray(alpha_schedule, dtype=float)
    if np.any(np.diff(alphas) >= 0) or np.any(alphas <= 0):
        raise ValueError("alpha schedule must be positive and strictly decreasing")
    mesh = op.mesh
    inacc = mesh.partition(INACCESSIBLE).nodes
    acc = mesh.partition(ACCESSIBLE).nodes
    tvals, label = _target_values(op, target)

    T = trace_map(op, include_kernel)
    M_I = assemble_boundary_mass(mesh, INACCESSIBLE, 1.0)[inacc][:, inacc].toarray()
    L = np.linalg.cholesky(M_I)
    K = L.T @ T
    y = L.T @ tvals
    M_AA = op.M_A[acc][:, acc]
    n_acc = acc.size

    curve, best = [], None
    for alpha in alphas:
        x = tikhonov_solve(LsqProblem(K, y, float(alpha)))
        g, kc = x[:n_acc], x[n_acc:]
        if kc.size == 0:
            kc = np.zeros(op.kernel.dim)
        v = synthesize(op, g, kc)
        err = float(np.max(np.abs(v[inacc] - tvals)))
        curve.append((float(alpha), err, float(np.linalg.norm(K @ x - y)), float(np.linalg.norm(x))))
        cert = RungeCertificate(tvals, label, theta, err, float(alpha), g, kc,
                                float(np.sqrt(g @ (M_AA @ g))), v, curve)
        if best is None or err < best.theta_achieved:
            best = cert
        if err < theta and stop_early:
            return cert
    if best.theta_achieved < theta:
        best.curve = curve
        return best
    raise ApproximationError(f"no weight reached sup error {theta}; best {best.theta_achieved:.3e}", best)


def recompute_error(op: RobinOperator, cert: RungeCertificate) -> float:
    v = synthesize(op, cert.g, cert.kernel_coeffs)
    inacc = op.mesh.partition(INACCESSIBLE).nodes
    return float(np.max(np.abs(v[inacc] - cert.target)))


@dataclass
class SweepResult:
    """Solutions ``u_t = S(t v)`` over an amplitude grid.

    ``traces[i]`` is ``u_t`` on the inaccessible nodes for ``t = t_grid[i]``;
    ``ok[i]`` marks successful fixed points and ``reports[i]`` holds the
    fixed-point report (or the failing one).
    """

    t_grid: np.ndarray
    traces: np.ndarray
    w_trace: np.ndarray
    lam: float
    beta: float
    ok: np.ndarray
    reports: list
    fields: list
    loads: list

    @property
    def t_used(self) -> np.ndarray:
        return self.t_grid[self.ok]

    @property
    def t_max(self) -> float:
        t = self.t_used
        return float(min(t.max(), -t.min())) if t.size else 0.0

    def eta(self) -> np.ndarray:
        return self.traces[self.ok] - self.w_trace[None, :]

    def to_dict(self) -> dict:
        return {
            "t_grid": self.t_grid.tolist(),
            "ok": self.ok.tolist(),
            "lambda": self.lam,
            "beta": self.beta,
            "t_max": self.t_max,
            "beta_t_max": self.beta * self.t_max,
            "iterations": [rep.iterations if rep is not None else None for rep in self.reports],
            "max_ratio": [max(rep.ratios) if rep is not None and rep.ratios else 0.0 for rep in self.reports],
        }


def estimate_lambda(t: np.ndarray, eta: np.ndarray) -> float:
    """Largest ``lam`` with ``[-lam, lam]`` inside the range of every node's interpolant.

    ``eta`` has one row per amplitude (sorted ``t``).  The piecewise-linear
    interpolant in ``t`` is continuous, so its range is ``[min, max]`` of the
    samples.
    """
    if eta.size == 0:
        return 0.0
    per_node = np.minimum(eta.max(axis=0), -eta.min(axis=0))
    return float(max(0.0, per_node.min()))


def attain(t: np.ndarray, eta_node: np.ndarray, eps: float) -> float | None:
    """Amplitude at which the piecewise-linear interpolant of ``eta_node`` equals ``eps``."""
    d = eta_node - eps
    if d[0] == 0:
        return float(t[0])
    for i in range(len(t) - 1):
        if d[i + 1] == 0:
            return float(t[i + 1])
        if d[i] * d[i + 1] < 0:
            s = d[i] / (d[i] - d[i + 1])
            return float(t[i] + s * (t[i + 1] - t[i]))
    return None


def amplitude_sweep(lin: Linearization, v_theta, beta: float = 0.5, t_grid=None,
                    delta: float | None = None, fp_tol: float = 1e-12) -> SweepResult:
    """Evaluate ``S(t v_theta)`` on a symmetric amplitude grid.

    Amplitudes whose fixed point fails are recorded and excluded; only the
    contiguous block of successes around ``t = 0`` enters the estimate of
    ``lam``.
    """
    v = v_theta.v if isinstance(v_theta, RungeCertificate) else np.asarray(v_theta, dtype=float)
    t = np.sort(np.asarray([0.0] if t_grid is None else t_grid, dtype=float))
    if not np.allclose(t, -t[::-1], rtol=0, atol=1e-14 * max(1.0, np.abs(t).max())):
        raise ValueError("t_grid must be symmetric about 0")
    inacc = lin.mesh.partition(INACCESSIBLE).nodes
    delta = math.inf if delta is None else delta
    n = t.size
    traces = np.full((n, inacc.size), np.nan)
    ok = np.zeros(n, dtype=bool)
    reports, fields, loads = [None] * n, [None] * n, [None] * n
    for i in np.argsort(np.abs(t), kind="stable"):
        try:
            u, f_total, rep = lin.solution_map_S(t[i] * v, delta=delta, fp_tol=fp_tol)
        except (NonContractionError, NumericalError) as exc:
            reports[i] = exc.report if isinstance(exc.report, FixedPointReport) else None
            continue
        ok[i] = True
        traces[i] = u[inacc]
        reports[i], fields[i], loads[i] = rep, u, f_total
    i0 = int(np.argmin(np.abs(t)))
    if not ok[i0]:
        raise SweepError("fixed point failed at the smallest amplitude; shrink v_theta", reports[i0])
    lo = i0
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    hi = i0
    while hi < n - 1 and ok[hi + 1]:
        hi += 1
    block = np.zeros(n, dtype=bool)
    block[lo:hi + 1] = True
    ok &= block
    eta = traces[ok] - lin.w[inacc][None, :]
    lam = estimate_lambda(t[ok], eta)
    return SweepResult(t, traces, lin.w[inacc].copy(), lam, float(beta), ok, reports, fields, loads)


def max_stable_amplitude(lin: Linearization, v, t_start: float = 1.0, shrink: float = 0.5,
                         ratio_cap: float = 0.5, tries: int = 30) -> float:
    """Largest ``t = t_start * shrink^k`` whose fixed point contracts with ratios below ``ratio_cap``."""
    t = t_start
    for _ in range(tries):
        try:
            _, rep = lin.fixed_point_Q(t * np.asarray(v), delta=math.inf)
            if not rep.ratios or max(rep.ratios) <= ratio_cap:
                return t
        except NonContractionError:
            pass
        t *= shrink
    raise SweepError("no stable amplitude found")
