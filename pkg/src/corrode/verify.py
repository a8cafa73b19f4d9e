"""Property suite run by ``corrode verify``.

Each check returns ``(passed, detail)``; exceptions count as failures.  Checks
are grouped by the prefix of their name (``kernel``, ``projection``,
``fixed_point``, ``round_trip``, ``runge``, ``coverage``, ``flux``).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .fem import assemble_neumann_load, assemble_stiffness
from .linear import RobinOperator, kernel_making_coefficient, project_trace
from .mesh import ACCESSIBLE, INACCESSIBLE, build_unit_square_mesh
from .nonlinear import NonlinearRobin, catalog
from .runge import amplitude_sweep, approximate_trace, attain, recompute_error

SLOPE_WINDOW = (1.9, 2.1)
RATIO_CAP = 0.9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


class _Context:
    """Shared, lazily built objects for one configuration."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.mesh = build_unit_square_mesh(cfg.domain.n, cfg.domain.partition)
        self.svtol = cfg.solver.svtol
        self.kmax = cfg.solver.kmax
        self._cache = {}

    def op(self, q):
        key = ("op", q)
        if key not in self._cache:
            self._cache[key] = RobinOperator(self.mesh, None, q, self.svtol, self.kmax)
        return self._cache[key]

    def accessible_load(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        F = np.zeros(self.mesh.n_nodes)
        nodes = self.mesh.partition(ACCESSIBLE).nodes
        F[nodes] = rng.standard_normal(nodes.size) / nodes.size
        return F

    def linearization(self, law: str):
        """Linearization for one of the suite laws; the cubic uses a nonzero Newton baseline."""
        key = ("lin", law)
        if key not in self._cache:
            a = {"square": catalog("power", k=2), "cubic": catalog("cubic"),
                 "exp": catalog("exp_minus_one")}[law]
            problem = NonlinearRobin(self.mesh, a, None, self.svtol, self.kmax)
            w = None
            if law == "cubic":
                F0 = assemble_neumann_load(self.mesh, ACCESSIBLE, lambda x, y: 0.5 * (y < 1e-12))
                w, _ = problem.newton_solve(F0)
            self._cache[key] = problem.linearize(w)
        return self._cache[key]

    def direction(self, lin):
        """Unit-H1 linearized solution driven by smooth accessible data."""
        g = assemble_neumann_load(self.mesh, ACCESSIBLE,
                                  lambda x, y: np.cos(np.pi * x) * (y < 1e-12) + 0.3 * (x < 1e-12))
        v, _ = lin.solve_linearized(g - lin.op.phi_load(g))
        return v / lin.h1(v)


def check_kernel_constants(ctx):
    op = ctx.op(0.0)
    length = ctx.mesh.partition(ACCESSIBLE).length
    if op.kernel.dim != 1:
        return False, f"dimension {op.kernel.dim}"
    err = float(np.max(np.abs(np.abs(op.kernel.traces[:, 0]) - length ** -0.5)))
    return err <= 1e-8, f"trace error {err:.2e}"


def check_kernel_positive(ctx):
    dim = ctx.op(1.0).kernel.dim
    return dim == 0, f"dimension {dim}"


def check_kernel_steklov(ctx):
    q = kernel_making_coefficient(ctx.mesh)
    op = RobinOperator(ctx.mesh, None, q, ctx.svtol, ctx.kmax)
    res = float(np.max(op.kernel.residuals)) if op.kernel.dim else float("nan")
    return op.kernel.dim == 1, f"q={q:.6f} dimension {op.kernel.dim} residual {res:.2e}"


def check_projection_idempotent(ctx):
    op = ctx.op(0.0)
    v = np.sin(3 * ctx.mesh.nodes[:, 0]) + ctx.mesh.nodes[:, 1] ** 2
    p1 = project_trace(v, op.kernel).values
    p2 = project_trace(p1_nodal(ctx, p1), op.kernel).values
    err = float(np.max(np.abs(p1 - p2)))
    return err <= 1e-12, f"idempotency defect {err:.2e}"


def p1_nodal(ctx, values):
    out = np.zeros(ctx.mesh.n_nodes)
    out[ctx.mesh.partition(ACCESSIBLE).nodes] = values
    return out


def check_projection_phi(ctx):
    op = ctx.op(0.0)
    F = ctx.accessible_load(1)
    F += 0.7 * assemble_neumann_load(ctx.mesh, ACCESSIBLE, 1.0)   # make it incompatible
    u1, rep = op.solve_load(F)
    shift = op.M_A @ op.kernel.fields[:, 0]
    u2, _ = op.solve_load(F + 3.0 * shift)
    diff = float(np.max(np.abs(u1 - u2)))
    return diff <= 1e-10 and rep.constraint_violation <= 1e-10, \
        f"defect {rep.defect_before:.2e} kernel-shift difference {diff:.2e}"


def _slope_check(law):
    def check(ctx):
        lin = ctx.linearization(law)
        v = ctx.direction(lin)
        ts = np.geomspace(1e-3, 1e-1, 5)
        norms, ratio = [], 0.0
        for t in ts:
            r, rep = lin.fixed_point_Q(t * v)
            norms.append(lin.h1(r))
            ratio = max([ratio] + list(rep.ratios))
        slope = float(np.polyfit(np.log(ts), np.log(norms), 1)[0])
        ok = SLOPE_WINDOW[0] <= slope <= SLOPE_WINDOW[1] and ratio <= RATIO_CAP
        return ok, f"slope {slope:.4f} max ratio {ratio:.3f}"
    return check


def _round_trip_check(law):
    def check(ctx):
        lin = ctx.linearization(law)
        v = 0.1 * ctx.direction(lin)
        u, F, rep = lin.solution_map_S(v)
        v_back, _, _ = lin.decompose(u)
        back = lin.h1(v_back - v)
        u_newton, _ = lin.problem.newton_solve(F, u0=lin.w + v)
        newton = float(np.max(np.abs(u_newton - u)))
        ok = rep.residual <= 1e-8 and back <= 1e-8 and newton <= 1e-8
        return ok, f"S residual {rep.residual:.2e} decompose {back:.2e} newton {newton:.2e}"
    return check


def check_runge_certificate(ctx):
    op = ctx.op(1.0)
    cert = approximate_trace(op, 1.0, 0.1, stop_early=False)
    redo = abs(recompute_error(op, cert) - cert.theta_achieved)
    errors = [row[1] for row in cert.curve]
    monotone = all(b <= a * (1 + 1e-9) for a, b in zip(errors, errors[1:]))
    ok = cert.theta_achieved < 0.1 and redo <= 1e-12 and monotone
    return ok, f"theta {cert.theta_achieved:.3e} recompute {redo:.1e} monotone {monotone}"


def check_sweep_coverage(ctx):
    lin = ctx.linearization("cubic")
    cert = approximate_trace(lin.op, 1.0, 0.05)
    sweep = amplitude_sweep(lin, cert, 0.5, np.linspace(-0.2, 0.2, 11))
    t, eta = sweep.t_used, sweep.eta()
    misses = 0
    for eps in np.linspace(-sweep.lam, sweep.lam, 9):
        for j in range(eta.shape[1]):
            misses += attain(t, eta[:, j], eps) is None
    return misses == 0 and sweep.lam > 0, f"lambda {sweep.lam:.4f} misses {misses}"


def check_flux_conservation(ctx):
    op = ctx.op(1.0)
    F = ctx.accessible_load(2)
    u, _ = op.solve_load(F)
    A = assemble_stiffness(ctx.mesh)
    r = A @ u
    total = float(r[ctx.mesh.boundary_nodes].sum())
    return abs(total) <= 1e-12, f"total boundary weight {total:.2e}"


CHECKS = {
    "kernel.constants": check_kernel_constants,
    "kernel.positive_robin": check_kernel_positive,
    "kernel.steklov": check_kernel_steklov,
    "projection.idempotent": check_projection_idempotent,
    "projection.phi_correction": check_projection_phi,
    "fixed_point.slope_square": _slope_check("square"),
    "fixed_point.slope_cubic": _slope_check("cubic"),
    "fixed_point.slope_exp": _slope_check("exp"),
    "round_trip.square": _round_trip_check("square"),
    "round_trip.cubic": _round_trip_check("cubic"),
    "round_trip.exp": _round_trip_check("exp"),
    "runge.certificate": check_runge_certificate,
    "coverage.sweep": check_sweep_coverage,
    "flux.conservation": check_flux_conservation,
}


def select(filter_name: str | None) -> list:
    if not filter_name:
        return list(CHECKS)
    return [n for n in CHECKS if n == filter_name or n.split(".")[0] == filter_name]


def run_checks(cfg: ExperimentConfig, filter_name: str | None = None) -> list:
    ctx = _Context(cfg)
    results = []
    for name in select(filter_name):
        start = time.perf_counter()
        try:
            passed, detail = CHECKS[name](ctx)
        except Exception as exc:          # a crashing property is a failing property
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - start))
    return results


def summary_table(results) -> str:
    width = max([len(r.name) for r in results] + [8])
    lines = [f"{'property'.ljust(width)}  status  detail"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}    {r.detail}")
    return "\n".join(lines)
