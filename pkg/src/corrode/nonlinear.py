"""Nonlinear Robin layer: corrosion laws, Taylor remainder, fixed point and Newton.

All boundary integrals involving the corrosion law are evaluated at the same
3-point Gauss nodes on each inaccessible edge.  Because of this, the identity
``a(w + h) = a(w) + a'(w) h + R(h)`` holds exactly at every quadrature point,
and the assembled nonlinear form splits exactly into baseline, linearized and
remainder parts.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (ConfigurationError, DecompositionError, DivergenceError, InputError,
                     NonContractionError, NumericalError)
from .fem import _gamma, assemble_stiffness, conormal_flux, edge_quadrature, norm_kit
from .linear import RobinOperator, lift_trace, project_onto_kernel
from .mesh import ACCESSIBLE, INACCESSIBLE, BoundaryField, Mesh

# 5-point Gauss-Legendre on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
GL5_NODES = 0.5 * (_GL_X + 1.0)
GL5_WEIGHTS = 0.5 * _GL_W


def _coef(q, x):
    """Evaluate a coefficient that is either a number or a function of points ``x[..., 2]``."""
    if callable(q):
        return np.asarray(q(x[..., 0], x[..., 1]), dtype=float)
    return float(q)


@dataclass(frozen=True)
class Nonlinearity:
    """Corrosion law ``a(x, z)`` with its z-derivative.

    ``x`` arguments are point arrays of shape ``(..., 2)`` broadcastable
    against ``z``.
    """

    name: str
    params: dict
    a: Callable
    da: Callable
    lip: Callable
    rem: Callable | None = None

    def eval(self, x, z):
        return self.a(np.asarray(x, dtype=float), np.asarray(z, dtype=float))

    __call__ = eval

    def deriv(self, x, z):
        return self.da(np.asarray(x, dtype=float), np.asarray(z, dtype=float))

    def lipschitz_bound(self, z_lo: float, z_hi: float) -> float:
        """Lipschitz constant of ``deriv`` in ``z`` on ``[z_lo, z_hi]``."""
        if z_hi < z_lo:
            z_lo, z_hi = z_hi, z_lo
        return float(self.lip(z_lo, z_hi))

    def remainder(self, x, w, h):
        """``int_0^1 [a'(w + t h) - a'(w)] h dt`` pointwise."""
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        h = np.asarray(h, dtype=float)
        if self.rem is not None:
            return self.rem(x, w, h)
        d0 = self.da(x, w)
        acc = np.zeros(np.broadcast(w, h).shape)
        for t, wt in zip(GL5_NODES, GL5_WEIGHTS):
            acc = acc + wt * (self.da(x, w + t * h) - d0)
        return acc * h

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"


def _sampled_lipschitz(da, z_lo, z_hi, qmax=1.0):
    z = np.linspace(z_lo, z_hi, 2001)
    x = np.zeros(z.shape + (2,))
    d = da(x, z)
    slopes = np.abs(np.diff(d)) / np.diff(z) if z_hi > z_lo else np.zeros(1)
    return 1.1 * float(np.max(slopes)) * qmax


def power(q=1.0, k: int = 2, q_sup: float | None = None) -> Nonlinearity:
    k = int(k)
    if k < 1:
        raise ConfigurationError("power exponent must be a positive integer", key="k")
    qs = abs(q) if not callable(q) else q_sup
    if qs is None:
        raise ConfigurationError("x-dependent q needs q_sup", key="q_sup")

    def a(x, z):
        return _coef(q, x) * z ** k

    def da(x, z):
        return _coef(q, x) * k * z ** (k - 1)

    def lip(lo, hi):
        if k == 1:
            return 0.0
        m = max(abs(lo), abs(hi))
        return qs * k * (k - 1) * m ** (k - 2)

    def rem(x, w, h):
        acc = np.zeros(np.broadcast(w, h).shape)
        for j in range(2, k + 1):
            acc = acc + math.comb(k, j) * w ** (k - j) * h ** j
        return _coef(q, x) * acc

    params = {"q": q if not callable(q) else "callable", "k": k}
    return Nonlinearity("power", params, a, da, lip, rem)


def cubic(q=1.0, q_sup=None) -> Nonlinearity:
    base = power(q, 3, q_sup)
    return Nonlinearity("cubic", {"q": base.params["q"]}, base.a, base.da, base.lip, base.rem)


def linear(q=1.0, q_sup=None) -> Nonlinearity:
    base = power(q, 1, q_sup)
    return Nonlinearity("linear", {"q": base.params["q"]}, base.a, base.da, base.lip,
                        lambda x, w, h: np.zeros(np.broadcast(w, h).shape))


def zero() -> Nonlinearity:
    def a(x, z):
        return np.zeros(np.shape(z))
    return Nonlinearity("zero", {}, a, a, lambda lo, hi: 0.0,
                        lambda x, w, h: np.zeros(np.broadcast(w, h).shape))


def exp_minus_one(q=1.0, q_sup=None) -> Nonlinearity:
    qs = abs(q) if not callable(q) else q_sup
    if qs is None:
        raise ConfigurationError("x-dependent q needs q_sup", key="q_sup")

    def a(x, z):
        return _coef(q, x) * np.expm1(z)

    def da(x, z):
        return _coef(q, x) * np.exp(z)

    def rem(x, w, h):
        return _coef(q, x) * np.exp(w) * (np.expm1(h) - h)

    return Nonlinearity("exp_minus_one", {"q": q if not callable(q) else "callable"},
                        a, da, lambda lo, hi: qs * math.exp(hi), rem)


def cubic_bump(q=1.0, lo: float = 1.0, hi: float = 2.0, amp: float = 1.0) -> Nonlinearity:
    """``q z^3 + z^5 b(z)`` with ``b(z) = amp ((z - lo)(hi - z))^2`` on ``(lo, hi)``, zero elsewhere.

    Agrees with :func:`cubic` exactly outside ``(lo, hi)``; the bump is C^1,1.
    """
    if not lo < hi:
        raise ConfigurationError("bump support needs lo < hi", key="lo")
    base = cubic(q)

    def bump(z):
        inside = (z > lo) & (z < hi)
        s = np.where(inside, (z - lo) * (hi - z), 0.0)
        ds = np.where(inside, hi + lo - 2.0 * z, 0.0)
        return amp * s * s, 2.0 * amp * s * ds

    def a(x, z):
        b, _ = bump(z)
        return base.a(x, z) + z ** 5 * b

    def dbump(z):
        b, db = bump(z)
        return 5.0 * z ** 4 * b + z ** 5 * db

    def da(x, z):
        return base.da(x, z) + dbump(z)

    def rem(x, w, h):
        # the bump part vanishes identically off its support, keeping the cubic's values bit for bit
        d0 = dbump(w)
        acc = np.zeros(np.broadcast(w, h).shape)
        for t, wt in zip(GL5_NODES, GL5_WEIGHTS):
            acc = acc + wt * (dbump(w + t * h) - d0)
        return base.rem(x, w, h) + acc * h

    return Nonlinearity("cubic_bump", {"q": q, "lo": lo, "hi": hi, "amp": amp}, a, da,
                        lambda zl, zh: _sampled_lipschitz(da, zl, zh), rem)


_CATALOG = {
    "power": power,
    "cubic": cubic,
    "exp_minus_one": exp_minus_one,
    "linear": linear,
    "zero": zero,
    "cubic_bump": cubic_bump,
}


def catalog(name: str, params: dict | None = None, **kwargs) -> Nonlinearity:
    """Look up a corrosion law by name; parameters as a dict or keywords."""
    params = {**(params or {}), **kwargs}
    if name not in _CATALOG:
        raise ConfigurationError(f"unknown nonlinearity {name!r}; known: {sorted(_CATALOG)}", key="name")
    try:
        return _CATALOG[name](**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}", key="params") from exc


def parse_nonlinearity(text: str) -> Nonlinearity:
    """Parse ``name`` or ``name(key=value, ...)`` with numeric values."""
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", text)
    if not m:
        raise ConfigurationError(f"cannot parse nonlinearity {text!r}", key="name")
    params = {}
    for item in filter(None, (s.strip() for s in (m.group(2) or "").split(","))):
        key, _, val = item.partition("=")
        try:
            params[key.strip()] = float(val) if key.strip() != "k" else int(val)
        except ValueError as exc:
            raise ConfigurationError(f"bad value in {item!r}", key=key.strip()) from exc
    return catalog(m.group(1), params)


@dataclass
class FixedPointReport:
    iterations: int
    differences: list
    ratios: list
    residual: float
    delta: float
    v_norm: float
    converged: bool = True


@dataclass
class NewtonReport:
    iterations: int
    residuals: list
    halvings: list
    kernel_events: list = field(default_factory=list)
    converged: bool = True


@dataclass
class DecompositionReport:
    kernel_part_norm: float
    volume_projection_gap: float
    remainder_mismatch: float
    fixed_point: FixedPointReport | None = None


class NonlinearRobin:
    """Discrete nonlinear problem ``A u + N_a(u) = F``.

    ``N_a(u)_i = int_{Gamma_I} a(x, u) phi_i ds`` by 3-point Gauss per edge and
    ``F`` is a load supported on the accessible boundary.
    """

    def __init__(self, mesh: Mesh, a: Nonlinearity, gamma=None, svtol: float = 1e-8, kmax: int = 8):
        self.mesh = mesh
        self.a = a
        self.gamma = _gamma(mesh, gamma)
        self.A = assemble_stiffness(mesh, self.gamma)
        self.quad = edge_quadrature(mesh, INACCESSIBLE)
        self.svtol = svtol
        self.kmax = kmax
        self.norms = norm_kit(mesh)

    def h1(self, u) -> float:
        return self.norms.h1(u)

    def boundary_term(self, u) -> np.ndarray:
        return self.quad.load(self.a.eval(self.quad.points, self.quad.interpolate(u)))

    def residual(self, u, F) -> np.ndarray:
        return self.A @ u + self.boundary_term(u) - np.asarray(F, dtype=float)

    def applied_load(self, u) -> np.ndarray:
        """Accessible load for which ``u`` solves the problem (``A u + N_a(u)``)."""
        return self.A @ u + self.boundary_term(u)

    def accessible_flux(self, u):
        """Conormal flux of ``u`` on the accessible part, Robin term treated as known."""
        return conormal_flux(self.mesh, u, self.A, -self.boundary_term(u), ACCESSIBLE)

    def linear_operator(self, u) -> RobinOperator:
        q = self.a.deriv(self.quad.points, self.quad.interpolate(u))
        return RobinOperator(self.mesh, self.gamma, q, self.svtol, self.kmax)

    def linearize(self, w=None) -> "Linearization":
        return Linearization(self, np.zeros(self.mesh.n_nodes) if w is None else np.asarray(w, dtype=float))

    def newton_solve(self, F, u0=None, tol: float = 1e-12, maxiter: int = 50,
                     max_halvings: int = 10) -> tuple[np.ndarray, NewtonReport]:
        """Damped Newton iteration; the linear steps are restricted solves."""
        u = np.zeros(self.mesh.n_nodes) if u0 is None else np.array(u0, dtype=float)
        if not np.all(np.isfinite(u)):
            raise InputError("initial guess must be finite")
        F = np.asarray(F, dtype=float)
        res = self.residual(u, F)
        norms = [float(np.linalg.norm(res))]
        report = NewtonReport(0, norms, [])
        for it in range(1, maxiter + 1):
            if norms[-1] <= tol:
                return u, report
            op = self.linear_operator(u)
            if op.kernel.dim:
                report.kernel_events.append((it, op.kernel.dim))
            step, _ = op.solve_load(-res, tol=1e-8)
            lam, halvings = 1.0, 0
            trial = u + step
            trial_res = self.residual(trial, F)
            while np.linalg.norm(trial_res) > norms[-1] and halvings < max_halvings:
                lam *= 0.5
                halvings += 1
                trial = u + lam * step
                trial_res = self.residual(trial, F)
            u, res = trial, trial_res
            norms.append(float(np.linalg.norm(res)))
            report.halvings.append(halvings)
            report.iterations = it
            if not np.isfinite(norms[-1]):
                raise DivergenceError("Newton iterate is not finite", report)
            if len(norms) > 5 and all(norms[-j] > norms[-j - 1] for j in range(1, 6)):
                raise DivergenceError("Newton residual grew over five consecutive steps", report)
        if norms[-1] <= tol:
            return u, report
        report.converged = False
        raise DivergenceError(f"Newton did not reach tol {tol:.1e} in {maxiter} iterations", report)


class Linearization:
    """Linearization of a :class:`NonlinearRobin` problem at a baseline solution ``w``."""

    def __init__(self, problem: NonlinearRobin, w: np.ndarray):
        self.problem = problem
        self.mesh = problem.mesh
        self.w = w
        quad = problem.quad
        self.w_q = quad.interpolate(w)
        self.q = problem.a.deriv(quad.points, self.w_q)
        self.op = RobinOperator(self.mesh, problem.gamma, self.q, problem.svtol, problem.kmax)
        self.kernel = self.op.kernel
        self.h_load = problem.applied_load(w)
        self._delta = None

    @property
    def a(self) -> Nonlinearity:
        return self.problem.a

    def h1(self, u) -> float:
        return self.problem.h1(u)

    def remainder_qp(self, h) -> np.ndarray:
        quad = self.problem.quad
        return self.a.remainder(quad.points, self.w_q, quad.interpolate(h))

    def remainder_load(self, h) -> np.ndarray:
        return self.problem.quad.load(self.remainder_qp(h))

    def remainder_nodes(self, h) -> BoundaryField:
        part = self.mesh.partition(INACCESSIBLE)
        x = self.mesh.nodes[part.nodes]
        vals = self.a.remainder(x, np.asarray(self.w)[part.nodes], np.asarray(h, dtype=float)[part.nodes])
        return BoundaryField(INACCESSIBLE, part.nodes, vals)

    def data_load(self, v) -> np.ndarray:
        """Load ``(A + M_q) v``; accessible data of a linearized solution ``v``."""
        return self.op.K @ np.asarray(v, dtype=float)

    def solve_linearized(self, g_load, tol: float = 1e-10):
        """Restricted linearized solution for an accessible load."""
        return self.op.solve_load(g_load, tol)

    def default_delta(self) -> float:
        """Fixed-point ball radius: one tenth of the estimated contraction headroom."""
        if self._delta is None:
            part = self.mesh.partition(INACCESSIBLE).nodes
            wI = self.w[part]
            lip = self.a.lipschitz_bound(float(wI.min()) - 1.0, float(wI.max()) + 1.0)
            if lip == 0.0:
                self._delta = math.inf
            else:
                unit = self.problem.quad.load(np.ones_like(self.w_q))
                r1, _ = self.op.solve_load(-unit)
                gain = self.h1(r1) / max(np.linalg.norm(unit), 1e-300) * np.sqrt(self.mesh.h)
                self._delta = 0.1 / (lip * max(gain, 1e-12))
        return self._delta

    def fixed_point_Q(self, v, delta: float | None = None, tol: float = 1e-12, maxiter: int = 200,
                      window: int = 3, ratio_cap: float = 0.9) -> tuple[np.ndarray, FixedPointReport]:
        """Remainder ``r`` with ``w + v + r`` an exact discrete nonlinear solution.

        Iterates ``r <- G(0, -R(v + r))`` from ``r = 0`` where ``G`` is the
        restricted linearized solve.  Fails with :class:`NonContractionError`
        when the successive-difference ratio exceeds ``ratio_cap`` for
        ``window`` consecutive steps or the iteration cap is hit.
        """
        v = np.asarray(v, dtype=float)
        delta = self.default_delta() if delta is None else delta
        report = FixedPointReport(0, [], [], math.nan, delta, self.h1(v))
        r = np.zeros_like(v)
        streak = 0
        for it in range(1, maxiter + 1):
            r_new, _ = self.op.solve_load(-self.remainder_load(v + r), tol=1e-8)
            diff = self.h1(r_new - r)
            if not np.isfinite(diff):
                report.converged = False
                raise NonContractionError("fixed-point iterate is not finite", report)
            if report.differences and report.differences[-1] > 0:
                ratio = diff / report.differences[-1]
                report.ratios.append(ratio)
                streak = streak + 1 if ratio > ratio_cap else 0
            report.differences.append(diff)
            report.iterations = it
            r = r_new
            if diff <= tol:
                report.residual = self._q_residual(v, r)
                return r, report
            if streak >= window:
                report.converged = False
                raise NonContractionError(
                    f"contraction ratio above {ratio_cap} for {window} steps; ball radius too large", report)
        report.converged = False
        raise NonContractionError(f"fixed point not reached in {maxiter} iterations", report)

    def _q_residual(self, v, r) -> float:
        NR = self.remainder_load(v + r)
        res = self.op.K @ r + NR - self.op.phi_load(NR)
        return float(np.linalg.norm(res))

    def solution_map_S(self, v, delta: float | None = None, tol: float = 1e-8, fp_tol: float = 1e-12):
        """``u = w + v + Q(v)`` and its accessible load ``h + g + Phi(0, R(v + r))``.

        ``v`` must be a linearized solution: its data load ``(A + M_q) v`` is
        supported on the accessible boundary.
        """
        v = np.asarray(v, dtype=float)
        g = self.data_load(v)
        self._check_linearized(g)
        r, report = self.fixed_point_Q(v, delta, tol=fp_tol)
        u = self.w + v + r
        f_total = self.h_load + g + self.op.phi_load(self.remainder_load(v + r))
        res = float(np.linalg.norm(self.problem.residual(u, f_total)))
        report.residual = res
        if not res <= tol:
            raise NumericalError(f"solution map residual {res:.3e} exceeds {tol:.1e}", report)
        return u, f_total, report

    def _check_linearized(self, g) -> None:
        off = np.ones(self.mesh.n_nodes, dtype=bool)
        off[self.mesh.partition(ACCESSIBLE).nodes] = False
        scale = max(np.abs(g).max(), 1.0)
        if np.abs(g[off]).max(initial=0.0) > 1e-9 * scale:
            raise InputError("v is not a linearized solution: its load leaves the accessible boundary")

    def decompose(self, u, tol: float = 1e-8, fp_tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray, DecompositionReport]:
        """Split a nonlinear solution as ``u = w + v + Q(v)``.

        The kernel component of ``v`` is the kernel field whose accessible
        trace is the L2(Gamma_A) projection of ``(u - w)``; the remaining part
        solves the linearized problem with the compatible part of the flux
        difference.  ``r = u - w - v`` is checked against ``Q(v)``.
        """
        u = np.asarray(u, dtype=float)
        d = u - self.w
        psi = lift_trace(d, self.kernel)
        dF = self.problem.applied_load(u) - self.h_load
        part = self.mesh.partition(ACCESSIBLE).nodes
        flux = np.zeros_like(dF)
        flux[part] = dF[part]
        flux -= self.op.phi_load(flux)
        phi, _ = self.op.solve_load(flux)
        v = psi + phi
        r = d - v
        report = DecompositionReport(self.h1(psi), self.h1(psi - project_onto_kernel(d, self.kernel)), math.nan)
        try:
            q, fp = self.fixed_point_Q(v, tol=fp_tol)
        except NonContractionError as exc:
            raise DecompositionError("fixed point failed on the recovered linear part", exc.report) from exc
        report.fixed_point = fp
        report.remainder_mismatch = self.h1(r - q)
        if not report.remainder_mismatch <= tol:
            raise DecompositionError(
                f"remainder mismatch {report.remainder_mismatch:.3e} exceeds {tol:.1e}", report)
        return v, r, report


def remainder_R(problem: NonlinearRobin, w, h) -> BoundaryField:
    """Remainder at the inaccessible nodes for baseline ``w`` and increment ``h``."""
    return problem.linearize(w).remainder_nodes(h)


def fixed_point_Q(problem: NonlinearRobin, v, w=None, delta=None, tol: float = 1e-12):
    return problem.linearize(w).fixed_point_Q(v, delta, tol)


def solution_map_S(problem: NonlinearRobin, v, w=None, delta=None, tol: float = 1e-8):
    u, f_total, _ = problem.linearize(w).solution_map_S(v, delta, tol)
    return u, f_total


def newton_solve(problem: NonlinearRobin, F, u0=None, tol: float = 1e-12):
    return problem.newton_solve(F, u0, tol)


def decompose(problem: NonlinearRobin, u, w=None, tol: float = 1e-8):
    v, r, _ = problem.linearize(w).decompose(u, tol)
    return v, r
