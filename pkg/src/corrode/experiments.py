"""Orchestration of forward, kernel, Runge, sweep and reconstruction runs.

Each ``run_*`` function returns a result object with a JSON-ready ``report``
dict; :mod:`corrode.cli` writes the artifacts.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .errors import CompletionError
from .fem import assemble_neumann_load, conormal_flux
from .inverse import (CompletionOperator, Design, LabRun, ReconstructionGrid, coverage_check,
                      generate_cauchy_data, harvest_samples, reconstruct_nonlinearity,
                      transfer_pair, verify_identification)
from .mesh import ACCESSIBLE, INACCESSIBLE, Mesh
from .nonlinear import NonlinearRobin
from .runge import amplitude_sweep, approximate_trace, max_stable_amplitude, recompute_error


def _gamma(cfg: ExperimentConfig):
    c = cfg.conductivity
    if c.g11 == c.g22 and c.g12 == 0.0:
        return None if c.g11 == 1.0 else c.g11
    return np.array(c.matrix())


def _normal(cfg: ExperimentConfig, x, y):
    if cfg.domain.shape == "disk":
        return x, y
    eps = 1e-12
    nx = np.where(x < eps, -1.0, np.where(x > 1 - eps, 1.0, 0.0))
    ny = np.where(y < eps, -1.0, np.where(y > 1 - eps, 1.0, 0.0))
    return nx, ny


def accessible_data(cfg: ExperimentConfig, mesh: Mesh) -> np.ndarray:
    """Accessible Neumann load selected by the ``[forward]`` section."""
    kind = cfg.forward.data
    if kind == "zero":
        return np.zeros(mesh.n_nodes)
    if kind == "constant":
        return assemble_neumann_load(mesh, ACCESSIBLE, cfg.forward.flux)
    c = cfg.conductivity

    def flux(x, y):
        nx, ny = _normal(cfg, x, y)
        return c.g12 * nx + c.g22 * ny
    return assemble_neumann_load(mesh, ACCESSIBLE, flux)


def make_problem(cfg: ExperimentConfig, law=None) -> NonlinearRobin:
    mesh = cfg.domain.build()
    a = cfg.nonlinearity.build() if law is None else law
    return NonlinearRobin(mesh, a, _gamma(cfg), cfg.solver.svtol, cfg.solver.kmax)


def design_of(cfg: ExperimentConfig) -> Design:
    s = cfg.sweep
    return Design(theta=cfg.runge.theta, alpha_schedule=tuple(cfg.runge.schedule()),
                  t_max=None if s.t_max <= 0 else s.t_max, n_t=s.n_t, beta=s.beta,
                  baseline_flux=s.baseline_flux)


def baseline(problem: NonlinearRobin, cfg: ExperimentConfig):
    F0 = assemble_neumann_load(problem.mesh, ACCESSIBLE, cfg.sweep.baseline_flux)
    return problem.newton_solve(F0, tol=cfg.solver.tol)


@dataclass
class ForwardResult:
    mesh: Mesh
    u: np.ndarray
    flux_accessible: object
    flux_inaccessible: object
    report: dict


def run_forward(cfg: ExperimentConfig) -> ForwardResult:
    problem = make_problem(cfg)
    mesh = problem.mesh
    F = accessible_data(cfg, mesh)
    u, rep = problem.newton_solve(F, tol=cfg.solver.tol)
    load = -problem.boundary_term(u)
    report = {
        "config": cfg.to_dict(),
        "nonlinearity": problem.a.label,
        "newton": {"iterations": rep.iterations, "residuals": rep.residuals,
                   "halvings": rep.halvings, "kernel_events": rep.kernel_events},
        "residual": float(np.linalg.norm(problem.residual(u, F))),
        "h1_norm": problem.h1(u),
        "linf_norm": float(np.max(np.abs(u))),
    }
    if cfg.forward.data == "harmonic_y":
        report["oracle"] = {"solution": "y", "linf_error": float(np.max(np.abs(u - mesh.nodes[:, 1])))}
    # each side's functional: the Robin term counts as load on the accessible side, the data on the other
    return ForwardResult(mesh, u, conormal_flux(mesh, u, problem.A, load, ACCESSIBLE),
                         conormal_flux(mesh, u, problem.A, F, INACCESSIBLE), report)


def run_kernel(cfg: ExperimentConfig) -> dict:
    """Kernel of the Robin operator linearized at the baseline solution."""
    problem = make_problem(cfg)
    w, _ = baseline(problem, cfg)
    op = problem.linear_operator(w)
    basis = op.kernel
    return {
        "config": cfg.to_dict(),
        "dimension": basis.dim,
        "svtol": cfg.solver.svtol,
        "operator_norm": basis.operator_norm,
        "residuals": basis.residuals.tolist(),
        "trace_gram": basis.trace_gram().tolist(),
        "traces": basis.traces.tolist(),
    }


def run_runge(cfg: ExperimentConfig):
    problem = make_problem(cfg)
    w, _ = baseline(problem, cfg)
    lin = problem.linearize(w)
    cert = approximate_trace(lin.op, 1.0, cfg.runge.theta, cfg.runge.schedule())
    report = {"config": cfg.to_dict(), "certificate": cert.to_dict(),
              "recomputed_error": recompute_error(lin.op, cert)}
    return cert, report


def run_sweep(cfg: ExperimentConfig):
    problem = make_problem(cfg)
    w, _ = baseline(problem, cfg)
    lin = problem.linearize(w)
    cert = approximate_trace(lin.op, 1.0, cfg.runge.theta, cfg.runge.schedule())
    design = design_of(cfg)
    t_max = design.t_max if design.t_max is not None else max_stable_amplitude(lin, cert.v)
    sweep = amplitude_sweep(lin, cert, design.beta, design.t_grid(t_max))
    report = {"config": cfg.to_dict(), "certificate": cert.to_dict(), "sweep": sweep.to_dict()}
    return problem.mesh, sweep, report


@dataclass
class ReconstructionRun:
    lab: LabRun
    lab_mesh: Mesh
    mesh: Mesh
    samples: list
    grid: ReconstructionGrid
    completions: list
    report: dict


def _w_on(lab_mesh: Mesh, mesh: Mesh, w: np.ndarray) -> np.ndarray:
    src, dst = lab_mesh.partition(INACCESSIBLE), mesh.partition(INACCESSIBLE)
    return np.interp(dst.arclength, src.arclength, w[src.nodes])


def complete_all(co: CompletionOperator, pairs, schedule, noise_estimate: float, threads: int = 1):
    """Complete every pair; failed discrepancy tests fall back to the flagged largest-weight fit.

    Returns ``(u_I, flux_I, report, failed)`` per pair, in pair order.
    """
    def one(pair):
        try:
            return co.complete(pair, schedule, noise_estimate) + (False,)
        except CompletionError as exc:
            return exc.fallback + (True,)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


def openness_checks(samples, mesh: Mesh, w_I: np.ndarray, lam: float, dz: float) -> dict:
    """Coverage check at every sample whose potential lies within ``lam/2`` of the baseline."""
    part = mesh.partition(INACCESSIBLE)
    loc = part.local_index(mesh.n_nodes)
    spacing = part.length / max(part.edges.shape[0], 1)
    radii = (3.0 * spacing, lam / 2)
    total = passed = 0
    failures = []
    for s in samples:
        if abs(s.z - w_I[loc[s.node]]) > lam / 2:
            continue
        total += 1
        if coverage_check(samples, s.node, s.z, radii, dz, mesh):
            passed += 1
        else:
            failures.append([s.id, s.node])
    return {"radii": list(radii), "dz": dz, "checked": total, "passed": passed, "failures": failures}


def run_reconstruct(cfg: ExperimentConfig, threads: int = 1, law=None) -> ReconstructionRun:
    """Lab run with the configured law, then completion, harvesting and binning.

    The harness-only verification against the true law fills
    ``reconstruction_error`` and ``coverage``.
    """
    problem = make_problem(cfg, law)
    lab_mesh, a_true, gamma = problem.mesh, problem.a, problem.gamma
    lab = generate_cauchy_data(lab_mesh, a_true, design_of(cfg), cfg.inverse.noise, cfg.run.seed,
                               gamma, cfg.solver.svtol, cfg.solver.kmax)

    # reconstructor side: only the pairs cross this line
    if cfg.inverse.coarse_n:
        mesh = dataclasses.replace(cfg.domain, n=cfg.inverse.coarse_n).build()
        pairs = [transfer_pair(p, lab_mesh, mesh) for p in lab.pairs]
    else:
        mesh, pairs = lab_mesh, lab.pairs
    co = CompletionOperator(mesh, _gamma(cfg))
    completions = complete_all(co, pairs, cfg.inverse.schedule(), cfg.inverse.estimate, threads)
    samples = []
    for pair, (u_I, flux_I, rep, failed) in zip(pairs, completions):
        samples += harvest_samples(mesh, u_I, flux_I, pair.id, rep.relative_misfit)
    lam = lab.sweep.lam if lab.sweep is not None else 0.0
    dz = cfg.inverse.dz_fraction * (lam if lam > 0 else 1.0)
    grid = reconstruct_nonlinearity(samples, dz)

    # harness side
    w_I = _w_on(lab_mesh, mesh, lab.w)
    ident = verify_identification(grid, a_true, mesh, w_I, lam)
    completion = {
        "pairs": [{"id": p.id, "failed": failed, **rep.to_dict()}
                  for p, (_, _, rep, failed) in zip(pairs, completions)],
        "failed": int(sum(c[3] for c in completions)),
        "flagged": int(sum(c[2].flagged for c in completions)),
    }
    if mesh is lab_mesh:
        completion["self_consistency"] = {
            "trace_sup": max(float(np.max(np.abs(c[0].values - tu))) for c, tu in zip(completions, lab.true_u)),
            "flux_sup": max(float(np.max(np.abs(c[1].values - tf))) for c, tf in zip(completions, lab.true_flux)),
        }
    report = {
        "config": cfg.to_dict(),
        "certificates": [lab.certificate.to_dict()] if lab.certificate is not None else [],
        "sweep": {**(lab.sweep.to_dict() if lab.sweep is not None else {"lambda": 0.0}),
                  "conservation": lab.conservation},
        "completion": completion,
        "reconstruction_error": {**ident.to_dict(), "lambda": lam, "dz": dz,
                                 "max_abs_value": float(np.nanmax(np.abs(grid.values))) if grid.mask.any() else 0.0},
        "coverage": {"band": ident.coverage,
                     "openness": openness_checks(samples, mesh, w_I, lam, dz) if lam > 0 else None},
    }
    return ReconstructionRun(lab, lab_mesh, mesh, samples, grid, completions, report)


def indistinguishability(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Run the pipeline for the law and its alternative; compare data and band reconstructions."""
    alt = cfg.nonlinearity.build_alternative()
    if alt is None:
        return {}
    first = run_reconstruct(cfg, threads)
    second = run_reconstruct(cfg, threads, law=alt)
    trace_diff = max(float(np.max(np.abs(p.trace.values - q.trace.values)))
                     for p, q in zip(first.lab.pairs, second.lab.pairs))
    flux_diff = max(float(np.max(np.abs(p.flux.weights - q.flux.weights)))
                    for p, q in zip(first.lab.pairs, second.lab.pairs))
    g1, g2 = first.grid, second.grid
    same_cells = (np.array_equal(g1.mask, g2.mask) and np.array_equal(g1.k, g2.k)
                  and np.array_equal(g1.nodes, g2.nodes))
    value_diff = float(np.max(np.abs(g1.values[g1.mask] - g2.values[g2.mask]))) if same_cells else math.inf
    return {"pairs": len(first.lab.pairs), "trace_diff": trace_diff, "flux_diff": flux_diff,
            "same_cells": same_cells, "band_value_diff": value_diff,
            "law": cfg.nonlinearity.law, "alternative": cfg.nonlinearity.alternative}

