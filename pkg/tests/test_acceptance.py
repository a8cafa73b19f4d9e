"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from corrode.config import preset
from corrode.experiments import indistinguishability, run_reconstruct
from corrode.fem import assemble_neumann_load, assemble_stiffness, assemble_volume_load, conormal_flux
from corrode.linear import RobinOperator, compute_kernel, kernel_making_coefficient
from corrode.mesh import ACCESSIBLE, INACCESSIBLE, build_unit_square_mesh
from corrode.nonlinear import NonlinearRobin, catalog
from corrode.runge import recompute_error
from test_fem import convergence_rates

RESULTS = []
LAWS = {"z^2": catalog("power", k=2), "z^3": catalog("cubic"), "exp(z)-1": catalog("exp_minus_one")}


def verdict(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def unit_direction(lin):
    g = assemble_neumann_load(lin.mesh, ACCESSIBLE,
                              lambda x, y: np.cos(np.pi * x) * (y < 1e-12) + 0.3 * (x < 1e-12))
    v, _ = lin.solve_linearized(g - lin.op.phi_load(g))
    return v / lin.h1(v)


def linearizations(mesh):
    out = {}
    for name, a in LAWS.items():
        problem = NonlinearRobin(mesh, a)
        w = None
        if name == "z^3":
            w, _ = problem.newton_solve(assemble_neumann_load(mesh, ACCESSIBLE, lambda x, y: 0.5 * (y < 1e-12)))
        out[name] = problem.linearize(w)
    return out


def test_criterion_01_fem_convergence():
    start = time.perf_counter()
    l2, h1 = convergence_rates((8, 16, 32))
    elapsed = time.perf_counter() - start
    ok = min(l2) >= 1.9 and min(h1) >= 0.9 and elapsed < 30
    verdict(1, ok, f"L2 rates {np.round(l2, 3).tolist()} H1 rates {np.round(h1, 3).tolist()} in {elapsed:.1f}s")


def test_criterion_02_conormal_functional():
    worst_total, worst_pattern = 0.0, 0.0
    for n in (8, 16, 32):
        mesh = build_unit_square_mesh(n)
        A = assemble_stiffness(mesh)
        b = assemble_volume_load(mesh, lambda x, y: np.exp(x) * np.cos(3 * y))
        F = assemble_neumann_load(mesh, ACCESSIBLE, lambda x, y: x - y)
        u, _ = RobinOperator(mesh, q=1.0).solve_load(b + F)
        acc = conormal_flux(mesh, u, A, b, ACCESSIBLE)
        ina = conormal_flux(mesh, u, A, b, INACCESSIBLE)
        # pairing with the constant test function; junction hat functions belong to both parts, count once
        total = acc.weights.sum() + ina.weights[~np.isin(ina.nodes, acc.nodes)].sum()
        worst_total = max(worst_total, abs(total + b.sum()))

        y = mesh.nodes[:, 1].copy()
        for tag in (ACCESSIBLE, INACCESSIBLE):
            flux = conormal_flux(mesh, y, A, None, tag)
            xy = mesh.nodes[flux.nodes]
            expected = np.where(xy[:, 1] < 1e-12, -1.0, np.where(xy[:, 1] > 1 - 1e-12, 1.0, 0.0))
            # the normal jumps at the square's corners, where no pointwise flux exists
            corner = (np.minimum(xy[:, 0], 1 - xy[:, 0]) < 1e-12) & (np.minimum(xy[:, 1], 1 - xy[:, 1]) < 1e-12)
            err = np.max(np.abs(flux.values - expected)[~corner])
            worst_pattern = max(worst_pattern, err / mesh.h)
    ok = worst_total <= 1e-12 and worst_pattern <= 2.0
    verdict(2, ok, f"flux balance defect {worst_total:.1e}, worst flux error {worst_pattern:.2e} h")


def test_criterion_03_kernel_machinery(mesh16):
    neumann = RobinOperator(mesh16, q=0.0)
    basis = neumann.kernel
    target = 3.0 ** -0.5
    const_err = float(np.max(np.abs(np.abs(basis.traces[:, 0]) - target)))

    rng = np.random.default_rng(0)
    acc = mesh16.partition(ACCESSIBLE).nodes
    ina = mesh16.partition(INACCESSIBLE).nodes
    f, g = np.zeros(mesh16.n_nodes), np.zeros(mesh16.n_nodes)
    f[acc] = rng.standard_normal(acc.size) + 1.0
    g[ina] = rng.standard_normal(ina.size)
    u1, rep = neumann.solve_restricted(f, g)
    shift = neumann.M_A @ basis.fields[:, 0]
    u2, _ = neumann.solve_restricted(f + rng.standard_normal() * shift, g)
    u3, _ = neumann.solve_restricted(f - 4.0 * shift, g)
    shift_diff = max(np.max(np.abs(u1 - u2)), np.max(np.abs(u1 - u3)))
    solvable = rep.defect_before > 1e-3 and rep.residual <= 1e-10

    q = kernel_making_coefficient(mesh16)
    steklov = compute_kernel(mesh16, q=q)
    steklov_ok = q < 0 and steklov.dim == 1 and steklov.residuals[0] <= 1e-8
    ok = basis.dim == 1 and const_err <= 1e-8 and solvable and shift_diff <= 1e-10 and steklov_ok
    verdict(3, ok, f"constant trace error {const_err:.1e}, kernel-shift difference {shift_diff:.1e}, "
                   f"Steklov q={q:.4f} dim {steklov.dim} residual {steklov.residuals[0]:.1e}")


def test_criterion_04_quadratic_remainder(mesh16):
    ts = np.geomspace(1e-3, 1e-1, 7)
    details, ok = [], True
    for name, lin in linearizations(mesh16).items():
        v = unit_direction(lin)
        norms, ratio = [], 0.0
        for t in ts:
            r, rep = lin.fixed_point_Q(t * v)
            norms.append(lin.h1(r))
            ratio = max([ratio] + rep.ratios)
        slope = float(np.polyfit(np.log(ts), np.log(norms), 1)[0])
        ok &= 1.9 <= slope <= 2.1 and ratio <= 0.9
        details.append(f"{name} slope {slope:.3f} ratio {ratio:.3f}")
    verdict(4, ok, "; ".join(details))


def test_criterion_05_solution_map_round_trip(mesh16):
    start = time.perf_counter()
    worst = {"residual": 0.0, "decompose": 0.0, "newton": 0.0}
    for lin in linearizations(mesh16).values():
        base = unit_direction(lin)
        for scale in (0.01, 0.05, 0.1):
            v = scale * base
            u, F, rep = lin.solution_map_S(v)
            v_back, _, _ = lin.decompose(u)
            u_newton, _ = lin.problem.newton_solve(F, u0=lin.w + v)
            worst["residual"] = max(worst["residual"], float(np.max(np.abs(lin.problem.residual(u, F)))))
            worst["decompose"] = max(worst["decompose"], lin.h1(v_back - v))
            worst["newton"] = max(worst["newton"], float(np.max(np.abs(u_newton - u))))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-8 and elapsed < 120
    verdict(5, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" in {elapsed:.1f}s")


def test_criterion_06_runge_certificate(flagship_run):
    lab = flagship_run.lab
    mesh = flagship_run.lab_mesh
    lin = NonlinearRobin(mesh, catalog("cubic")).linearize(lab.w)
    # baseline at zero: the linearized coefficient is the z-derivative of z^3 at 0
    q_ok = np.all(lin.q == 0.0)
    cert = lab.certificate
    recompute = abs(recompute_error(lin.op, cert) - cert.theta_achieved)
    ok = q_ok and mesh.n_triangles == 2 * 32**2 and cert.theta_achieved < 0.1 and recompute <= 1e-12
    verdict(6, ok, f"theta {cert.theta_achieved:.3e} at alpha {cert.alpha:.0e}, recompute difference {recompute:.1e}")


def test_criterion_07_flagship_identification():
    start = time.perf_counter()
    cfg = preset("flagship")
    run = run_reconstruct(cfg)
    elapsed = time.perf_counter() - start
    err = run.report["reconstruction_error"]
    ok = (cfg.inverse.noise == 0 and cfg.sweep.n_t == 21 and cfg.domain.n == 32
          and err["sup_rel"] <= 0.05 and err["coverage"] >= 0.9 and elapsed < 600)
    verdict(7, ok, f"sup_rel {err['sup_rel']:.4f}, band coverage {err['coverage']:.3f} "
                   f"({err['band_populated']}/{err['band_cells']}), lambda {err['lambda']:.4f}, {elapsed:.1f}s")


def test_criterion_08_indistinguishability():
    cfg = preset("bump")
    a1, a2 = cfg.nonlinearity.build(), cfg.nonlinearity.build_alternative()
    result = indistinguishability(cfg)
    lam = run_reconstruct(cfg).report["reconstruction_error"]["lambda"]
    # the laws coincide on the swept band, so only the band claim is checked
    z = np.linspace(-lam, lam, 201)
    x = np.zeros(z.shape + (2,))
    same_on_band = np.array_equal(a1(x, z), a2(x, z))
    differ_elsewhere = np.max(np.abs(a1(x, z + 0.75) - a2(x, z + 0.75))) > 0
    tol = 10 * cfg.solver.tol
    ok = (same_on_band and differ_elsewhere and result["trace_diff"] <= tol and result["flux_diff"] <= tol
          and result["same_cells"] and result["band_value_diff"] <= tol)
    verdict(8, ok, f"trace diff {result['trace_diff']:.1e}, flux diff {result['flux_diff']:.1e}, "
                   f"band values diff {result['band_value_diff']:.1e}, same cells {result['same_cells']}")


def test_criterion_09_openness(flagship_run):
    opn = flagship_run.report["coverage"]["openness"]
    part = flagship_run.mesh.partition(INACCESSIBLE)
    spacing = part.length / part.edges.shape[0]
    lam = flagship_run.report["reconstruction_error"]["lambda"]
    radii_ok = opn["radii"] == pytest.approx([3 * spacing, lam / 2])
    ok = radii_ok and opn["checked"] > 0 and opn["passed"] == opn["checked"]
    verdict(9, ok, f"{opn['passed']}/{opn['checked']} graph points covered, radii {np.round(opn['radii'], 4).tolist()}")


def test_criterion_10_noise_degradation():
    levels = (0.0, 1e-4, 1e-3, 1e-2)
    errors, alphas = [], []
    for level in levels:
        cfg = preset("flagship").replace(inverse={"noise": level}, run={"seed": 0})
        rep = run_reconstruct(cfg).report
        errors.append(rep["reconstruction_error"]["sup_abs"])
        alphas.append(float(np.median([p["alpha"] for p in rep["completion"]["pairs"]])))
    err_ok = all(b >= a for a, b in zip(errors, errors[1:]))
    alpha_ok = all(b <= a for a, b in zip(alphas, alphas[1:]))
    verdict(10, err_ok and alpha_ok,
            f"sup errors {[f'{e:.2e}' for e in errors]} (nondecreasing {err_ok}); "
            f"median alpha {[f'{a:.0e}' for a in alphas]} (nonincreasing {alpha_ok})")
