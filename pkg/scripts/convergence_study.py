"""Mesh convergence of the P1 solver on sin(pi x) cosh(pi y) with a Robin top side."""

import numpy as np

from corrode.fem import assemble_neumann_load, error_norms
from corrode.linear import RobinOperator
from corrode.mesh import ACCESSIBLE, INACCESSIBLE, build_unit_square_mesh


def exact(x, y):
    return np.sin(np.pi * x) * np.cosh(np.pi * y)


def grad(x, y):
    return (np.pi * np.cos(np.pi * x) * np.cosh(np.pi * y),
            np.pi * np.sin(np.pi * x) * np.sinh(np.pi * y))


def solve(n: int, q: float = 1.0):
    mesh = build_unit_square_mesh(n)

    def flux(x, y):
        gx, gy = grad(x, y)
        return np.where(y < 1e-12, -gy, np.where(x < 1e-12, -gx, np.where(x > 1 - 1e-12, gx, gy)))

    F = assemble_neumann_load(mesh, ACCESSIBLE, flux)
    # Robin data on the top side: flux + q u
    G = assemble_neumann_load(mesh, INACCESSIBLE, lambda x, y: grad(x, y)[1] + q * exact(x, y))
    op = RobinOperator(mesh, q=q)
    u, _ = op.solve_load(F + G)
    return mesh, u


def main():
    prev = None
    print(f"{'n':>4} {'L2 error':>12} {'H1 error':>12} {'L2 rate':>8} {'H1 rate':>8}")
    for n in (8, 16, 32, 64):
        mesh, u = solve(n)
        l2, h1 = error_norms(mesh, u, exact, grad)
        rates = ("", "") if prev is None else (f"{np.log2(prev[0] / l2):.3f}", f"{np.log2(prev[1] / h1):.3f}")
        print(f"{n:>4} {l2:12.4e} {h1:12.4e} {rates[0]:>8} {rates[1]:>8}")
        prev = (l2, h1)


if __name__ == "__main__":
    main()
