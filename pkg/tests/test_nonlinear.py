import numpy as np
import pytest
from hypothesis import given, strategies as st

from corrode.errors import ConfigurationError, InputError, NonContractionError
from corrode.fem import assemble_neumann_load
from corrode.linear import RobinOperator
from corrode.mesh import ACCESSIBLE, INACCESSIBLE
from corrode.nonlinear import NonlinearRobin, catalog, parse_nonlinearity, remainder_R

LAWS = {
    "square": lambda: catalog("power", k=2),
    "cubic": lambda: catalog("cubic"),
    "exp": lambda: catalog("exp_minus_one"),
}
ORIGIN = np.zeros(2)


def bottom(c):
    return lambda x, y: c * (y < 1e-12)


@pytest.fixture(scope="module")
def setups(mesh16):
    """Linearizations per law; the cubic one is taken at a nonzero Newton baseline."""
    out = {}
    for name, make in LAWS.items():
        problem = NonlinearRobin(mesh16, make())
        w = None
        if name == "cubic":
            w, _ = problem.newton_solve(assemble_neumann_load(mesh16, ACCESSIBLE, bottom(0.5)))
        out[name] = problem.linearize(w)
    return out


def direction(lin):
    mesh = lin.mesh
    g = assemble_neumann_load(mesh, ACCESSIBLE, lambda x, y: np.cos(np.pi * x) * (y < 1e-12) + 0.3 * (x < 1e-12))
    v, _ = lin.solve_linearized(g - lin.op.phi_load(g))
    return v / lin.h1(v)


def test_catalog_values():
    z = catalog("zero")
    assert z(ORIGIN, 4.0) == 0 and z.deriv(ORIGIN, 4.0) == 0
    p = catalog("power", k=2)
    assert p(ORIGIN, 3.0) == 9.0 and p.deriv(ORIGIN, 3.0) == 6.0
    e = catalog("exp_minus_one")
    assert e(ORIGIN, 0.0) == 0.0 and e.deriv(ORIGIN, 0.0) == 1.0
    assert catalog("linear", q=-2.0)(ORIGIN, 1.5) == -3.0
    assert catalog("cubic", q=2.0).deriv(ORIGIN, 1.0) == 6.0


def test_catalog_unknown():
    with pytest.raises(ConfigurationError):
        catalog("sine")
    with pytest.raises(ConfigurationError):
        catalog("power", k=0)
    with pytest.raises(ConfigurationError):
        parse_nonlinearity("cubic(q=abc)")


def test_parse_round_trip():
    a = parse_nonlinearity("power(q=2, k=3)")
    assert a(ORIGIN, 2.0) == 16.0
    assert a.label == "power(k=3,q=2.0)"
    assert parse_nonlinearity("zero").label == "zero"


def test_spatially_varying_coefficient():
    a = catalog("cubic", q=lambda x, y: 1.0 + x, q_sup=2.0)
    pts = np.array([[0.0, 1.0], [1.0, 1.0]])
    assert np.allclose(a(pts, 2.0), [8.0, 16.0])


ALL_LAWS = ["zero()", "linear(q=-1.5)", "power(k=2)", "cubic(q=0.7)", "exp_minus_one(q=2)",
            "cubic_bump(lo=0.5,hi=1.0,amp=1.0)"]


@pytest.mark.parametrize("text", ALL_LAWS)
def test_finite_difference_derivative(text):
    a = parse_nonlinearity(text)
    z = np.linspace(-1.5, 1.5, 61)
    x = np.zeros(z.shape + (2,))
    for eps in (1e-4, 1e-5):
        fd = (a(x, z + eps) - a(x, z)) / eps
        assert np.max(np.abs(fd - a.deriv(x, z))) <= 60 * eps


@pytest.mark.parametrize("text", ALL_LAWS)
def test_lipschitz_bound_holds(text):
    a = parse_nonlinearity(text)
    z = np.linspace(-1.2, 1.7, 3001)
    x = np.zeros(z.shape + (2,))
    slopes = np.abs(np.diff(a.deriv(x, z))) / np.diff(z)
    assert np.max(slopes) <= a.lipschitz_bound(-1.2, 1.7) * (1 + 1e-9) + 1e-12


@given(st.floats(-2, 2), st.floats(-2, 2), st.sampled_from(ALL_LAWS[:-1]))
def test_remainder_is_taylor_defect(w, h, text):
    a = parse_nonlinearity(text)
    exact = a(ORIGIN, w + h) - a(ORIGIN, w) - a.deriv(ORIGIN, w) * h
    assert a.remainder(ORIGIN, w, h) == pytest.approx(exact, abs=1e-9 * (1 + abs(exact)))


@given(st.floats(-2, 2), st.floats(-0.2, 0.2))
def test_remainder_quadrature_for_bump(w, h):
    # no closed form: 5-point Gauss in t, accurate for short increments
    a = parse_nonlinearity(ALL_LAWS[-1])
    exact = a(ORIGIN, w + h) - a(ORIGIN, w) - a.deriv(ORIGIN, w) * h
    assert abs(a.remainder(ORIGIN, w, h) - exact) <= 1e-6


def test_remainder_examples(mesh8):
    square = NonlinearRobin(mesh8, catalog("power", k=2))
    h = np.sin(mesh8.nodes[:, 0] * 3)
    nodes = mesh8.partition(INACCESSIBLE).nodes
    assert np.all(remainder_R(square, None, np.zeros(mesh8.n_nodes)).values == 0)
    assert np.allclose(remainder_R(square, None, h).values, h[nodes] ** 2, atol=1e-15)
    lin = NonlinearRobin(mesh8, catalog("linear", q=2.0))
    assert np.all(remainder_R(lin, h, h).values == 0)


def test_fixed_point_zero_direction(setups):
    lin = setups["square"]
    r, rep = lin.fixed_point_Q(np.zeros(lin.mesh.n_nodes))
    assert np.all(r == 0)
    assert rep.differences == [0.0]


def test_fixed_point_linear_law(mesh16):
    lin = NonlinearRobin(mesh16, catalog("linear", q=1.0)).linearize()
    v = direction(lin)
    r, _ = lin.fixed_point_Q(0.3 * v)
    assert np.all(r == 0)


@pytest.mark.parametrize("law", list(LAWS))
def test_quadratic_remainder_slope(setups, law):
    lin = setups[law]
    v = direction(lin)
    ts = np.geomspace(1e-3, 1e-1, 5)
    norms, ratio = [], 0.0
    for t in ts:
        r, rep = lin.fixed_point_Q(t * v)
        norms.append(lin.h1(r))
        ratio = max([ratio] + rep.ratios)
    slope = np.polyfit(np.log(ts), np.log(norms), 1)[0]
    assert 1.9 <= slope <= 2.1
    assert ratio <= 0.9


def test_fixed_point_square_slope_at_listed_amplitudes(setups):
    lin = setups["square"]
    v = direction(lin)
    ts = np.array([1e-3, 3e-3, 1e-2, 3e-2])
    norms = [lin.h1(lin.fixed_point_Q(t * v)[0]) for t in ts]
    assert 1.9 <= np.polyfit(np.log(ts), np.log(norms), 1)[0] <= 2.1


def test_fixed_point_non_contraction(setups):
    lin = setups["exp"]
    with pytest.raises(NonContractionError) as info:
        lin.fixed_point_Q(200.0 * direction(lin), delta=np.inf, maxiter=30)
    assert not info.value.report.converged


def test_lipschitz_constant_shrinks_with_ball(setups):
    lin = setups["square"]
    rng = np.random.default_rng(7)
    base = direction(lin)
    other = lin.solve_linearized(assemble_neumann_load(lin.mesh, ACCESSIBLE, lambda x, y: np.sin(5 * y) * (x > 1 - 1e-12)))[0]
    other /= lin.h1(other)
    consts = []
    for delta in (1e-1, 1e-2, 1e-3):
        L = 0.0
        for _ in range(4):
            c1, c2 = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
            v1 = delta * (c1[0] * base + c1[1] * other) / 2
            v2 = delta * (c2[0] * base + c2[1] * other) / 2
            q1, _ = lin.fixed_point_Q(v1)
            q2, _ = lin.fixed_point_Q(v2)
            L = max(L, lin.h1(q1 - q2) / lin.h1(v1 - v2))
        consts.append(L)
    assert consts[0] > consts[1] > consts[2]
    assert consts[2] < 1e-2


def test_solution_map_zero(setups):
    lin = setups["cubic"]
    u, F, _ = lin.solution_map_S(np.zeros(lin.mesh.n_nodes))
    assert np.allclose(u, lin.w, atol=0)
    assert np.allclose(F, lin.h_load, atol=0)


def test_solution_map_linear_superposition(mesh16):
    lin = NonlinearRobin(mesh16, catalog("linear", q=1.0)).linearize()
    v = direction(lin)
    u, F, _ = lin.solution_map_S(0.5 * v)
    assert np.array_equal(u, lin.w + 0.5 * v)
    assert np.allclose(F, lin.data_load(0.5 * v), atol=1e-15)


@pytest.mark.parametrize("law", list(LAWS))
def test_solution_map_round_trips(setups, law):
    lin = setups[law]
    v = 0.1 * direction(lin)
    u, F, rep = lin.solution_map_S(v)
    assert rep.residual <= 1e-8
    v_back, r_back, drep = lin.decompose(u)
    assert lin.h1(v_back - v) <= 1e-8
    assert drep.remainder_mismatch <= 1e-8
    u_newton, _ = lin.problem.newton_solve(F, u0=lin.w + v)
    assert np.max(np.abs(u_newton - u)) <= 1e-8


def test_decompose_trivial_cases(setups, mesh16):
    lin = setups["cubic"]
    v, r, _ = lin.decompose(lin.w)
    assert lin.h1(v) <= 1e-12 and lin.h1(r) <= 1e-12
    linear = NonlinearRobin(mesh16, catalog("linear", q=1.0)).linearize()
    u = 0.2 * direction(linear)
    v, r, _ = linear.decompose(u)
    assert np.allclose(v, u, atol=1e-12)
    assert np.allclose(r, 0.0, atol=1e-12)


def test_newton_zero_law_matches_restricted(mesh16):
    F = assemble_neumann_load(mesh16, ACCESSIBLE, lambda x, y: np.cos(np.pi * x) * (y < 1e-12))
    u, _ = NonlinearRobin(mesh16, catalog("zero")).newton_solve(F)
    ref, _ = RobinOperator(mesh16, q=0.0).solve_load(F)
    assert np.max(np.abs(u - ref)) <= 1e-10


def test_newton_manufactured_linear_law(mesh16):
    problem = NonlinearRobin(mesh16, catalog("linear", q=-1.0))
    F = assemble_neumann_load(mesh16, ACCESSIBLE, bottom(-1.0))
    u, _ = problem.newton_solve(F)
    assert np.max(np.abs(u - mesh16.nodes[:, 1])) <= 1e-9


def test_newton_cubic_converges_quadratically(mesh16):
    problem = NonlinearRobin(mesh16, catalog("cubic"))
    u, rep = problem.newton_solve(assemble_neumann_load(mesh16, ACCESSIBLE, bottom(0.5)))
    assert rep.iterations <= 8
    res = [r for r in rep.residuals if r > 1e-13]
    tail = res[-4:]
    for a, b in zip(tail, tail[1:]):
        assert b <= 10 * a**2


def test_newton_rejects_nonfinite_start(mesh8):
    problem = NonlinearRobin(mesh8, catalog("cubic"))
    with pytest.raises(InputError):
        problem.newton_solve(np.zeros(mesh8.n_nodes), u0=np.full(mesh8.n_nodes, np.nan))


def test_default_delta_infinite_for_linear(mesh8):
    lin = NonlinearRobin(mesh8, catalog("linear")).linearize()
    assert lin.default_delta() == np.inf
    assert 0 < NonlinearRobin(mesh8, catalog("cubic")).linearize().default_delta() < np.inf
