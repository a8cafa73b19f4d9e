import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from corrode.errors import ConfigurationError, GeometryError, InputError
from corrode.mesh import (ACCESSIBLE, INACCESSIBLE, Mesh, boundary_integral, build_unit_disk_mesh,
                          build_unit_square_mesh, read_mesh, write_mesh)


def test_square_n1_counts():
    m = build_unit_square_mesh(1)
    assert (m.n_nodes, m.n_triangles, m.bedges.shape[0]) == (4, 2, 4)
    assert sum(t is INACCESSIBLE for t in m.btags) == 1


def test_square_n2_counts_and_lengths():
    m = build_unit_square_mesh(2)
    assert (m.n_nodes, m.n_triangles, m.bedges.shape[0]) == (9, 8, 8)
    assert m.partition(INACCESSIBLE).length == pytest.approx(1.0, abs=1e-12)
    assert m.partition(ACCESSIBLE).length == pytest.approx(3.0, abs=1e-12)


@given(st.integers(1, 24))
def test_square_structure(n):
    m = build_unit_square_mesh(n)
    assert m.n_triangles == 2 * n * n
    assert np.allclose(m.signed_areas, 1.0 / (2 * n * n), rtol=0, atol=1e-15)
    assert m.bedges.shape[0] == 4 * n
    assert m.h == pytest.approx(math.sqrt(2) / n)


@given(st.sets(st.sampled_from(["bottom", "right", "top", "left"]), min_size=1, max_size=3))
def test_square_partitions_cover_boundary(sides):
    m = build_unit_square_mesh(3, sides)
    acc = {tuple(sorted(e)) for e in m.edges_with_tag(ACCESSIBLE).tolist()}
    ina = {tuple(sorted(e)) for e in m.edges_with_tag(INACCESSIBLE).tolist()}
    assert not acc & ina
    assert len(acc) + len(ina) == m.bedges.shape[0]
    assert m.partition(INACCESSIBLE).length == pytest.approx(len(sides))


@pytest.mark.parametrize("part", [[], ["bottom", "right", "top", "left"], ["middle"]])
def test_square_bad_partition(part):
    with pytest.raises(ConfigurationError):
        build_unit_square_mesh(2, part)


def test_square_bad_n():
    with pytest.raises(ConfigurationError):
        build_unit_square_mesh(0)


def test_junction_nodes_in_both_partitions(mesh4):
    ina = set(mesh4.partition(INACCESSIBLE).nodes.tolist())
    acc = set(mesh4.partition(ACCESSIBLE).nodes.tolist())
    corners = {int(i) for i in np.flatnonzero(np.all(np.isin(mesh4.nodes, [0.0, 1.0]), axis=1))
               if mesh4.nodes[i, 1] == 1.0}
    assert ina & acc == corners


def test_partition_arclength_increasing(mesh8):
    for tag in (ACCESSIBLE, INACCESSIBLE):
        part = mesh8.partition(tag)
        assert np.all(np.diff(part.arclength) > 0)
        assert part.arclength[-1] == pytest.approx(part.length)


@pytest.mark.parametrize("theta, tag, exact", [(math.pi, INACCESSIBLE, math.pi),
                                                (math.pi / 2, ACCESSIBLE, 1.5 * math.pi)])
def test_disk_arc_lengths_converge(theta, tag, exact):
    errs, hs = [], []
    for n in (4, 8, 16):
        m = build_unit_disk_mesh(n, theta)
        errs.append(abs(m.partition(tag).length - exact))
        hs.append(m.h)
    assert errs[-1] < errs[0]
    # chord error is O(h^2): err / h^2 stays bounded
    assert max(e / h**2 for e, h in zip(errs, hs)) < 1.0


def test_disk_minimal_mesh_valid():
    m = build_unit_disk_mesh(1, math.pi)
    m.validate()
    assert np.all(m.signed_areas > 0)


@pytest.mark.parametrize("theta", [0.0, 2 * math.pi, -1.0])
def test_disk_bad_split(theta):
    with pytest.raises(ConfigurationError):
        build_unit_disk_mesh(3, theta)


def test_boundary_integral_examples(mesh4):
    assert boundary_integral(mesh4, INACCESSIBLE, 1.0) == pytest.approx(1.0, abs=1e-14)
    assert boundary_integral(mesh4, INACCESSIBLE, 0.0) == 0.0
    assert boundary_integral(mesh4, INACCESSIBLE, lambda x, y: x) == pytest.approx(0.5, abs=1e-14)


def test_boundary_integral_missing_value(mesh4):
    part = mesh4.partition(INACCESSIBLE)
    values = {int(i): 1.0 for i in part.nodes[1:]}
    with pytest.raises(InputError):
        boundary_integral(mesh4, INACCESSIBLE, values)


@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5), st.lists(st.floats(-10, 10), min_size=5, max_size=5),
       st.floats(-3, 3))
def test_boundary_integral_linear(g1, g2, c):
    m = build_unit_square_mesh(4)
    g1, g2 = np.array(g1), np.array(g2)
    lhs = boundary_integral(m, INACCESSIBLE, g1 + c * g2)
    rhs = boundary_integral(m, INACCESSIBLE, g1) + c * boundary_integral(m, INACCESSIBLE, g2)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_boundary_integral_additive_over_split():
    # top side alone plus the three others equals all four sides as one part
    whole = build_unit_square_mesh(4, ["bottom", "right", "top"])
    top = build_unit_square_mesh(4, ["top"])
    rest = build_unit_square_mesh(4, ["bottom", "right", "left"])

    def g(x, y):
        return np.sin(3 * x) + y**2

    total = (boundary_integral(top, INACCESSIBLE, g) + boundary_integral(rest, INACCESSIBLE, g))
    also = boundary_integral(whole, INACCESSIBLE, g) + boundary_integral(whole, ACCESSIBLE, g)
    assert total == pytest.approx(also, abs=1e-13)


def test_mesh_text_round_trip(tmp_path):
    m = build_unit_disk_mesh(3, 2.0)
    write_mesh(m, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.bedges, m.bedges)
    assert back.btags == m.btags
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == \
        f"nodes {m.n_nodes} triangles {m.n_triangles} bedges {m.bedges.shape[0]}"


def test_mesh_rejects_clockwise_triangle():
    nodes = [[0, 0], [1, 0], [0, 1]]
    with pytest.raises(GeometryError):
        Mesh(nodes, [[0, 2, 1]], [[0, 1], [1, 2], [2, 0]], [ACCESSIBLE, ACCESSIBLE, INACCESSIBLE])


def test_mesh_rejects_missing_boundary_edge():
    nodes = [[0, 0], [1, 0], [0, 1]]
    with pytest.raises(GeometryError):
        Mesh(nodes, [[0, 1, 2]], [[0, 1], [1, 2]], [ACCESSIBLE, INACCESSIBLE])


def test_mesh_rejects_single_tag():
    nodes = [[0, 0], [1, 0], [0, 1]]
    with pytest.raises(ConfigurationError):
        Mesh(nodes, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [ACCESSIBLE] * 3)


def test_mesh_is_immutable(mesh4):
    with pytest.raises(ValueError):
        mesh4.nodes[0, 0] = 5.0
