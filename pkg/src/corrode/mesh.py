"""Triangulations of desk-scale 2D domains with a two-way boundary partition.

The boundary is split into an accessible part (where data are measured) and an
inaccessible part (where the corrosion law acts).  Nodes at the junction of the
two parts belong to both closed partitions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigurationError, GeometryError, InputError

SQUARE_SIDES = ("bottom", "right", "top", "left")


class Tag(enum.Enum):
    ACCESSIBLE = "ACCESSIBLE"
    INACCESSIBLE = "INACCESSIBLE"


ACCESSIBLE = Tag.ACCESSIBLE
INACCESSIBLE = Tag.INACCESSIBLE


@dataclass(frozen=True)
class BoundaryPartition:
    """Closed boundary segment carrying one tag.

    ``nodes`` is ordered along the boundary chain(s); ``arclength`` gives the
    cumulative distance of each node from the start of its chain, with
    successive chains offset so that the coordinate is globally increasing.
    """

    tag: Tag
    nodes: np.ndarray
    edges: np.ndarray
    lengths: np.ndarray
    arclength: np.ndarray

    @property
    def length(self) -> float:
        return float(self.lengths.sum())

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def local_index(self, n_nodes: int) -> np.ndarray:
        """Map global node index -> position in ``nodes`` (-1 if absent)."""
        loc = np.full(n_nodes, -1, dtype=np.int64)
        loc[self.nodes] = np.arange(self.nodes.size)
        return loc


@dataclass(frozen=True)
class BoundaryField:
    """Scalar values at the nodes of one boundary partition."""

    tag: Tag
    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.nodes.shape != self.values.shape:
            raise InputError("boundary field needs one value per tagged node")

    def to_nodal(self, n_nodes: int) -> np.ndarray:
        """Extend by zero to a full nodal vector."""
        out = np.zeros(n_nodes)
        out[self.nodes] = self.values
        return out

    def __add__(self, other: "BoundaryField") -> "BoundaryField":
        _check_same_support(self, other)
        return BoundaryField(self.tag, self.nodes, self.values + other.values)

    def __sub__(self, other: "BoundaryField") -> "BoundaryField":
        _check_same_support(self, other)
        return BoundaryField(self.tag, self.nodes, self.values - other.values)

    def __mul__(self, scalar: float) -> "BoundaryField":
        return BoundaryField(self.tag, self.nodes, self.values * scalar)

    __rmul__ = __mul__


def _check_same_support(a: BoundaryField, b: BoundaryField) -> None:
    if a.tag != b.tag or not np.array_equal(a.nodes, b.nodes):
        raise InputError("boundary fields live on different node sets")


class Mesh:
    """Conforming P1 triangulation with tagged boundary edges.

    Parameters
    ----------
    nodes : (N, 2) array of coordinates.
    triangles : (T, 3) array of node indices, counter-clockwise.
    bedges : (B, 2) array of boundary edge node indices.
    btags : sequence of :class:`Tag`, one per boundary edge.
    """

    def __init__(self, nodes, triangles, bedges, btags, validate: bool = True):
        self.nodes = np.ascontiguousarray(nodes, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.bedges = np.ascontiguousarray(bedges, dtype=np.int64).reshape(-1, 2)
        self.btags = tuple(Tag(t) for t in btags)
        for arr in (self.nodes, self.triangles, self.bedges):
            arr.setflags(write=False)
        if validate:
            self.validate()

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def h(self) -> float:
        """Maximum edge length."""
        p = self.nodes[self.triangles]
        lens = [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return float(np.max(lens))

    def validate(self) -> None:
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= self.n_nodes):
            raise GeometryError("triangle references a missing node")
        if np.any(self.signed_areas <= 0.0):
            bad = int(np.argmin(self.signed_areas))
            raise GeometryError(f"triangle {bad} has non-positive signed area")
        if len(self.btags) != self.bedges.shape[0]:
            raise GeometryError("one tag per boundary edge required")

        # each edge shared by at most two triangles; the free ones are the boundary
        tri = self.triangles
        all_edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(all_edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise GeometryError("non-conforming triangulation: edge shared by more than two triangles")
        free = {tuple(e) for e in uniq[counts == 1]}
        tagged = [tuple(sorted(e)) for e in self.bedges.tolist()]
        if len(set(tagged)) != len(tagged):
            raise GeometryError("boundary edge tagged twice")
        if set(tagged) != free:
            raise GeometryError("boundary edges do not match the free edges of the triangulation")
        present = set(self.btags)
        if present != {ACCESSIBLE, INACCESSIBLE}:
            raise ConfigurationError("both accessible and inaccessible boundary parts must be nonempty",
                                     key="partition")

    def edges_with_tag(self, tag: Tag) -> np.ndarray:
        mask = np.array([t is tag for t in self.btags], dtype=bool)
        return self.bedges[mask]

    @cached_property
    def _partitions(self) -> dict:
        return {tag: _build_partition(self, tag) for tag in Tag}

    def partition(self, tag: Tag) -> BoundaryPartition:
        return self._partitions[Tag(tag)]

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.bedges)

    def boundary_field(self, tag: Tag, values) -> BoundaryField:
        """Wrap values (scalar, callable of (x, y), or array) on the tagged nodes."""
        part = self.partition(tag)
        if callable(values):
            xy = self.nodes[part.nodes]
            vals = np.asarray(values(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(part.size)
        elif np.isscalar(values):
            vals = np.full(part.size, float(values))
        else:
            vals = np.asarray(values, dtype=float)
            if vals.shape == (self.n_nodes,):
                vals = vals[part.nodes]
            elif vals.shape != (part.size,):
                raise InputError(f"expected {part.size} values on {Tag(tag).value} nodes, got {vals.shape}")
        return BoundaryField(part.tag, part.nodes, np.array(vals, dtype=float))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.bedges, other.bedges)
                and self.btags == other.btags)

    __hash__ = object.__hash__


def _build_partition(mesh: Mesh, tag: Tag) -> BoundaryPartition:
    edges = mesh.edges_with_tag(tag)
    adj: dict[int, list[int]] = {}
    for i, (a, b) in enumerate(edges.tolist()):
        adj.setdefault(a, []).append(i)
        adj.setdefault(b, []).append(i)

    used = np.zeros(len(edges), dtype=bool)
    order_nodes: list[int] = []
    order_edges: list[tuple[int, int]] = []
    arclength: list[float] = []
    offset = 0.0
    while not used.all():
        # start a chain at an open end if one exists, else anywhere on a loop
        free_nodes = [n for n, es in adj.items() if any(not used[e] for e in es)]
        ends = [n for n in free_nodes if sum(not used[e] for e in adj[n]) == 1]
        current = min(ends) if ends else min(free_nodes)
        order_nodes.append(current)
        arclength.append(offset)
        while True:
            nxt = [e for e in adj[current] if not used[e]]
            if not nxt:
                break
            e = nxt[0]
            used[e] = True
            a, b = edges[e]
            other = b if a == current else a
            step = float(np.linalg.norm(mesh.nodes[other] - mesh.nodes[current]))
            offset += step
            order_edges.append((current, other))
            if other in order_nodes:      # closed loop
                break
            order_nodes.append(other)
            arclength.append(offset)
            current = other

    edge_arr = np.array(order_edges, dtype=np.int64).reshape(-1, 2)
    lengths = np.linalg.norm(mesh.nodes[edge_arr[:, 1]] - mesh.nodes[edge_arr[:, 0]], axis=1)
    nodes = np.array(order_nodes, dtype=np.int64)
    for arr in (nodes, edge_arr, lengths):
        arr.setflags(write=False)
    return BoundaryPartition(tag, nodes, edge_arr, lengths, np.array(arclength))


def _parse_square_partition(partition) -> frozenset:
    if partition is None:
        names = ("top",)
    elif isinstance(partition, str):
        names = tuple(s.strip() for s in partition.split(",") if s.strip())
    else:
        names = tuple(partition)
    unknown = set(names) - set(SQUARE_SIDES)
    if unknown:
        raise ConfigurationError(f"unknown square side(s) {sorted(unknown)}", key="partition")
    chosen = frozenset(names)
    if not chosen or chosen == frozenset(SQUARE_SIDES):
        raise ConfigurationError("partition must leave both boundary parts nonempty", key="partition")
    return chosen


def build_unit_square_mesh(n: int, partition: str | Iterable[str] | None = None) -> Mesh:
    """Structured right-triangle mesh of the unit square.

    ``partition`` names the inaccessible sides (any of bottom/right/top/left);
    the default is the top side only.
    """
    if n < 1:
        raise ConfigurationError("n must be at least 1", key="n")
    inaccessible = _parse_square_partition(partition)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)                      # node index i + j(n+1)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    p = (i + j * (n + 1)).ravel()
    lower = np.column_stack([p, p + 1, p + n + 2])
    upper = np.column_stack([p, p + n + 2, p + n + 1])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    k = np.arange(n)
    sides = {
        "bottom": np.column_stack([k, k + 1]),
        "right": np.column_stack([n + k * (n + 1), n + (k + 1) * (n + 1)]),
        "top": np.column_stack([n * (n + 1) + n - k, n * (n + 1) + n - k - 1]),
        "left": np.column_stack([(n - k) * (n + 1), (n - k - 1) * (n + 1)]),
    }
    bedges, btags = [], []
    for name in SQUARE_SIDES:
        bedges.append(sides[name])
        btags += [INACCESSIBLE if name in inaccessible else ACCESSIBLE] * n
    return Mesh(nodes, triangles, np.vstack(bedges), btags)


def build_unit_disk_mesh(n: int, theta_split: float) -> Mesh:
    """Ring-based triangulation of the unit disk with ``n`` rings.

    Ring ``k`` carries ``6k`` nodes.  The outer-ring node closest in angle to
    ``theta_split`` is moved onto that angle so the partition point is a node.
    Boundary arc ``[0, theta_split)`` is inaccessible.
    """
    if n < 1:
        raise ConfigurationError("n must be at least 1", key="n")
    if not 0.0 < theta_split < 2.0 * math.pi:
        raise ConfigurationError("theta_split must lie in (0, 2*pi)", key="theta_split")

    rings_angles = []
    for k in range(1, n + 1):
        ang = 2.0 * math.pi * np.arange(6 * k) / (6 * k)
        if k == n:
            j = int(np.argmin(np.abs(ang - theta_split)))
            if j != 0 and abs(2.0 * math.pi - theta_split) > 0.5 * (ang[1] - ang[0]):
                ang[j] = theta_split
        rings_angles.append(ang)

    coords = [np.zeros((1, 2))]
    starts = [0]
    count = 1
    for k, ang in enumerate(rings_angles, start=1):
        r = k / n
        coords.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
        starts.append(count)
        count += ang.size
    nodes = np.vstack(coords)

    triangles = []
    outer = rings_angles[0]
    q = outer.size
    for j in range(q):
        triangles.append((0, starts[1] + j, starts[1] + (j + 1) % q))
    for k in range(2, n + 1):
        a = rings_angles[k - 2]
        b = rings_angles[k - 1]
        p, q = a.size, b.size
        a_un = np.append(a, a[0] + 2 * math.pi)
        b_un = np.append(b, b[0] + 2 * math.pi)
        ia = lambda i: starts[k - 1] + i % p
        ib = lambda j: starts[k] + j % q
        i = j = 0
        while i < p or j < q:
            if j < q and (i == p or b_un[j + 1] <= a_un[i + 1]):
                triangles.append((ia(i), ib(j), ib(j + 1)))
                j += 1
            else:
                triangles.append((ia(i), ib(j), ia(i + 1)))
                i += 1
    triangles = np.array(triangles, dtype=np.int64)

    ang = rings_angles[-1]
    q = ang.size
    bedges, btags = [], []
    for j in range(q):
        a0 = ang[j]
        a1 = ang[(j + 1) % q] + (2 * math.pi if j == q - 1 else 0.0)
        mid = 0.5 * (a0 + a1)
        bedges.append((starts[n] + j, starts[n] + (j + 1) % q))
        btags.append(INACCESSIBLE if 0.0 <= mid < theta_split else ACCESSIBLE)
    return Mesh(nodes, triangles, np.array(bedges), btags)


def _as_boundary_values(mesh: Mesh, tag: Tag, g) -> np.ndarray:
    part = mesh.partition(tag)
    if isinstance(g, BoundaryField):
        if g.tag != part.tag or not np.array_equal(g.nodes, part.nodes):
            raise InputError("boundary field does not cover the tagged node set")
        vals = g.values
    elif isinstance(g, dict):
        missing = [int(i) for i in part.nodes if int(i) not in g]
        if missing:
            raise InputError(f"missing nodal values at nodes {missing[:5]}")
        vals = np.array([g[int(i)] for i in part.nodes], dtype=float)
    else:
        vals = mesh.boundary_field(tag, g).values
    if not np.all(np.isfinite(vals)):
        raise InputError("non-finite nodal value on tagged boundary")
    return vals


def boundary_integral(mesh: Mesh, tag: Tag, g) -> float:
    """Trapezoid-rule integral of piecewise-linear boundary data over one part."""
    part = mesh.partition(tag)
    vals = _as_boundary_values(mesh, tag, g)
    loc = part.local_index(mesh.n_nodes)
    e = part.edges
    return float(np.sum(0.5 * part.lengths * (vals[loc[e[:, 0]]] + vals[loc[e[:, 1]]])))


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} bedges {mesh.bedges.shape[0]}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{i} {j} {t.value}" for (i, j), t in zip(mesh.bedges.tolist(), mesh.btags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> Mesh:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = rows[0]
    if len(head) != 6 or head[0::2] != ["nodes", "triangles", "bedges"]:
        raise InputError("mesh header must read 'nodes N triangles T bedges B'")
    n, t, b = int(head[1]), int(head[3]), int(head[5])
    if len(rows) != 1 + n + t + b:
        raise InputError("mesh file length does not match its header")
    body = rows[1:]
    nodes = np.array([[float(v) for v in r] for r in body[:n]])
    tris = np.array([[int(v) for v in r] for r in body[n:n + t]], dtype=np.int64)
    bed = body[n + t:]
    bedges = np.array([[int(r[0]), int(r[1])] for r in bed], dtype=np.int64)
    tags = [Tag(r[2]) for r in bed]
    return Mesh(nodes, tris, bedges, tags)


def node_function(mesh: Mesh, f: Callable) -> np.ndarray:
    """Interpolate ``f(x, y)`` at the mesh nodes."""
    return np.asarray(f(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float) * np.ones(mesh.n_nodes)
