import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import grid_square, hexagon_fan, triangle_area, unit_square, unit_triangle
from mmgp.datagen import disk_mesh
from mmgp.errors import MeshError, NonManifoldError
from mmgp.mesh import (
    TriMesh,
    adjacency,
    boundary_loops,
    boundary_nodes,
    fix_orientation,
    polygon_area,
    signed_areas,
    validate,
)


def test_minimal_triangle_is_valid():
    assert validate(unit_triangle()).ok


def test_clockwise_triangle_is_fixable():
    m = TriMesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 2, 1]])
    rep = validate(m)
    assert rep.kinds() == ["orientation"]
    assert rep.violations[0].fixable
    assert validate(fix_orientation(m)).ok


def _edge_set(tris):
    edges = set()
    for t in np.asarray(tris).tolist():
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edges.add((min(a, b), max(a, b)))
    return edges


def test_tag_claiming_missing_edge_is_a_conformity_violation():
    # two triangles sharing only node 2; the tag walks 1 -> 3 as if they shared an edge
    nodes = [[0, 0], [1, 0], [1, 1], [2, 1], [2, 2]]
    tris = [[0, 1, 2], [2, 3, 4]]
    assert (1, 3) not in _edge_set(tris)
    rep = validate(TriMesh(nodes, tris, {"wall": [1, 3]}))
    assert "conformity" in rep.kinds()


@pytest.mark.parametrize(
    "nodes, tris, kind",
    [
        ([[0, 0], [1, 0], [0, 1]], [[0, 1, 3]], "index"),
        ([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]], "degenerate"),
        ([[0, 0], [1, 0], [0, 1]], [[0, 1, 2], [1, 2, 0]], "duplicate"),
        ([[0, 0], [1, 0], [0, 1], [5, 5]], [[0, 1, 2]], "orphan"),
        ([[0, 0], [1, 0], [0, np.nan]], [[0, 1, 2]], "nonfinite"),
    ],
)
def test_invalid_meshes_are_reported(nodes, tris, kind):
    rep = validate(TriMesh(np.array(nodes, dtype=float), tris))
    assert kind in rep.kinds()
    with pytest.raises(MeshError):
        rep.raise_if_invalid()


def test_edge_shared_by_three_triangles():
    nodes = [[0, 0], [1, 0], [0.5, 1], [0.5, -1], [0.5, 2]]
    m = TriMesh(nodes, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    assert "conformity" in validate(m).kinds()


def test_square_boundary_loop():
    loops = boundary_loops(unit_square())
    assert len(loops) == 1
    assert sorted(loops[0].tolist()) == [0, 1, 2, 3]
    assert loops[0].tolist() == [0, 1, 2, 3]  # counterclockwise


def test_hexagon_loop_excludes_center():
    (loop,) = boundary_loops(hexagon_fan())
    assert loop.tolist() == [1, 2, 3, 4, 5, 6]


def test_disk_loop_matches_generator_order():
    m = disk_mesh(0.1, seed=3)
    (loop,) = boundary_loops(m)
    outer = m.boundary_tags["outer"]
    assert len(loop) == len(outer)
    # generator lists the outer ring by increasing angle from 0
    start = int(np.flatnonzero(loop == outer[0])[0])
    assert np.array_equal(np.roll(loop, -start), outer)
    ang = np.unwrap(np.arctan2(m.nodes[outer, 1], m.nodes[outer, 0]))
    assert np.all(np.diff(ang) > 0)


def test_nonmanifold_boundary_raises():
    nodes = [[0, 0], [1, 0], [1, 1], [2, 1], [2, 2]]
    m = TriMesh(nodes, [[0, 1, 2], [2, 3, 4]])
    with pytest.raises(NonManifoldError):
        boundary_loops(m)


def test_adjacency_examples():
    adj = adjacency(hexagon_fan())
    assert adj.degrees[0] == 6
    sq = adjacency(unit_square())
    assert sq.degrees.tolist() == [3, 2, 3, 2]
    assert all(i in sq.neighbors[j] for i in range(4) for j in sq.neighbors[i])


def test_adjacency_degree_sum_matches_edge_count():
    m = disk_mesh(0.08, seed=11)
    edges = _edge_set(m.triangles)
    adj = adjacency(m)
    assert adj.degrees.sum() == 2 * len(edges)
    assert adj.n_edges == len(edges)


def _random_polygon_mesh(seed, n=30):
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (n, 2))
    tri = Delaunay(pts)
    t = tri.simplices
    area = triangle_area(pts[t])
    t[area < 0] = t[area < 0][:, [0, 2, 1]]
    keep = np.abs(triangle_area(pts[t])) > 1e-9
    return TriMesh(pts, t[keep])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_signed_area_sum_equals_shoelace(seed):
    m = _random_polygon_mesh(seed)
    try:
        (loop,) = boundary_loops(m)
    except (NonManifoldError, ValueError):
        return
    total = signed_areas(m.nodes, m.triangles).sum()
    x, y = m.nodes[loop].T
    shoelace = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert total == pytest.approx(shoelace, rel=1e-12)
    assert polygon_area(m.nodes[loop]) == pytest.approx(shoelace, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 0.9))
def test_fix_orientation_clears_flip_only_meshes(seed, frac):
    m = grid_square(4, jitter=0.3, seed=seed)
    rng = np.random.default_rng(seed)
    tris = m.triangles.copy()
    flip = rng.random(len(tris)) < frac
    tris[flip] = tris[flip][:, [0, 2, 1]]
    bad = TriMesh(m.nodes, tris)
    rep = validate(bad)
    assert rep.only_fixable
    assert validate(fix_orientation(bad)).ok


def test_boundary_and_interior_partition_nodes():
    m = disk_mesh(0.1, seed=5)
    b = boundary_nodes(m)
    (loop,) = boundary_loops(m)
    assert set(loop.tolist()) == set(b.tolist())
    interior = np.setdiff1d(np.arange(m.n_nodes), b)
    assert len(b) + len(interior) == m.n_nodes
