"""Planar triangle meshes, nodal fields and their topological queries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from .errors import DimensionMismatch, MeshError, NonManifoldError

DEGENERATE_TOL = 1e-14


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conformal 2D triangulation.

    Parameters
    ----------
    nodes : (N, 2) array
        Node coordinates.
    triangles : (T, 3) int array
        Node indices of each triangle, counterclockwise once validated.
    boundary_tags : dict
        Feature name -> node indices ordered along the boundary.
    feature_points : dict
        Feature name -> single node index.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_tags: Dict[str, np.ndarray] = field(default_factory=dict)
    feature_points: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        nodes = _frozen(self.nodes, np.float64).reshape(-1, 2)
        tris = _frozen(self.triangles, np.int64).reshape(-1, 3)
        tags = {str(k): _frozen(v, np.int64).reshape(-1) for k, v in self.boundary_tags.items()}
        feats = {str(k): int(v) for k, v in self.feature_points.items()}
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "boundary_tags", tags)
        object.__setattr__(self, "feature_points", feats)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def with_nodes(self, nodes) -> "TriMesh":
        """Same connectivity and tags, new coordinates."""
        nodes = np.asarray(nodes, dtype=np.float64)
        if nodes.shape != self.nodes.shape:
            raise DimensionMismatch(f"expected nodes of shape {self.nodes.shape}, got {nodes.shape}")
        return TriMesh(nodes, self.triangles, self.boundary_tags, self.feature_points)

    def same_as(self, other: "TriMesh") -> bool:
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.triangles, other.triangles)
            and self.boundary_tags.keys() == other.boundary_tags.keys()
            and all(np.array_equal(v, other.boundary_tags[k]) for k, v in self.boundary_tags.items())
            and self.feature_points == other.feature_points
        )


@dataclass(frozen=True, eq=False)
class NodalField:
    """Nodal values of ``d`` field components, shape (d, N)."""

    values: np.ndarray
    component_names: Sequence[str]
    units: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2:
            raise DimensionMismatch("field values must be a (d, N) matrix")
        names = tuple(str(c) for c in self.component_names)
        if len(names) != values.shape[0]:
            raise DimensionMismatch(f"{len(names)} component names for {values.shape[0]} components")
        if not np.all(np.isfinite(values)):
            raise DimensionMismatch("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "component_names", names)

    @property
    def n_components(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def check_mesh(self, mesh: TriMesh):
        if self.n_nodes != mesh.n_nodes:
            raise DimensionMismatch(f"field has {self.n_nodes} nodes, mesh has {mesh.n_nodes}")


# --------------------------------------------------------------------------
# geometry


def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = nodes[triangles[:, 0]]
    b = nodes[triangles[:, 1]]
    c = nodes[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area of a closed polygon given by its vertices in order."""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def diameter(points: np.ndarray) -> float:
    """Largest distance between two of ``points``."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    if len(points) > 3:
        try:
            points = points[ConvexHull(points).vertices]
        except Exception:
            pass  # collinear input, fall back to all pairs
    return float(pdist(points).max())


def min_angles(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Smallest interior angle of each triangle, in degrees."""
    p = nodes[triangles]
    out = np.full(len(triangles), np.inf)
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out = np.minimum(out, np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return out


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    indices: tuple = ()
    fixable: bool = False


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def only_fixable(self) -> bool:
        return all(v.fixable for v in self.violations)

    def kinds(self) -> List[str]:
        return [v.kind for v in self.violations]

    def raise_if_invalid(self):
        if self.violations:
            lines = "; ".join(v.message for v in self.violations[:10])
            more = f" (+{len(self.violations) - 10} more)" if len(self.violations) > 10 else ""
            raise MeshError(f"invalid mesh: {lines}{more}")


def _edge_incidence(triangles: np.ndarray):
    """Undirected edges (sorted pairs) and the number of triangles using each."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


def validate(mesh: TriMesh, degenerate_tol: float = DEGENERATE_TOL) -> ValidationReport:
    """Check every mesh invariant and report all violations found.

    Triangles with negative signed area are reported as fixable orientation
    violations; everything else needs a new mesh.
    """
    report = ValidationReport()
    add = report.violations.append
    nodes, tris = mesh.nodes, mesh.triangles
    n = mesh.n_nodes

    if not np.all(np.isfinite(nodes)):
        bad = np.flatnonzero(~np.all(np.isfinite(nodes), axis=1))
        add(Violation("nonfinite", f"non-finite coordinates at nodes {bad.tolist()}", tuple(bad.tolist())))
        return report

    out_of_range = np.flatnonzero(np.any((tris < 0) | (tris >= n), axis=1))
    for t in out_of_range:
        add(Violation("index", f"triangle {t} references node outside [0, {n})", (int(t),)))
    if len(out_of_range):
        return report

    repeated = np.flatnonzero(
        (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])
    )
    for t in repeated:
        add(Violation("degenerate", f"triangle {t} repeats a node", (int(t),)))

    keys = np.sort(tris, axis=1)
    _, first, inverse, counts = np.unique(keys, axis=0, return_index=True, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    for t in np.flatnonzero(counts[inverse] > 1):
        if first[inverse[t]] != t:
            add(Violation("duplicate", f"triangle {t} duplicates triangle {first[inverse[t]]}",
                          (int(first[inverse[t]]), int(t))))

    area = signed_areas(nodes, tris)
    tol = degenerate_tol * diameter(nodes) ** 2
    for t in np.flatnonzero(np.abs(area) < tol):
        if t not in repeated:
            add(Violation("degenerate", f"triangle {t} has |signed area| {abs(area[t]):.3e} < {tol:.3e}", (int(t),)))
    for t in np.flatnonzero(area <= -tol):
        add(Violation("orientation", f"triangle {t} is clockwise", (int(t),), fixable=True))

    edges, counts = _edge_incidence(tris)
    for e in edges[counts > 2]:
        add(Violation("conformity", f"edge ({e[0]}, {e[1]}) shared by more than two triangles", tuple(int(i) for i in e)))

    bedges = edges[counts == 1]
    bdeg = np.bincount(bedges.reshape(-1), minlength=n)
    for v in np.flatnonzero(bdeg > 2):
        add(Violation("conformity", f"node {v} has {bdeg[v]} incident boundary edges", (int(v),)))

    used = np.zeros(n, dtype=bool)
    used[tris.reshape(-1)] = True
    for v in np.flatnonzero(~used):
        add(Violation("orphan", f"node {v} belongs to no triangle", (int(v),)))

    bset = {(int(a), int(b)) for a, b in bedges}
    for name, seq in mesh.boundary_tags.items():
        if np.any((seq < 0) | (seq >= n)):
            add(Violation("tag", f"boundary tag {name!r} references nodes outside [0, {n})"))
            continue
        off = seq[bdeg[seq] == 0]
        if len(off):
            add(Violation("tag", f"boundary tag {name!r} contains interior nodes {off.tolist()}", tuple(off.tolist())))
        for a, b in zip(seq[:-1], seq[1:]):
            if (min(a, b), max(a, b)) not in bset:
                add(Violation("conformity", f"boundary tag {name!r} jumps between nodes {a} and {b} without a boundary edge",
                              (int(a), int(b))))
    for name, v in mesh.feature_points.items():
        if not 0 <= v < n:
            add(Violation("tag", f"feature point {name!r} index {v} outside [0, {n})", (v,)))
    return report


def fix_orientation(mesh: TriMesh) -> TriMesh:
    """Flip clockwise triangles to counterclockwise."""
    tris = mesh.triangles.copy()
    neg = signed_areas(mesh.nodes, tris) < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return TriMesh(mesh.nodes, tris, mesh.boundary_tags, mesh.feature_points)


# --------------------------------------------------------------------------
# topology


def boundary_edges(mesh: TriMesh) -> np.ndarray:
    """Directed boundary edges, oriented with the domain on their left."""
    tris = mesh.triangles
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    keys = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return directed[counts[inverse.reshape(-1)] == 1]


def boundary_loops(mesh: TriMesh) -> List[np.ndarray]:
    """Ordered node cycles of each boundary component.

    Each cycle follows the boundary with the domain on its left (so the
    outer boundary runs counterclockwise) and starts at its smallest node
    index. Cycles are sorted by that starting node.
    """
    edges = boundary_edges(mesh)
    nxt: Dict[int, int] = {}
    deg = np.bincount(edges.reshape(-1), minlength=mesh.n_nodes)
    bad = np.flatnonzero(deg > 2)
    if len(bad):
        raise NonManifoldError(f"nodes {bad.tolist()} have more than two incident boundary edges")
    for a, b in edges:
        nxt[int(a)] = int(b)
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        v = nxt[start]
        while v != start:
            if v in seen or v not in nxt:
                raise NonManifoldError(f"boundary walk from node {start} does not close")
            loop.append(v)
            seen.add(v)
            v = nxt[v]
        loops.append(np.array(loop, dtype=np.int64))
    return loops


def boundary_nodes(mesh: TriMesh) -> np.ndarray:
    return np.unique(boundary_edges(mesh).reshape(-1))


@dataclass(frozen=True)
class Adjacency:
    neighbors: List[np.ndarray]
    degrees: np.ndarray
    matrix: sparse.csr_matrix

    @property
    def n_edges(self) -> int:
        return int(self.matrix.nnz // 2)


def adjacency(mesh: TriMesh) -> Adjacency:
    """Node neighbor sets and degrees from triangle edges."""
    tris = mesh.triangles
    n = mesh.n_nodes
    i = np.concatenate([tris[:, 0], tris[:, 1], tris[:, 2], tris[:, 1], tris[:, 2], tris[:, 0]])
    j = np.concatenate([tris[:, 1], tris[:, 2], tris[:, 0], tris[:, 0], tris[:, 1], tris[:, 2]])
    A = sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    A.sum_duplicates()
    A.data[:] = 1.0
    A.sort_indices()
    neighbors = [A.indices[A.indptr[k]:A.indptr[k + 1]].copy() for k in range(n)]
    degrees = np.diff(A.indptr)
    return Adjacency(neighbors, degrees, A)


def component_count(mesh: TriMesh) -> int:
    from scipy.sparse.csgraph import connected_components

    return int(connected_components(adjacency(mesh).matrix, directed=False)[0])


def same_topology(a: TriMesh, b: TriMesh) -> Optional[str]:
    """Return a reason string when two meshes cannot share a reference shape."""
    if set(a.boundary_tags) != set(b.boundary_tags):
        return f"boundary tags differ: {sorted(a.boundary_tags)} vs {sorted(b.boundary_tags)}"
    if set(a.feature_points) != set(b.feature_points):
        return f"feature points differ: {sorted(a.feature_points)} vs {sorted(b.feature_points)}"
    na, nb = len(boundary_loops(a)), len(boundary_loops(b))
    if na != nb:
        return f"boundary component counts differ: {na} vs {nb}"
    return None
