"""P1 finite elements on triangle meshes.

Point location uses a uniform grid of buckets (about sqrt(T) cells per
axis); every bucket lists the triangles whose bounding box touches it.
Among all triangles containing a point the lowest index wins, so the
result is the same as a scan over every triangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .errors import DimensionMismatch, TooManyOutside
from .mesh import NodalField, TriMesh, diameter, signed_areas

INSIDE_TOL = 1e-12
CLAMP = "clamp"
EXTRAPOLATE = "barycentric-extrapolate"
EXTRAPOLATE_MIN_WEIGHT = -0.1


@dataclass(frozen=True, eq=False)
class P1Basis:
    """Per-triangle affine maps to barycentric coordinates."""

    mesh: TriMesh
    origin: np.ndarray  # (T, 2) first vertex
    inverse: np.ndarray  # (T, 2, 2) maps p - origin to (l1, l2)

    @classmethod
    def build(cls, mesh: TriMesh) -> "P1Basis":
        p = mesh.nodes[mesh.triangles]
        a = p[:, 0]
        jac = np.stack([p[:, 1] - a, p[:, 2] - a], axis=2)  # columns are edge vectors
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        return cls(mesh, a, inv)

    def barycentric(self, points: np.ndarray, tri: np.ndarray) -> np.ndarray:
        """Barycentric weights of ``points[k]`` in triangle ``tri[k]``."""
        d = points - self.origin[tri]
        l12 = np.einsum("kij,kj->ki", self.inverse[tri], d)
        return np.column_stack([1.0 - l12[:, 0] - l12[:, 1], l12])

    def barycentric_all(self, point: np.ndarray) -> np.ndarray:
        """Weights of one point with respect to every triangle, shape (T, 3)."""
        d = point[None, :] - self.origin
        l12 = np.einsum("kij,kj->ki", self.inverse, d)
        return np.column_stack([1.0 - l12[:, 0] - l12[:, 1], l12])


@dataclass(frozen=True)
class Location:
    triangle: int
    weights: np.ndarray
    inside: bool
    distance: float = 0.0


def _point_triangle_distance(point: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Distance from one point to each triangle ``p`` (T, 3, 2); 0 inside."""
    best = np.full(len(p), np.inf)
    for k in range(3):
        a, b = p[:, k], p[:, (k + 1) % 3]
        ab = b - a
        t = np.einsum("ij,ij->i", point - a, ab) / np.einsum("ij,ij->i", ab, ab)
        proj = a + np.clip(t, 0.0, 1.0)[:, None] * ab
        best = np.minimum(best, np.linalg.norm(point - proj, axis=1))
    return best


class Locator:
    """Spatial index answering "which triangle contains this point"."""

    def __init__(self, mesh: TriMesh, cells_per_axis: Optional[int] = None):
        self.mesh = mesh
        self.basis = P1Basis.build(mesh)
        nodes = mesh.nodes
        self.lo = nodes.min(axis=0)
        self.hi = nodes.max(axis=0)
        span = np.maximum(self.hi - self.lo, 1e-300)
        if cells_per_axis is None:
            cells_per_axis = max(1, int(round(np.sqrt(mesh.n_triangles))))
        self.nc = cells_per_axis
        self.cell = span / cells_per_axis
        p = nodes[mesh.triangles]
        pad = INSIDE_TOL * max(span.max(), 1.0) * 10
        tlo = self._cell_of(p.min(axis=1) - pad)
        thi = self._cell_of(p.max(axis=1) + pad)
        buckets = [[] for _ in range(self.nc * self.nc)]
        for t in range(mesh.n_triangles):
            for i in range(tlo[t, 0], thi[t, 0] + 1):
                for j in range(tlo[t, 1], thi[t, 1] + 1):
                    buckets[i * self.nc + j].append(t)
        self.buckets = [np.array(b, dtype=np.int64) for b in buckets]
        self._tri_points = p

    def _cell_of(self, pts: np.ndarray) -> np.ndarray:
        idx = np.floor((pts - self.lo) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.nc - 1)

    def locate_many(self, points: np.ndarray):
        """Locate an array of points.

        Returns
        -------
        tri : (P,) int array
        weights : (P, 3) array
        inside : (P,) bool array
        distance : (P,) array, 0 for inside points
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        npts = len(points)
        tri = np.full(npts, -1, dtype=np.int64)
        weights = np.zeros((npts, 3))
        inside = np.zeros(npts, dtype=bool)
        dist = np.zeros(npts)
        in_box = np.all((points >= self.lo - self.cell) & (points <= self.hi + self.cell), axis=1)
        cells = self._cell_of(points)
        flat = cells[:, 0] * self.nc + cells[:, 1]
        flat[~in_box] = -1
        order = np.argsort(flat, kind="stable")
        sorted_flat = flat[order]
        starts = np.flatnonzero(np.r_[True, sorted_flat[1:] != sorted_flat[:-1]])
        ends = np.r_[starts[1:], len(order)]
        for s, e in zip(starts, ends):
            c = sorted_flat[s]
            if c < 0:
                continue
            cand = self.buckets[c]
            if len(cand) == 0:
                continue
            pidx = order[s:e]
            d = points[pidx][:, None, :] - self.basis.origin[cand][None, :, :]
            l12 = np.einsum("tij,ptj->pti", self.basis.inverse[cand], d)
            w = np.concatenate([(1.0 - l12[..., 0] - l12[..., 1])[..., None], l12], axis=2)
            ok = np.all(w >= -INSIDE_TOL, axis=2)  # (p, t), cand sorted ascending
            hit = ok.any(axis=1)
            first = np.argmax(ok, axis=1)
            sel = pidx[hit]
            tri[sel] = cand[first[hit]]
            weights[sel] = w[hit, first[hit]]
            inside[sel] = True
        for k in np.flatnonzero(~inside):
            dists = _point_triangle_distance(points[k], self._tri_points)
            t = int(np.argmin(dists))
            w = self.basis.barycentric(points[k][None, :], np.array([t]))[0]
            w = np.clip(w, 0.0, 1.0)
            w /= w.sum()
            tri[k], weights[k], dist[k] = t, w, dists[t]
        return tri, weights, inside, dist

    def locate(self, point) -> Location:
        tri, w, inside, dist = self.locate_many(np.asarray(point, dtype=np.float64)[None, :])
        return Location(int(tri[0]), w[0], bool(inside[0]), float(dist[0]))


def locate(point, mesh: TriMesh) -> Location:
    return Locator(mesh).locate(point)


def locate_brute_force(point, mesh: TriMesh) -> Optional[Location]:
    """Scan every triangle; lowest index containing the point, or None."""
    w = P1Basis.build(mesh).barycentric_all(np.asarray(point, dtype=np.float64))
    hit = np.flatnonzero(np.all(w >= -INSIDE_TOL, axis=1))
    if len(hit) == 0:
        return None
    return Location(int(hit[0]), w[hit[0]], True)


# --------------------------------------------------------------------------
# transfer


@dataclass(frozen=True)
class TransferReport:
    n_target: int
    n_outside: int
    n_far: int
    max_distance: float
    policy: str

    def to_dict(self) -> dict:
        return {
            "n_target": self.n_target,
            "n_outside": self.n_outside,
            "n_far": self.n_far,
            "max_distance": self.max_distance,
            "policy": self.policy,
        }


@dataclass(frozen=True, eq=False)
class TransferOperator:
    """Evaluation table of source P1 functions at target nodes.

    ``matrix`` is the (N_target, N_source) sparse form of the table, so a
    field with values ``U`` (d, N_source) transfers to ``U @ matrix.T``.
    """

    n_source: int
    n_target: int
    triangles: np.ndarray  # (N_target,) containing source triangle
    nodes: np.ndarray  # (N_target, 3) source node indices
    weights: np.ndarray  # (N_target, 3)
    report: TransferReport
    matrix: sparse.csr_matrix = field(repr=False, default=None)

    def __post_init__(self):
        if self.matrix is None:
            rows = np.repeat(np.arange(self.n_target), 3)
            m = sparse.csr_matrix(
                (self.weights.reshape(-1), (rows, self.nodes.reshape(-1))), shape=(self.n_target, self.n_source)
            )
            object.__setattr__(self, "matrix", m)

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        squeeze = values.ndim == 1
        v = values[None, :] if squeeze else values
        if v.shape[-1] != self.n_source:
            raise DimensionMismatch(f"field has {v.shape[-1]} nodes, transfer source has {self.n_source}")
        out = (self.matrix @ v.T).T
        return out[0] if squeeze else out


def build_transfer(
    source: TriMesh,
    target: TriMesh,
    policy: str = CLAMP,
    max_outside_fraction: float = 0.05,
    far_tolerance: float = 1e-2,
    locator: Optional[Locator] = None,
) -> TransferOperator:
    """Interpolation operator from P1 fields on ``source`` to ``target`` nodes.

    Target nodes outside the source mesh are handled by ``policy``:
    ``clamp`` takes the nearest triangle with weights clipped to [0, 1]
    and renormalized; ``barycentric-extrapolate`` keeps the raw weights of
    the nearest triangle when none is below -0.1, clamping otherwise.

    Nodes farther than ``far_tolerance`` times the source diameter from
    the source mesh count as far; a far fraction above
    ``max_outside_fraction`` raises :class:`TooManyOutside`. Near misses
    along curved boundaries are expected and only reported.
    """
    if policy not in (CLAMP, EXTRAPOLATE):
        raise ValueError(f"unknown extrapolation policy {policy!r}")
    locator = locator or Locator(source)
    pts = target.nodes
    tri, w, inside, dist = locator.locate_many(pts)
    if policy == EXTRAPOLATE:
        for k in np.flatnonzero(~inside):
            raw = locator.basis.barycentric(pts[k][None, :], tri[k:k + 1])[0]
            if raw.min() >= EXTRAPOLATE_MIN_WEIGHT:
                w[k] = raw
    diam = diameter(source.nodes[np.unique(source.triangles)]) if source.n_triangles else 0.0
    far = dist > far_tolerance * diam
    report = TransferReport(
        n_target=len(pts),
        n_outside=int((~inside).sum()),
        n_far=int(far.sum()),
        max_distance=float(dist.max()) if len(dist) else 0.0,
        policy=policy,
    )
    if len(pts) and far.mean() > max_outside_fraction:
        raise TooManyOutside(
            f"{report.n_far} of {report.n_target} target nodes lie outside the source mesh "
            f"(threshold {max_outside_fraction:.1%})"
        )
    return TransferOperator(source.n_nodes, target.n_nodes, tri, source.triangles[tri], w, report)


def apply_transfer(op: TransferOperator, f: NodalField) -> NodalField:
    if f.n_nodes != op.n_source:
        raise DimensionMismatch(f"field has {f.n_nodes} nodes, transfer source has {op.n_source}")
    return NodalField(op.apply(f.values), f.component_names, f.units)


def identity_transfer(mesh: TriMesh) -> TransferOperator:
    """Exact identity from a mesh onto itself (no point location)."""
    n = mesh.n_nodes
    first = np.full(n, -1, dtype=np.int64)
    corner = np.zeros(n, dtype=np.int64)
    # lowest triangle index containing each node and the node's corner in it
    flat = mesh.triangles.reshape(-1)
    order = np.argsort(flat, kind="stable")
    uniq, pos = np.unique(flat[order], return_index=True)
    first[uniq] = order[pos] // 3
    corner[uniq] = order[pos] % 3
    w = np.zeros((n, 3))
    w[np.arange(n), corner] = 1.0
    report = TransferReport(n, 0, 0, 0.0, CLAMP)
    return TransferOperator(n, n, first, mesh.triangles[first], w, report)


# --------------------------------------------------------------------------
# mass matrix

_ELEMENT_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def element_mass(area: float) -> np.ndarray:
    return area * _ELEMENT_MASS


def assemble_mass(mesh: TriMesh) -> sparse.csr_matrix:
    """Exact P1 mass matrix, entries the integrals of products of hat functions."""
    area = np.abs(signed_areas(mesh.nodes, mesh.triangles))
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).reshape(-1)
    cols = np.tile(tris, (1, 3)).reshape(-1)
    vals = (area[:, None, None] * _ELEMENT_MASS[None]).reshape(-1)
    n = mesh.n_nodes
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def integrate(mesh: TriMesh, values: np.ndarray, mass: Optional[sparse.csr_matrix] = None) -> np.ndarray:
    """Integral of the P1 interpolant of nodal ``values`` over the mesh."""
    m = assemble_mass(mesh) if mass is None else mass
    lumped = np.asarray(m.sum(axis=0)).reshape(-1)
    return np.asarray(values, dtype=np.float64) @ lumped


def l2_inner_brute_force(mesh: TriMesh, f: np.ndarray, g: np.ndarray) -> float:
    """Triangle-by-triangle exact quadrature of the product of two P1 fields.

    Uses the three edge-midpoint rule, which is exact for quadratics and
    therefore for the product of two linear functions on each triangle.
    """
    tris = mesh.triangles
    area = np.abs(signed_areas(mesh.nodes, tris))
    f, g = np.asarray(f, dtype=np.float64), np.asarray(g, dtype=np.float64)
    total = 0.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        fm = 0.5 * (f[tris[:, a]] + f[tris[:, b]])
        gm = 0.5 * (g[tris[:, a]] + g[tris[:, b]])
        total += float(np.sum(area * fm * gm)) / 3.0
    return total
