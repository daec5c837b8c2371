"""Deterministic mesh morphing onto a reference shape.

Two methods, both keeping connectivity and node identity:

* ``tutte_disk``: boundary onto the unit circle with the sample's relative
  node spacing, interior nodes at the average of their neighbors.
* ``rbf_morph``: prescribed boundary displacements spread to the interior
  with the compactly supported radial function (1 - r)^4 (4 r + 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import (
    AnchorMismatch,
    CurveOrientationMismatch,
    InvertedElements,
    MeshError,
    MultipleBoundaryComponents,
    SchemaError,
    SolveFailure,
    ValidationError,
)
from .mesh import TriMesh, adjacency, boundary_edges, boundary_loops, component_count, diameter, signed_areas, validate

SOLVE_TOL = 1e-10
TUTTE = "tutte"
RBF = "rbf"


@dataclass(frozen=True)
class MappedCurve:
    """A tagged boundary curve mapped onto its counterpart.

    ``target`` is an explicit polyline; when None the reference mesh's
    curve with the same tag is used.
    """

    target: Optional[np.ndarray] = None
    preserve_density: bool = True


@dataclass(frozen=True)
class FeatureCorrespondence:
    """Matching rules between a sample's features and the reference shape.

    ``anchor_points`` maps a feature-point name to its target coordinate;
    None means "the same feature on the reference mesh" (for the disk, the
    first anchor then goes to (0, 1)).
    """

    fixed_tags: FrozenSet[str] = frozenset()
    anchor_points: Dict[str, Optional[Tuple[float, float]]] = field(default_factory=dict)
    mapped_curves: Dict[str, MappedCurve] = field(default_factory=dict)

    def check(self, mesh: TriMesh):
        for name in self.fixed_tags:
            if name not in mesh.boundary_tags:
                raise AnchorMismatch(f"fixed tag {name!r} is not a boundary tag of the mesh")
        for name in self.mapped_curves:
            if name not in mesh.boundary_tags:
                raise AnchorMismatch(f"mapped curve {name!r} is not a boundary tag of the mesh")
        for name in self.anchor_points:
            if name not in mesh.feature_points:
                raise AnchorMismatch(f"anchor {name!r} is not a feature point of the mesh")

    def to_dict(self) -> dict:
        return {
            "fixed_tags": sorted(self.fixed_tags),
            "anchor_points": {k: (None if v is None else [float(v[0]), float(v[1])]) for k, v in self.anchor_points.items()},
            "mapped_curves": {
                k: {
                    "target": None if c.target is None else np.asarray(c.target).tolist(),
                    "preserve_density": c.preserve_density,
                }
                for k, c in self.mapped_curves.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureCorrespondence":
        if not isinstance(doc, dict):
            raise SchemaError("correspondence must be a JSON object")
        unknown = set(doc) - {"fixed_tags", "anchor_points", "mapped_curves"}
        if unknown:
            raise SchemaError(f"unknown correspondence keys: {sorted(unknown)}")
        anchors = {}
        for k, v in doc.get("anchor_points", {}).items():
            if v is not None and (not isinstance(v, (list, tuple)) or len(v) != 2):
                raise SchemaError(f"anchor {k!r} target must be [x, y] or null")
            anchors[k] = None if v is None else (float(v[0]), float(v[1]))
        curves = {}
        for k, v in doc.get("mapped_curves", {}).items():
            v = v or {}
            target = v.get("target")
            curves[k] = MappedCurve(
                None if target is None else np.asarray(target, dtype=np.float64).reshape(-1, 2),
                bool(v.get("preserve_density", True)),
            )
        return cls(frozenset(doc.get("fixed_tags", [])), anchors, curves)

    @classmethod
    def load(cls, path) -> "FeatureCorrespondence":
        from .io import load_json

        return cls.from_dict(load_json(path))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


@dataclass(frozen=True)
class MorphQuality:
    min_signed_area: float
    num_inverted: int
    max_boundary_residual: float
    solve_residual: float

    def to_dict(self) -> dict:
        return {
            "min_signed_area": self.min_signed_area,
            "num_inverted": self.num_inverted,
            "max_boundary_residual": self.max_boundary_residual,
            "solve_residual": self.solve_residual,
        }


@dataclass(frozen=True, eq=False)
class MorphResult:
    mesh: TriMesh
    quality: MorphQuality

    @property
    def morphed_nodes(self) -> np.ndarray:
        return self.mesh.nodes


@dataclass(frozen=True)
class BoundaryTargets:
    nodes: np.ndarray
    targets: np.ndarray

    def as_dict(self) -> Dict[int, np.ndarray]:
        return {int(i): t for i, t in zip(self.nodes, self.targets)}


def _require_valid(mesh: TriMesh):
    report = validate(mesh)
    if not report.ok:
        report.raise_if_invalid()


def _quality(mesh: TriMesh, nodes: np.ndarray, boundary_residual: float, solve_residual: float) -> MorphQuality:
    area = signed_areas(nodes, mesh.triangles)
    return MorphQuality(
        min_signed_area=float(area.min()) if len(area) else 0.0,
        num_inverted=int(np.sum(area <= 0.0)),
        max_boundary_residual=float(boundary_residual),
        solve_residual=float(solve_residual),
    )


# --------------------------------------------------------------------------
# Tutte


def disk_boundary_angles(mesh: TriMesh, loop: np.ndarray, start_angle: float) -> np.ndarray:
    """Angles of loop nodes on the unit circle, spaced like the mesh boundary."""
    pts = mesh.nodes[loop]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg[:-1])]) / seg.sum()
    return start_angle + 2.0 * np.pi * s


def tutte_disk(mesh: TriMesh, corr: FeatureCorrespondence) -> MorphResult:
    """Tutte barycentric mapping of a disk-topology mesh onto the unit disk.

    The first anchor of ``corr`` goes to the angle of its target (default
    (0, 1)); the other boundary nodes follow counterclockwise at angles
    proportional to their arc length along the original boundary.
    """
    _require_valid(mesh)
    corr.check(mesh)
    loops = boundary_loops(mesh)
    if len(loops) != 1:
        raise MultipleBoundaryComponents(f"Tutte mapping needs one boundary component, mesh has {len(loops)}")
    if component_count(mesh) != 1:
        raise MeshError("Tutte mapping needs a connected mesh")
    if not corr.anchor_points:
        raise AnchorMismatch("Tutte mapping needs at least one anchor point")
    name, target = next(iter(corr.anchor_points.items()))
    anchor = mesh.feature_points[name]
    loop = loops[0]
    where = np.flatnonzero(loop == anchor)
    if len(where) == 0:
        raise AnchorMismatch(f"anchor {name!r} (node {anchor}) is not on the boundary")
    loop = np.roll(loop, -int(where[0]))
    start = np.pi / 2 if target is None else float(np.arctan2(target[1], target[0]))
    theta = disk_boundary_angles(mesh, loop, start)

    n = mesh.n_nodes
    out = np.zeros((n, 2))
    out[loop] = np.column_stack([np.cos(theta), np.sin(theta)])

    is_b = np.zeros(n, dtype=bool)
    is_b[loop] = True
    interior = np.flatnonzero(~is_b)
    residual = 0.0
    if len(interior):
        adj = adjacency(mesh)
        A = adj.matrix.tocsr()
        deg = adj.degrees.astype(np.float64)
        A_ii = A[interior][:, interior]
        A_ib = A[interior][:, loop]
        # rows scaled by d(I): symmetric positive definite restricted Laplacian
        L = (sparse.diags(deg[interior]) - A_ii).tocsc()
        rhs = A_ib @ out[loop]
        try:
            x = spsolve(L, rhs)
        except Exception as exc:  # singular factorization
            raise SolveFailure(f"Tutte system could not be solved: {exc}") from None
        x = np.asarray(x).reshape(-1, 2)
        if not np.all(np.isfinite(x)):
            raise SolveFailure("Tutte system is singular")
        r = rhs - L @ x
        x = x + np.asarray(spsolve(L, r)).reshape(-1, 2)  # one refinement step
        residual = float(np.linalg.norm(rhs - L @ x) / max(np.linalg.norm(rhs), np.finfo(float).tiny))
        if residual > SOLVE_TOL:
            raise SolveFailure(f"Tutte solve residual {residual:.3e} exceeds {SOLVE_TOL:g}")
        out[interior] = x
    bres = float(np.max(np.abs(np.linalg.norm(out[loop], axis=1) - 1.0)))
    q = _quality(mesh, out, bres, residual)
    if q.num_inverted:
        raise InvertedElements(f"Tutte mapping produced {q.num_inverted} inverted triangles")
    return MorphResult(mesh.with_nodes(out), q)


# --------------------------------------------------------------------------
# RBF


def wendland(xi):
    """Compactly supported radial function (1 - xi)^4 (4 xi + 1), zero for xi >= 1."""
    xi = np.asarray(xi, dtype=np.float64)
    t = np.clip(1.0 - xi, 0.0, None)
    return t**4 * (4.0 * xi + 1.0)


def default_support_radius(mesh: TriMesh) -> float:
    return 0.5 * diameter(mesh.nodes)


def rbf_morph(
    mesh: TriMesh,
    corr: FeatureCorrespondence,
    target_boundary: BoundaryTargets,
    support_radius: Optional[float] = None,
    polynomial: str = "constant",
) -> MorphResult:
    """Spread boundary displacements to all nodes with a compact RBF.

    The interpolation is done on displacements (target minus source) and
    added to the source positions, so the identity morph is exact. With
    ``polynomial="constant"`` the system is augmented with a constant term
    and rigid translations are reproduced everywhere; ``"none"`` is the
    plain kernel expansion.

    Inverted triangles are reported in ``quality`` and are not an error.
    """
    _require_valid(mesh)
    corr.check(mesh)
    if polynomial not in ("constant", "none"):
        raise ValueError(f"unknown polynomial term {polynomial!r}")
    bnodes = np.asarray(target_boundary.nodes, dtype=np.int64)
    targets = np.asarray(target_boundary.targets, dtype=np.float64).reshape(-1, 2)
    required = np.unique(boundary_edges(mesh).reshape(-1))
    missing = np.setdiff1d(required, bnodes)
    if len(missing):
        raise ValidationError(f"boundary nodes without target: {missing[:10].tolist()}")
    r = default_support_radius(mesh) if support_radius is None else float(support_radius)
    if not r > 0:
        raise ValidationError("support radius must be positive")

    xb = mesh.nodes[bnodes]
    disp = targets - xb
    nb = len(bnodes)
    M = wendland(np.linalg.norm(xb[:, None, :] - xb[None, :, :], axis=2) / r)
    if polynomial == "constant":
        ones = np.ones((nb, 1))
        system = np.block([[M, ones], [ones.T, np.zeros((1, 1))]])
        rhs = np.vstack([disp, np.zeros((1, 2))])
    else:
        system, rhs = M, disp
    try:
        lu = scipy.linalg.lu_factor(system, check_finite=True)
        coef = scipy.linalg.lu_solve(lu, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolveFailure(f"RBF system is singular ({exc}); increase the support radius") from None
    if not np.all(np.isfinite(coef)):
        raise SolveFailure("RBF system is singular; increase the support radius")
    solve_res = float(np.linalg.norm(system @ coef - rhs) / max(np.linalg.norm(rhs), 1.0))

    def expand(points):
        phi = wendland(np.linalg.norm(points[:, None, :] - xb[None, :, :], axis=2) / r)
        d = phi @ coef[:nb]
        if polynomial == "constant":
            d = d + coef[nb]
        return d

    out = mesh.nodes + expand(mesh.nodes)
    bres = float(np.max(np.linalg.norm(out[bnodes] - targets, axis=1))) if nb else 0.0
    scale = max(1.0, float(np.abs(targets).max()) if nb else 1.0)
    if bres > SOLVE_TOL * scale:
        raise SolveFailure(
            f"RBF interpolation misses boundary targets by {bres:.3e}; the system is ill-conditioned, "
            "increase the support radius"
        )
    out[bnodes] = targets
    return MorphResult(mesh.with_nodes(out), _quality(mesh, out, bres, solve_res))


# --------------------------------------------------------------------------
# boundary targets


def _closed(mesh: TriMesh, seq: np.ndarray) -> bool:
    """True when a tag sequence covers a whole boundary loop."""
    if len(seq) < 3:
        return False
    for loop in boundary_loops(mesh):
        if len(loop) == len(seq) and set(loop.tolist()) == set(seq.tolist()):
            return True
    return False


def _orientation(mesh: TriMesh, seq: np.ndarray) -> int:
    """+1 if the sequence runs with the domain on its left, -1 otherwise."""
    directed = {(int(a), int(b)) for a, b in boundary_edges(mesh)}
    fwd = sum((int(a), int(b)) in directed for a, b in zip(seq[:-1], seq[1:]))
    return 1 if 2 * fwd >= len(seq) - 1 else -1


def _arc_fractions(points: np.ndarray, preserve_density: bool) -> np.ndarray:
    if not preserve_density:
        return np.linspace(0.0, 1.0, len(points))
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s / s[-1] if s[-1] > 0 else np.linspace(0.0, 1.0, len(points))


def point_at_fraction(polyline: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    """Points at given normalized arc lengths along a polyline."""
    s = _arc_fractions(polyline, True)
    f = np.clip(np.asarray(fractions, dtype=np.float64), 0.0, 1.0)
    return np.column_stack([np.interp(f, s, polyline[:, 0]), np.interp(f, s, polyline[:, 1])])


def _curve_targets(mesh, reference, name, curve: MappedCurve, anchor_names, out: Dict[int, np.ndarray]):
    seq = mesh.boundary_tags[name]
    if curve.target is not None:
        pts = mesh.nodes[seq]
        closed = _closed(mesh, seq)
        if closed:
            pts = np.vstack([pts, pts[:1]])
        frac = _arc_fractions(pts, curve.preserve_density)
        tgt = point_at_fraction(np.asarray(curve.target, dtype=np.float64), frac)
        for node, t in zip(seq, tgt):
            out[int(node)] = t
        return
    if name not in reference.boundary_tags:
        raise AnchorMismatch(f"reference mesh has no boundary tag {name!r}")
    ref = reference.boundary_tags[name]
    closed = _closed(mesh, seq)
    if closed != _closed(reference, ref):
        raise AnchorMismatch(f"curve {name!r} is closed on one mesh and open on the other")
    if _orientation(mesh, seq) != _orientation(reference, ref):
        raise CurveOrientationMismatch(f"curve {name!r} runs in opposite directions on the two meshes")

    on_curve = [a for a in anchor_names if a in mesh.feature_points and mesh.feature_points[a] in set(seq.tolist())]
    pos_s, pos_r = [], []
    ref_set = {int(v): i for i, v in enumerate(ref)}
    seq_set = {int(v): i for i, v in enumerate(seq)}
    for a in on_curve:
        rv = reference.feature_points.get(a)
        if rv is None or int(rv) not in ref_set:
            raise AnchorMismatch(f"anchor {a!r} lies on curve {name!r} of the mesh but not of the reference")
        pos_s.append(seq_set[mesh.feature_points[a]])
        pos_r.append(ref_set[int(rv)])
    order = np.argsort(pos_s, kind="stable")
    pos_s = [pos_s[i] for i in order]
    pos_r = [pos_r[i] for i in order]

    if closed:
        if not pos_s:
            raise AnchorMismatch(f"closed curve {name!r} needs an anchor to fix its starting point")
        shift_s, shift_r = pos_s[0], pos_r[0]
        seq = np.roll(seq, -shift_s)
        ref = np.roll(ref, -shift_r)
        pos_s = [(p - shift_s) % len(seq) for p in pos_s]
        pos_r = [(p - shift_r) % len(ref) for p in pos_r]
        seq = np.append(seq, seq[0])
        ref = np.append(ref, ref[0])
        breaks_s = pos_s + [len(seq) - 1]
        breaks_r = pos_r + [len(ref) - 1]
    else:
        breaks_s = sorted(set([0] + pos_s + [len(seq) - 1]))
        breaks_r = [0] + pos_r + [len(ref) - 1]
        breaks_r = [b for i, b in enumerate(breaks_r) if i == 0 or b != breaks_r[i - 1]]
        if len(breaks_s) != len(breaks_r):
            raise AnchorMismatch(f"anchors on curve {name!r} cannot be matched segment by segment")
    if any(b2 <= b1 for b1, b2 in zip(breaks_r[:-1], breaks_r[1:])):
        raise CurveOrientationMismatch(f"anchors on curve {name!r} appear in a different order on the reference")

    for (s0, s1), (r0, r1) in zip(zip(breaks_s[:-1], breaks_s[1:]), zip(breaks_r[:-1], breaks_r[1:])):
        src = mesh.nodes[seq[s0:s1 + 1]]
        dst = reference.nodes[ref[r0:r1 + 1]]
        frac = _arc_fractions(src, curve.preserve_density)
        for node, t in zip(seq[s0:s1 + 1], point_at_fraction(dst, frac)):
            out[int(node)] = t


def build_boundary_targets(mesh: TriMesh, reference: TriMesh, corr: FeatureCorrespondence) -> BoundaryTargets:
    """Target position of every boundary node of ``mesh`` on ``reference``.

    Mapped curves are split at the anchors lying on them and each piece is
    placed on the matching reference piece at equal normalized arc length.
    Anchors go to their targets and nodes of fixed tags stay in place.
    """
    corr.check(mesh)
    for a in corr.anchor_points:
        if corr.anchor_points[a] is None and a not in reference.feature_points:
            raise AnchorMismatch(f"anchor {a!r} missing on the reference mesh")
    out: Dict[int, np.ndarray] = {}
    for name, curve in corr.mapped_curves.items():
        _curve_targets(mesh, reference, name, curve, list(corr.anchor_points), out)
    for a, tgt in corr.anchor_points.items():
        node = mesh.feature_points[a]
        out[node] = reference.nodes[reference.feature_points[a]].copy() if tgt is None else np.asarray(tgt, dtype=np.float64)
    for name in corr.fixed_tags:
        for node in mesh.boundary_tags[name]:
            out[int(node)] = mesh.nodes[node].copy()
    required = np.unique(boundary_edges(mesh).reshape(-1))
    missing = [int(v) for v in required if int(v) not in out]
    if missing:
        raise ValidationError(f"boundary nodes not covered by any fixed tag, anchor or mapped curve: {missing[:10]}")
    nodes = np.array(sorted(out), dtype=np.int64)
    return BoundaryTargets(nodes, np.array([out[int(i)] for i in nodes]).reshape(-1, 2))


def morph(mesh: TriMesh, method: str, corr: FeatureCorrespondence, reference: Optional[TriMesh] = None,
          support_radius: Optional[float] = None) -> MorphResult:
    if method == TUTTE:
        return tutte_disk(mesh, corr)
    if method == RBF:
        if reference is None:
            raise ValidationError("RBF morphing needs a reference mesh")
        targets = build_boundary_targets(mesh, reference, corr)
        return rbf_morph(mesh, corr, targets, support_radius=support_radius)
    raise ValidationError(f"unknown morphing method {method!r}")
