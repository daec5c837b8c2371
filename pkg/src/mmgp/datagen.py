"""Synthetic dataset: perturbed disks with analytic nodal fields.

Each shape is the star domain ``rho(theta) = 1 + sum_k a_k cos(k theta + phi_k)``.
Its mesh is a ring triangulation of the unit disk (Delaunay of concentric
rings of nodes, jittered) pushed radially onto the star domain, which keeps
every triangle positively oriented. The boundary is tagged ``outer`` in
counterclockwise order starting at the ``theta0`` node on the positive x
axis.

Fields per node: ``u1 = exp(mu1 x) sin(mu1 y)`` and ``u2 = mu2 (x^2 - y^2)``.
Scalars: ``w1`` is the integral of the P1 interpolant of ``u1``, ``w2`` the
largest boundary value of ``u1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import Delaunay
from scipy.stats import qmc

from .dataset import Dataset, SampleRecord, Schema
from .errors import MeshingFailure, ValidationError
from .fe import assemble_mass
from .mesh import NodalField, TriMesh, min_angles, signed_areas

log = logging.getLogger(__name__)

MU_RANGE = (0.5, 2.0)
MIN_ANGLE = 15.0
MAX_AMPLITUDE = 0.15
SCHEMA = Schema()


@dataclass(frozen=True)
class ShapeSpec:
    fourier_amplitudes: Tuple[float, ...]
    mesh_size: float
    seed: int
    phases: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        a = tuple(float(x) for x in self.fourier_amplitudes)
        if any(abs(x) > MAX_AMPLITUDE for x in a):
            raise ValidationError(f"Fourier amplitudes must satisfy |a_k| <= {MAX_AMPLITUDE}")
        if not self.mesh_size > 0:
            raise ValidationError("mesh size must be positive")
        object.__setattr__(self, "fourier_amplitudes", a)
        if self.phases is None:
            rng = np.random.default_rng(self.seed)
            object.__setattr__(self, "phases", tuple(rng.uniform(0.0, 2 * np.pi, len(a)).tolist()))
        elif len(self.phases) != len(a):
            raise ValidationError("one phase per amplitude is required")
        theta = np.linspace(0.0, 2 * np.pi, 2048, endpoint=False)
        rho = self.radius(theta)
        if rho.min() < 0.5 or rho.max() > 1.5:
            raise ValidationError("boundary radius leaves [0.5, 1.5]")

    def radius(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        rho = np.ones_like(theta)
        for k, (a, phi) in enumerate(zip(self.fourier_amplitudes, self.phases), start=1):
            rho = rho + a * np.cos(k * theta + phi)
        return rho


def disk_mesh(h: float, seed: int, jitter: float = 0.1) -> TriMesh:
    """Ring triangulation of the unit disk with target edge length ``h``.

    Inner rings get a random rotation and radial jitter of ``jitter * h``;
    the outer ring is exact and starts at angle 0.
    """
    rng = np.random.default_rng(seed)
    n_rings = max(2, int(round(1.0 / h)))
    dr = 1.0 / n_rings
    pts = [np.zeros((1, 2))]
    for k in range(1, n_rings + 1):
        r = k * dr
        n = max(6, int(round(2 * np.pi * r / dr)))
        if k == n_rings:
            ang = 2 * np.pi * np.arange(n) / n
            rad = np.full(n, r)
        else:
            ang = rng.uniform(0.0, 2 * np.pi / n) + 2 * np.pi * np.arange(n) / n
            rad = r + jitter * dr * rng.uniform(-1.0, 1.0, n)
        pts.append(np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]))
    nodes = np.vstack(pts)
    n_outer = len(pts[-1])
    tri = Delaunay(nodes).simplices.astype(np.int64)
    area = signed_areas(nodes, tri)
    tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
    tri = tri[np.lexsort(tri.T[::-1])]
    outer = np.arange(len(nodes) - n_outer, len(nodes))
    return TriMesh(nodes, tri, {"outer": outer}, {"theta0": int(outer[0])})


def shape_mesh(spec: ShapeSpec) -> TriMesh:
    disk = disk_mesh(spec.mesh_size, spec.seed)
    x = disk.nodes
    theta = np.arctan2(x[:, 1], x[:, 0])
    nodes = x * spec.radius(theta)[:, None]
    mesh = disk.with_nodes(nodes)
    worst = float(min_angles(mesh.nodes, mesh.triangles).min())
    if worst < MIN_ANGLE or signed_areas(mesh.nodes, mesh.triangles).min() <= 0:
        raise MeshingFailure(f"mesh quality too low: minimum angle {worst:.1f} deg < {MIN_ANGLE} deg")
    return mesh


def analytic_fields(nodes: np.ndarray, mu) -> np.ndarray:
    x, y = nodes[:, 0], nodes[:, 1]
    return np.vstack([np.exp(mu[0] * x) * np.sin(mu[0] * y), mu[1] * (x * x - y * y)])


def sample_from_mesh(mesh: TriMesh, mu, rid: str = "", seed: Optional[int] = None) -> SampleRecord:
    mu = np.asarray(mu, dtype=np.float64)
    U = analytic_fields(mesh.nodes, mu)
    w1 = float(np.asarray(assemble_mass(mesh).sum(axis=0)).reshape(-1) @ U[0])
    w2 = float(U[0, mesh.boundary_tags["outer"]].max())
    return SampleRecord(mesh, mu, NodalField(U, SCHEMA.field_components), [w1, w2], rid, seed)


def generate_sample(spec: ShapeSpec, mu, rid: str = "") -> SampleRecord:
    return sample_from_mesh(shape_mesh(spec), mu, rid, spec.seed)


def random_shape(rng: np.random.Generator, seed: int, mesh_size: float, n_modes: int = 3,
                 amplitude: float = 0.1) -> ShapeSpec:
    a = rng.uniform(-amplitude, amplitude, n_modes)
    phases = rng.uniform(0.0, 2 * np.pi, n_modes)
    h = mesh_size * rng.uniform(0.8, 1.2)
    return ShapeSpec(tuple(a.tolist()), h, seed, tuple(phases.tolist()))


def generate_dataset(
    n: int,
    seed: int,
    split: Sequence[float] = (5.0, 1.0),
    mesh_size: float = 0.08,
    n_modes: int = 3,
    amplitude: float = 0.1,
    max_retries: int = 10,
) -> Tuple[Dataset, Dataset]:
    """Reproducible train/test datasets of ``n`` samples.

    ``split`` gives the relative sizes of the train and test parts. Inputs
    ``mu`` come from a Latin hypercube over [0.5, 2]^2; every sample has its
    own shape seed and its mesh size jittered by up to 20%.
    """
    if n < 4:
        raise ValidationError("at least 4 samples are needed")
    tr, te = (float(s) for s in split)
    if tr <= 0 or te <= 0:
        raise ValidationError("split weights must be positive")
    n_train = int(round(n * tr / (tr + te)))
    n_train = min(max(n_train, 2), n - 1)
    rng = np.random.default_rng(seed)
    lo, hi = MU_RANGE
    mus = lo + (hi - lo) * qmc.LatinHypercube(d=2, seed=rng).random(n)
    seeds: list = []
    while len(seeds) < n:
        s = int(rng.integers(0, 2**31 - 1))
        if s not in seeds:
            seeds.append(s)
    records = []
    for i in range(n):
        srng = np.random.default_rng(seeds[i])
        for attempt in range(max_retries):
            spec = random_shape(srng, seeds[i], mesh_size, n_modes, amplitude)
            try:
                records.append(generate_sample(spec, mus[i], f"sample_{i:04d}"))
                break
            except MeshingFailure as exc:
                log.info("sample %d attempt %d rejected: %s", i, attempt, exc)
        else:
            raise MeshingFailure(f"sample {i}: no acceptable mesh after {max_retries} attempts")
    return Dataset(records[:n_train], SCHEMA), Dataset(records[n_train:], SCHEMA)
