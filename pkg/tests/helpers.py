"""Small meshes and brute-force oracles shared by the tests."""

import numpy as np

from mmgp.mesh import TriMesh


def unit_triangle():
    return TriMesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


def unit_square():
    return TriMesh([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], [[0, 1, 2], [0, 2, 3]])


def hexagon_fan(tagged=True):
    ang = np.pi / 3 * np.arange(6)
    nodes = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    tris = [[0, 1 + i, 1 + (i + 1) % 6] for i in range(6)]
    tags = {"outer": np.arange(1, 7)} if tagged else {}
    feats = {"theta0": 1} if tagged else {}
    return TriMesh(nodes, tris, tags, feats)


def grid_square(n, flip=False, jitter=0.0, seed=0, lo=0.0, hi=1.0):
    """Structured triangulation of a square with ``n`` cells per side.

    Interior nodes can be jittered; boundary nodes stay on the edges.
    """
    t = np.linspace(lo, hi, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    if jitter:
        rng = np.random.default_rng(seed)
        inner = (X.ravel() > lo) & (X.ravel() < hi) & (Y.ravel() > lo) & (Y.ravel() < hi)
        nodes[inner] += jitter * (hi - lo) / n * rng.uniform(-1, 1, (inner.sum(), 2))
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            if flip:
                tris += [[a, b, d], [b, c, d]]
            else:
                tris += [[a, b, c], [a, c, d]]
    return TriMesh(nodes, np.array(tris))


def triangle_area(p):
    """Signed area of triangles given as (T, 3, 2) vertex arrays."""
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def brute_locate(point, mesh, tol=1e-12):
    """Lowest-index triangle whose barycentric weights are all >= -tol.

    Weights are sub-triangle area ratios, computed for every triangle.
    """
    p = mesh.nodes[mesh.triangles]
    q = np.broadcast_to(np.asarray(point, dtype=float), (len(p), 2))
    total = triangle_area(p)
    w = np.empty((len(p), 3))
    for k in range(3):
        sub = p.copy()
        sub[:, k] = q
        w[:, k] = triangle_area(sub) / total
    hit = np.flatnonzero(np.all(w >= -tol, axis=1))
    if len(hit) == 0:
        return None
    return int(hit[0]), w[hit[0]]


def brute_l2_inner(mesh, f, g):
    """Per-triangle quadrature of the product of two P1 fields.

    Seven-point symmetric rule (degree 5), evaluated from the affine
    interpolant at each quadrature point.
    """
    s15 = np.sqrt(15.0)
    w = np.array([9 / 40] + [(155 + s15) / 1200] * 3 + [(155 - s15) / 1200] * 3)
    a1, b1 = (9 - 2 * s15) / 21, (6 + s15) / 21
    a2, b2 = (9 + 2 * s15) / 21, (6 - s15) / 21
    bary = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
    ])
    total = 0.0
    for tri in mesh.triangles:
        area = abs(triangle_area(mesh.nodes[tri][None])[0])
        fv = bary @ np.asarray(f)[tri]
        gv = bary @ np.asarray(g)[tri]
        total += area * float(np.sum(w * fv * gv))
    return total


def brute_l2_gram(mesh, F):
    """Gram matrix of the rows of ``F`` (k, N) under the L2 product, by quadrature.

    Same seven-point rule as :func:`brute_l2_inner`, vectorized over triangles.
    """
    s15 = np.sqrt(15.0)
    w = np.array([9 / 40] + [(155 + s15) / 1200] * 3 + [(155 - s15) / 1200] * 3)
    a1, b1 = (9 - 2 * s15) / 21, (6 + s15) / 21
    a2, b2 = (9 + 2 * s15) / 21, (6 - s15) / 21
    bary = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
    ])
    area = np.abs(triangle_area(mesh.nodes[mesh.triangles]))
    vals = np.einsum("qv,ktv->ktq", bary, np.asarray(F)[:, mesh.triangles])
    return np.einsum("t,q,itq,jtq->ij", area, w, vals, vals)


# pass/fail lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []
