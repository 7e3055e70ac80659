"""Triangle geometry shared by the losses and the diagnostics."""
import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError


def _dot(x, y):
    return np.einsum("ij,ij->i", x, y)


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalised normals (length = 2 * area)."""
    tri = vertices[faces]
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_normals(vertices, faces), axis=1)


def sample_surface(vertices, faces, n: int, rng: np.random.Generator):
    """Area-uniform samples. Returns (points, face ids, barycentric weights)."""
    areas = triangle_areas(vertices, faces)
    total = areas.sum()
    if len(faces) == 0 or total <= 0:
        raise InvalidArgumentError("cannot sample an empty or zero-area mesh")
    face_ids = rng.choice(len(faces), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.column_stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2])
    points = np.einsum("nk,nkd->nd", bary, vertices[faces[face_ids]])
    return points, face_ids, bary


def closest_points_on_triangles(p, a, b, c):
    """Closest point on each triangle (a, b, c) to the matching p, with barycentrics.

    Region tests follow the usual Voronoi-region walk (vertex, edge, interior),
    evaluated for all rows at once; the first region that claims a row wins.
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64).reshape(-1, 3) for x in (p, a, b, c))
    ab, ac = b - a, c - a
    d1, d2 = _dot(ab, p - a), _dot(ac, p - a)
    d3, d4 = _dot(ab, p - b), _dot(ac, p - b)
    d5, d6 = _dot(ab, p - c), _dot(ac, p - c)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    n = len(p)
    bary = np.zeros((n, 3))
    done = np.zeros(n, dtype=bool)

    def claim(mask, values):
        m = mask & ~done
        bary[m] = values[m] if values.ndim == 2 else values
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        claim((d1 <= 0) & (d2 <= 0), np.array([1.0, 0.0, 0.0]))
        claim((d3 >= 0) & (d4 <= d3), np.array([0.0, 1.0, 0.0]))
        v = d1 / (d1 - d3)
        claim((vc <= 0) & (d1 >= 0) & (d3 <= 0), np.column_stack([1 - v, v, np.zeros(n)]))
        claim((d6 >= 0) & (d5 <= d6), np.array([0.0, 0.0, 1.0]))
        w = d2 / (d2 - d6)
        claim((vb <= 0) & (d2 >= 0) & (d6 <= 0), np.column_stack([1 - w, np.zeros(n), w]))
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        claim((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), np.column_stack([np.zeros(n), 1 - w, w]))
        denom = va + vb + vc
        v, w = vb / denom, vc / denom
        claim(np.ones(n, dtype=bool), np.column_stack([1 - v - w, v, w]))

    bad = ~np.all(np.isfinite(bary), axis=1)
    if bad.any():
        # degenerate triangle: fall back to the nearest corner
        corners = np.stack([a[bad], b[bad], c[bad]], axis=1)
        nearest = np.argmin(np.linalg.norm(corners - p[bad, None], axis=2), axis=1)
        bary[bad] = np.eye(3)[nearest]
    closest = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return closest, bary


def point_mesh_distance(points, vertices, faces, k: int = 8):
    """Exact unsigned distance from each point to a triangle mesh.

    Returns (distance, face id, barycentrics, closest point). Candidates come
    from a KD-tree over face centroids; a face closer than the current best
    must have its centroid within best + max circumradius, which is re-queried
    as a ball so the result is exact.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        raise InvalidArgumentError("distance to an empty mesh is undefined")
    tri = vertices[faces]
    centroids = tri.mean(axis=1)
    rmax = float(np.max(np.linalg.norm(tri - centroids[:, None], axis=2)))
    tree = cKDTree(centroids)
    k = min(k, len(faces))
    dk, ik = tree.query(points, k=k)
    dk = dk.reshape(len(points), k)
    ik = ik.reshape(len(points), k)

    def exact(owner, fids):
        c, bary = closest_points_on_triangles(points[owner], *(tri[fids, m] for m in range(3)))
        return np.linalg.norm(points[owner] - c, axis=1), bary, c

    owner = np.repeat(np.arange(len(points)), k)
    d, bary, closest = exact(owner, ik.ravel())
    d = d.reshape(-1, k)
    pick = np.argmin(d, axis=1)
    rows = np.arange(len(points))
    best = d[rows, pick]
    face = ik[rows, pick]
    bary = bary.reshape(-1, k, 3)[rows, pick]
    closest = closest.reshape(-1, k, 3)[rows, pick]

    need = np.flatnonzero(dk[:, -1] < best + rmax) if k < len(faces) else np.zeros(0, dtype=np.int64)
    if len(need):
        balls = tree.query_ball_point(points[need], best[need] + rmax)
        lens = np.array([len(x) for x in balls])
        flat = np.concatenate([np.asarray(x, dtype=np.int64) for x in balls])
        owner = np.repeat(need, lens)
        d2, bary2, closest2 = exact(owner, flat)
        order = np.lexsort((d2, owner))
        first = order[np.r_[True, owner[order][1:] != owner[order][:-1]]]
        winners = owner[first]
        better = d2[first] < best[winners]
        winners, first = winners[better], first[better]
        best[winners] = d2[first]
        face[winners] = flat[first]
        bary[winners] = bary2[first]
        closest[winners] = closest2[first]
    return best, face, bary, closest


def nearest_points(queries, targets):
    """Distance and index of the nearest target point for each query."""
    tree = cKDTree(np.asarray(targets, dtype=np.float64).reshape(-1, 3))
    return tree.query(np.asarray(queries, dtype=np.float64).reshape(-1, 3), k=1)
