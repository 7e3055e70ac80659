"""Mesh diagnostics: generalized winding numbers and manifoldness checks."""
import logging
import math
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidArgumentError
from .geometry import face_normals, point_mesh_distance, sample_surface, triangle_areas
from .utils import chunk_ranges, parallel_map

logger = logging.getLogger(__name__)

ON_SURFACE = 1e-9
PERTURBATION = 1e-7
DEGENERATE_AREA = 1e-14
# queries x faces per block in the direct summation
BLOCK = 1 << 21


class WindingSample(NamedTuple):
    query_point: np.ndarray
    winding: float
    perturbed: bool
    distance: float


def _mesh_arrays(mesh):
    if isinstance(mesh, tuple):
        vertices, faces = mesh
    else:
        vertices, faces = mesh.vertices, mesh.faces
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


# -------------------------
# WINDING NUMBER
# -------------------------
def _solid_angle_sum(queries: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Sum over triangles of the signed solid angle at each query (Van Oosterom-Strackee)."""
    a = tri[None, :, 0] - queries[:, None]
    b = tri[None, :, 1] - queries[:, None]
    c = tri[None, :, 2] - queries[:, None]
    la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
    det = np.einsum("qfi,qfi->qf", a, np.cross(b, c))
    denom = (
        la * lb * lc
        + np.einsum("qfi,qfi->qf", a, b) * lc
        + np.einsum("qfi,qfi->qf", b, c) * la
        + np.einsum("qfi,qfi->qf", c, a) * lb
    )
    return 2.0 * np.arctan2(det, denom).sum(axis=1)


def _winding_block(queries: np.ndarray, tri: np.ndarray) -> np.ndarray:
    step = max(1, BLOCK // max(len(tri), 1))
    out = np.empty(len(queries))
    for start in range(0, len(queries), step):
        out[start : start + step] = _solid_angle_sum(queries[start : start + step], tri) / (4.0 * math.pi)
    return out


def winding_numbers(mesh, queries, threads: int = 1):
    """Generalized winding number at each query.

    Queries closer than 1e-9 to the surface are moved 1e-7 along the normal of
    the nearest face before evaluation and flagged. Returns (winding,
    perturbed, distance).
    """
    vertices, faces = _mesh_arrays(mesh)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(faces) == 0:
        return np.zeros(len(queries)), np.zeros(len(queries), dtype=bool), np.full(len(queries), np.inf)
    distance, nearest_face, _, _ = point_mesh_distance(queries, vertices, faces)
    perturbed = distance < ON_SURFACE
    if perturbed.any():
        normals = face_normals(vertices, faces[nearest_face[perturbed]])
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)
        queries = queries.copy()
        queries[perturbed] += PERTURBATION * normals
        logger.warning("winding: %d on-surface queries perturbed by %g", int(perturbed.sum()), PERTURBATION)
    tri = vertices[faces]
    chunks = chunk_ranges(len(queries), threads, min_chunk=64)
    parts = parallel_map(lambda r: _winding_block(queries[r[0] : r[1]], tri), chunks, threads)
    winding = np.concatenate(parts) if parts else np.zeros(0)
    return winding, perturbed, distance


def winding_number(mesh, query) -> WindingSample:
    w, perturbed, distance = winding_numbers(mesh, np.asarray(query, dtype=np.float64).reshape(1, 3))
    return WindingSample(np.asarray(query, dtype=np.float64).reshape(3), float(w[0]), bool(perturbed[0]), float(distance[0]))


def distance_to_surface(mesh, points) -> np.ndarray:
    vertices, faces = _mesh_arrays(mesh)
    return point_mesh_distance(points, vertices, faces)[0]


def sample_band(mesh, n: int, band: float, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform surface samples pushed along the face normal by U(-band, band)."""
    if band < 0:
        raise InvalidArgumentError("band must be >= 0")
    vertices, faces = _mesh_arrays(mesh)
    points, face_ids, _ = sample_surface(vertices, faces, n, rng)
    normals = face_normals(vertices, faces)[face_ids]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return points + rng.uniform(-band, band, size=(n, 1)) * normals


# -------------------------
# MANIFOLDNESS
# -------------------------
def _face_sides(faces: np.ndarray):
    directed = faces[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    undirected = np.sort(directed, axis=1)
    edges, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    return directed, edges, inverse.reshape(-1), counts


def boundary_loops(faces) -> list[list[int]]:
    """Vertex sequences of the closed boundary polylines, each following face orientation."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        return []
    directed, _, inverse, counts = _face_sides(faces)
    boundary = directed[counts[inverse] == 1]
    outgoing = {}
    for a, b in boundary.tolist():
        outgoing.setdefault(a, []).append(b)
    loops = []
    for start in sorted(outgoing):
        while outgoing.get(start):
            loop = [start]
            current = outgoing[start].pop(0)
            while current != start and outgoing.get(current):
                loop.append(current)
                current = outgoing[current].pop(0)
            loops.append(loop)
    return loops


def _non_manifold_vertices(faces, inverse, counts, n_vertices) -> np.ndarray:
    """Vertices whose incident faces do not form one edge-connected fan."""
    nf = len(faces)
    corner = np.arange(3 * nf).reshape(nf, 3)
    # side k of a face runs from corner k to corner (k + 1) % 3
    side_start = corner.reshape(-1)
    side_end = corner[:, [1, 2, 0]].reshape(-1)
    pairs = []
    manifold_edge = np.flatnonzero(counts == 2)
    sides = np.argsort(inverse, kind="stable")
    grouped = inverse[sides]
    first = np.searchsorted(grouped, manifold_edge)
    s0, s1 = sides[first], sides[first + 1]
    vert = faces.reshape(-1)
    for x, y in ((side_start[s0], side_start[s1]), (side_start[s0], side_end[s1]), (side_end[s0], side_start[s1]), (side_end[s0], side_end[s1])):
        same = vert[x] == vert[y]
        pairs.append(np.column_stack([x[same], y[same]]))
    pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(3 * nf, 3 * nf))
    _, labels = connected_components(graph, directed=False)
    fans = np.unique(np.column_stack([vert, labels]), axis=0)
    per_vertex = np.bincount(fans[:, 0], minlength=n_vertices)
    return np.flatnonzero(per_vertex > 1)


def manifold_report(mesh) -> dict:
    """Counts and defect lists describing the topology of a triangle mesh (JSON-serialisable)."""
    vertices, faces = _mesh_arrays(mesh)
    nv = len(vertices)
    if len(faces) == 0:
        return {
            "vertices": 0, "edges": 0, "faces": 0, "euler_characteristic": 0,
            "edge_incidence_histogram": {}, "boundary_edge_count": 0, "boundary_loops": 0,
            "boundary_loop_lengths": [], "boundary_loop_vertices": [], "non_manifold_edges": [],
            "non_manifold_vertices": [], "components": 0, "isolated_vertices": nv,
            "total_area": 0.0, "degenerate_faces": 0, "is_closed": True, "is_manifold": True,
        }
    referenced = np.unique(faces)
    directed, edges, inverse, counts = _face_sides(faces)
    hist_keys, hist_counts = np.unique(counts, return_counts=True)
    loops = boundary_loops(faces)

    graph = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(nv, nv))
    _, labels = connected_components(graph, directed=False)
    areas = triangle_areas(vertices, faces)
    non_manifold_edges = edges[counts > 2]
    non_manifold_vertices = _non_manifold_vertices(faces, inverse, counts, nv)
    boundary_edge_count = int(np.sum(counts == 1))
    return {
        "vertices": int(len(referenced)),
        "edges": int(len(edges)),
        "faces": int(len(faces)),
        "euler_characteristic": int(len(referenced) - len(edges) + len(faces)),
        "edge_incidence_histogram": {str(int(k)): int(c) for k, c in zip(hist_keys, hist_counts)},
        "boundary_edge_count": boundary_edge_count,
        "boundary_loops": len(loops),
        "boundary_loop_lengths": [len(loop) for loop in loops],
        "boundary_loop_vertices": loops,
        "non_manifold_edges": non_manifold_edges.tolist(),
        "non_manifold_vertices": non_manifold_vertices.tolist(),
        "components": int(len(np.unique(labels[referenced]))),
        "isolated_vertices": int(nv - len(referenced)),
        "total_area": float(areas.sum()),
        "degenerate_faces": int(np.sum(areas < DEGENERATE_AREA)),
        "is_closed": boundary_edge_count == 0 and len(non_manifold_edges) == 0,
        "is_manifold": len(non_manifold_edges) == 0 and len(non_manifold_vertices) == 0,
    }


SUMMARY_KEYS = ("faces", "euler_characteristic", "boundary_edge_count", "boundary_loops", "components", "is_closed", "is_manifold")


def manifold_summary(report: dict) -> dict:
    return {k: report[k] for k in SUMMARY_KEYS}
