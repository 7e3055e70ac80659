"""Marching Tetrahedra and the joint SDF/mSDF (open surface) extraction.

Output ordering is a pure function of the grid: template vertices follow the
lexicographic order of their grid-edge keys, faces follow (tet index, table
slot), boundary vertices follow the order of the template edge they cut.
"""
import hashlib
import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ConsistencyError, DataError, InvalidArgumentError
from .grid import TET_EDGES, TetGrid
from .tables import CLIP_COUNT, CLIP_SEGMENT, CLIP_TABLE, QUAD_DIAGONALS, TRI_COUNT, TRI_SIDES, TRI_TABLE, TRI_TABLE_ALT
from .utils import chunk_ranges, parallel_map

logger = logging.getLogger(__name__)

CLAMP = 1e-6
DENOM_EPS = 1e-12
_BITS4 = np.array([1, 2, 4, 8], dtype=np.int64)
_BITS3 = np.array([1, 2, 4], dtype=np.int64)


def interpolation_coefficient(x_a, x_b):
    """Zero crossing t of (1 - t) * x_a + t * x_b, clamped to [CLAMP, 1 - CLAMP].

    Returns (t, live); `live` is False where the value was clamped or the
    denominator was degenerate, i.e. where t does not depend on x_a, x_b.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    denom = x_a - x_b
    ok = np.abs(denom) >= DENOM_EPS
    t = np.divide(x_a, denom, out=np.full(np.shape(denom), 0.5), where=ok)
    clamped = np.clip(t, CLAMP, 1.0 - CLAMP)
    return clamped, ok & (clamped == t)


def grid_signature(grid: TetGrid) -> str:
    """Fingerprint of everything that fixes the extracted topology: tets and SDF signs."""
    h = hashlib.sha1()
    h.update(np.int64(grid.num_vertices).tobytes())
    h.update(np.ascontiguousarray(grid.tets).tobytes())
    h.update(np.packbits(grid.sdf < 0).tobytes())
    return h.hexdigest()


# -------------------------
# MESH TYPES
# -------------------------
class MeshVertex(NamedTuple):
    position: np.ndarray
    source_edge: tuple
    alpha: float
    projected_msdf: float | None


class BoundaryVertex(NamedTuple):
    position: np.ndarray
    source_mesh_edge: tuple
    beta: float


@dataclass
class ExtractedMesh:
    """Triangle mesh plus provenance.

    The first `num_surface` vertices sit on grid edges (MeshVertex); the rest
    sit on cut edges of the watertight template (BoundaryVertex). `template`
    is the watertight mesh the open surface was clipped from (None when this
    mesh is itself a template).
    """

    vertices: np.ndarray
    faces: np.ndarray
    boundary_edges: np.ndarray
    face_tets: np.ndarray
    grid_edges: np.ndarray
    alpha: np.ndarray
    template_ids: np.ndarray
    boundary_source: np.ndarray
    beta: np.ndarray
    projected_msdf: np.ndarray | None = None
    diagonals: np.ndarray | None = None
    template: "ExtractedMesh | None" = None
    signature: str = ""

    @property
    def num_surface(self) -> int:
        return len(self.grid_edges)

    @property
    def num_boundary(self) -> int:
        return len(self.beta)

    @property
    def watertight(self) -> "ExtractedMesh":
        return self if self.template is None else self.template

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def vertex(self, i: int) -> MeshVertex | BoundaryVertex:
        if i < self.num_surface:
            nu = None if self.projected_msdf is None else float(self.projected_msdf[i])
            return MeshVertex(self.vertices[i], tuple(int(v) for v in self.grid_edges[i]), float(self.alpha[i]), nu)
        j = i - self.num_surface
        return BoundaryVertex(self.vertices[i], tuple(int(v) for v in self.boundary_source[j]), float(self.beta[j]))

    @classmethod
    def from_arrays(cls, vertices, faces) -> "ExtractedMesh":
        """Plain mesh without grid provenance (e.g. read back from OBJ)."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        return cls(
            vertices=vertices,
            faces=faces,
            boundary_edges=np.zeros((0, 2), dtype=np.int64),
            face_tets=np.full(len(faces), -1, dtype=np.int64),
            grid_edges=np.zeros((0, 2), dtype=np.int64),
            alpha=np.zeros(0),
            template_ids=np.zeros(0, dtype=np.int64),
            boundary_source=np.zeros((0, 2), dtype=np.int64),
            beta=np.zeros(0),
        )


# -------------------------
# WATERTIGHT EXTRACTION
# -------------------------
def _tet_faces(codes, ids, tet_index):
    """Faces for a chunk of active tets. ids: (n, 6) template vertex id per local edge, -1 if not crossing."""
    n = len(codes)
    rows = np.arange(n)[:, None]
    count = TRI_COUNT[codes]
    quad = count == 2
    diag = QUAD_DIAGONALS[codes]
    d0 = ids[rows, np.clip(diag[:, 0, :], 0, None)]
    d1 = ids[rows, np.clip(diag[:, 1, :], 0, None)]
    # quad split along the diagonal holding the smaller edge key
    use_alt = quad & (d1.min(axis=1) < d0.min(axis=1))
    table = np.where(use_alt[:, None, None], TRI_TABLE_ALT[codes], TRI_TABLE[codes])
    local = np.take_along_axis(ids, np.clip(table.reshape(n, 6), 0, None), axis=1).reshape(n, 2, 3)
    valid = np.arange(2)[None, :] < count[:, None]
    faces = local[valid]
    face_tets = np.broadcast_to(tet_index[:, None], (n, 2))[valid]
    chosen = np.where(use_alt[:, None], d1, d0)[quad]
    diagonals = np.column_stack([tet_index[quad], np.sort(chosen, axis=1)]) if quad.any() else np.zeros((0, 3), np.int64)
    return faces, face_tets, diagonals


def extract_watertight(grid: TetGrid, threads: int = 1) -> ExtractedMesh:
    s = grid.sdf
    if not np.all(np.isfinite(s)):
        raise DataError(f"sdf is not finite at vertex {int(np.flatnonzero(~np.isfinite(s))[0])}")
    neg = s < 0
    codes = neg[grid.tets].astype(np.int64) @ _BITS4
    active = np.flatnonzero(TRI_COUNT[codes] > 0)

    tet_edges = np.sort(grid.tets[active][:, TET_EDGES], axis=2)
    crossing = neg[tet_edges[..., 0]] != neg[tet_edges[..., 1]]
    n = grid.num_vertices
    edge_codes = tet_edges[..., 0] * n + tet_edges[..., 1]
    key_codes = np.unique(edge_codes[crossing])
    keys = np.column_stack([key_codes // n, key_codes % n]).astype(np.int64)

    ids = np.full(edge_codes.shape, -1, dtype=np.int64)
    ids[crossing] = np.searchsorted(key_codes, edge_codes[crossing])

    a, b = keys[:, 0], keys[:, 1]
    alpha, _ = interpolation_coefficient(s[a], s[b])
    pos = grid.positions
    vertices = (1.0 - alpha)[:, None] * pos[a] + alpha[:, None] * pos[b]

    active_codes = codes[active]
    chunks = chunk_ranges(len(active), threads)
    parts = parallel_map(lambda r: _tet_faces(active_codes[r[0]:r[1]], ids[r[0]:r[1]], active[r[0]:r[1]]), chunks, threads)
    if parts:
        faces = np.concatenate([p[0] for p in parts]).astype(np.int64)
        face_tets = np.concatenate([p[1] for p in parts]).astype(np.int64)
        diagonals = np.concatenate([p[2] for p in parts]).astype(np.int64)
    else:
        faces = np.zeros((0, 3), dtype=np.int64)
        face_tets = np.zeros(0, dtype=np.int64)
        diagonals = np.zeros((0, 3), dtype=np.int64)
    logger.debug("watertight extraction: %d active tets, %d vertices, %d faces", len(active), len(keys), len(faces))

    return ExtractedMesh(
        vertices=vertices,
        faces=faces,
        boundary_edges=np.zeros((0, 2), dtype=np.int64),
        face_tets=face_tets,
        grid_edges=keys,
        alpha=alpha,
        template_ids=np.arange(len(keys), dtype=np.int64),
        boundary_source=np.zeros((0, 2), dtype=np.int64),
        beta=np.zeros(0),
        diagonals=diagonals,
        signature=grid_signature(grid),
    )


def project_msdf(grid: TetGrid, mesh: ExtractedMesh) -> ExtractedMesh:
    """nu' = (1 - alpha) * nu_a + alpha * nu_b on every template vertex."""
    if mesh.template is not None:
        raise InvalidArgumentError("project_msdf expects a watertight template, not a clipped mesh")
    edges = mesh.grid_edges
    if len(edges) != len(mesh.vertices):
        raise ConsistencyError(f"{len(mesh.vertices) - len(edges)} template vertices have no source grid edge")
    if len(edges) and (edges.min() < 0 or edges.max() >= grid.num_vertices):
        raise ConsistencyError("template vertex refers to a grid edge outside this grid")
    nu = (1.0 - mesh.alpha) * grid.msdf[edges[:, 0]] + mesh.alpha * grid.msdf[edges[:, 1]]
    return replace(mesh, projected_msdf=nu)


# -------------------------
# OPEN-SURFACE EXTRACTION
# -------------------------
def clip_template(template: ExtractedMesh, kept: np.ndarray, beta_fn, nu: np.ndarray | None = None) -> ExtractedMesh:
    """Clip every template face by its kept/discarded corners.

    beta_fn(a, b) gives the crossing coefficient along each cut template edge
    (a < b, template vertex ids), measured from a.
    """
    faces = template.faces
    nf = len(faces)
    ns = len(template.vertices)
    kcode = kept[faces].astype(np.int64) @ _BITS3 if nf else np.zeros(0, dtype=np.int64)

    sides = np.sort(faces[:, TRI_SIDES], axis=2)
    side_codes = sides[..., 0] * ns + sides[..., 1]
    cut = kept[sides[..., 0]] != kept[sides[..., 1]]
    cut_codes = np.unique(side_codes[cut])
    cut_keys = np.column_stack([cut_codes // ns, cut_codes % ns]).astype(np.int64) if ns else np.zeros((0, 2), np.int64)
    ca, cb = cut_keys[:, 0], cut_keys[:, 1]
    beta = np.asarray(beta_fn(ca, cb), dtype=np.float64).reshape(-1)
    u = template.vertices
    crossings = (1.0 - beta)[:, None] * u[ca] + beta[:, None] * u[cb]

    kept_ids = np.flatnonzero(kept)
    new_id = np.full(ns, -1, dtype=np.int64)
    new_id[kept_ids] = np.arange(len(kept_ids))
    boundary_id = np.full(side_codes.shape, -1, dtype=np.int64)
    boundary_id[cut] = len(kept_ids) + np.searchsorted(cut_codes, side_codes[cut])
    tokens = np.concatenate([new_id[faces], boundary_id], axis=1)

    table = CLIP_TABLE[kcode].reshape(nf, 6)
    local = np.take_along_axis(tokens, np.clip(table, 0, None), axis=1).reshape(nf, 2, 3)
    valid = np.arange(2)[None, :] < CLIP_COUNT[kcode][:, None]
    out_faces = local[valid]
    out_face_tets = np.broadcast_to(template.face_tets[:, None], (nf, 2))[valid]

    segment = CLIP_SEGMENT[kcode]
    has_segment = segment[:, 0] >= 0
    boundary_edges = np.take_along_axis(tokens[has_segment], segment[has_segment], axis=1)

    projected = None
    if nu is not None:
        projected = np.concatenate([nu[kept_ids], (1.0 - beta) * nu[ca] + beta * nu[cb]])

    return ExtractedMesh(
        vertices=np.concatenate([u[kept_ids], crossings]).reshape(-1, 3),
        faces=out_faces.astype(np.int64).reshape(-1, 3),
        boundary_edges=boundary_edges.astype(np.int64).reshape(-1, 2),
        face_tets=out_face_tets.astype(np.int64),
        grid_edges=template.grid_edges[kept_ids],
        alpha=template.alpha[kept_ids],
        template_ids=kept_ids,
        boundary_source=cut_keys,
        beta=beta,
        projected_msdf=projected,
        template=template,
        signature=template.signature,
    )


def extract_gshell(grid: TetGrid, threads: int = 1) -> ExtractedMesh:
    if not np.all(np.isfinite(grid.msdf)):
        raise DataError(f"msdf is not finite at vertex {int(np.flatnonzero(~np.isfinite(grid.msdf))[0])}")
    template = project_msdf(grid, extract_watertight(grid, threads))
    nu = template.projected_msdf
    kept = nu >= 0
    mesh = clip_template(template, kept, lambda a, b: interpolation_coefficient(nu[a], nu[b])[0], nu)
    logger.debug("gshell extraction: %d kept faces, %d boundary edges", len(mesh.faces), len(mesh.boundary_edges))
    return mesh


def extract(grid: TetGrid, mode: str = "gshell", threads: int = 1) -> ExtractedMesh:
    if mode == "watertight":
        return extract_watertight(grid, threads)
    if mode == "gshell":
        return extract_gshell(grid, threads)
    raise InvalidArgumentError(f"unknown extraction mode {mode!r}")


# -------------------------
# CROSS-CHECK ORACLE
# -------------------------
def clip_oracle(positions, nu) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Half-space clip of one triangle by linearly interpolated nu >= 0.

    Walks the triangle like Sutherland-Hodgman against a single clip plane,
    then fan-triangulates the kept polygon. Returns (triangles, boundary
    segments) as arrays of shape (3, 3) and (2, 3).
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(3, 3)
    nu = np.asarray(nu, dtype=np.float64).reshape(3)
    inside = nu >= 0
    polygon, crossing = [], []
    for i in range(3):
        j = (i + 1) % 3
        if inside[i]:
            polygon.append(positions[i])
            crossing.append(False)
        if inside[i] != inside[j]:
            t, _ = interpolation_coefficient(nu[i], nu[j])
            polygon.append((1.0 - t) * positions[i] + t * positions[j])
            crossing.append(True)
    if len(polygon) < 3:
        return [], []
    triangles = [np.array([polygon[0], polygon[k], polygon[k + 1]]) for k in range(1, len(polygon) - 1)]
    segments = []
    m = len(polygon)
    for k in range(m):
        if crossing[k] and crossing[(k + 1) % m]:
            segments.append(np.array([polygon[k], polygon[(k + 1) % m]]))
    return triangles, segments
