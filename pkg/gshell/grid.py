"""Deformable tetrahedral grid holding per-vertex SDF, mSDF and offsets.

Vertices form the (R+1)^3 lattice over the bounding box, numbered so that
index order equals lexicographic (x, y, z) order of canonical positions. Each
cube cell is split into 6 tetrahedra around its (0,0,0)->(1,1,1) diagonal
(Kuhn subdivision); neighbouring cells therefore agree on every shared face.
"""
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from itertools import permutations
from typing import Callable

import numpy as np

from .errors import DataError, InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_BBOX = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))

# Local edge numbering shared with the lookup tables.
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], dtype=np.int64)


def _kuhn_cube_tets() -> np.ndarray:
    """Corner offsets (6, 4, 3) of the Kuhn tets of a unit cube, positively oriented."""
    tets = []
    for axes in permutations(range(3)):
        corner = np.zeros(3, dtype=np.int64)
        path = [corner.copy()]
        for axis in axes:
            corner[axis] = 1
            path.append(corner.copy())
        path = np.array(path)
        d = (path[1:] - path[0]).astype(float)
        if np.linalg.det(d) < 0:
            path[[2, 3]] = path[[3, 2]]
        tets.append(path)
    return np.array(tets)


CUBE_TETS = _kuhn_cube_tets()


# -------------------------
# GRID
# -------------------------
@dataclass
class TetGrid:
    canonical_positions: np.ndarray
    offsets: np.ndarray
    deformation_scale: float
    tets: np.ndarray
    sdf: np.ndarray
    msdf: np.ndarray
    resolution: int
    bbox: np.ndarray

    def __post_init__(self):
        self.canonical_positions = np.asarray(self.canonical_positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.canonical_positions)
        self.offsets = np.clip(np.asarray(self.offsets, dtype=np.float64).reshape(n, 3), -1.0, 1.0)
        self.tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        self.sdf = np.asarray(self.sdf, dtype=np.float64).reshape(-1)
        self.msdf = np.asarray(self.msdf, dtype=np.float64).reshape(-1)
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        self.deformation_scale = float(self.deformation_scale)
        self.resolution = int(self.resolution)
        if len(self.sdf) != n or len(self.msdf) != n:
            raise InvalidArgumentError(
                f"sdf/msdf lengths ({len(self.sdf)}, {len(self.msdf)}) must match vertex count {n}"
            )
        if self.deformation_scale <= 0:
            raise InvalidArgumentError("deformation_scale must be positive")
        if len(self.tets):
            if self.tets.min() < 0 or self.tets.max() >= n:
                raise InvalidArgumentError("tet vertex index out of range")
            s = np.sort(self.tets, axis=1)
            if np.any(s[:, 1:] == s[:, :-1]):
                raise InvalidArgumentError("tet with repeated vertex")

    @property
    def num_vertices(self) -> int:
        return len(self.canonical_positions)

    @property
    def positions(self) -> np.ndarray:
        """Effective positions p = p_bar + deformation_scale * offsets."""
        return self.canonical_positions + self.deformation_scale * self.offsets

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, lexicographically ordered."""
        return unique_edges(self.tets)

    @cached_property
    def lattice(self) -> np.ndarray:
        """Integer lattice coordinates of each vertex (uniform grids only)."""
        lo, hi = self.bbox
        ijk = (self.canonical_positions - lo) / (hi - lo) * self.resolution
        rounded = np.rint(ijk)
        if not np.allclose(ijk, rounded, atol=1e-9):
            raise InvalidArgumentError("grid vertices are not on a uniform lattice")
        return rounded.astype(np.int64)

    @property
    def cell_size(self) -> np.ndarray:
        return (self.bbox[1] - self.bbox[0]) / self.resolution

    def with_values(self, *, sdf=None, msdf=None, offsets=None) -> "TetGrid":
        """Copy with replaced attributes; offsets are clipped to [-1, 1]."""
        return replace(
            self,
            sdf=self.sdf.copy() if sdf is None else sdf,
            msdf=self.msdf.copy() if msdf is None else msdf,
            offsets=self.offsets.copy() if offsets is None else offsets,
        )


def unique_edges(tets: np.ndarray) -> np.ndarray:
    if len(tets) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.sort(tets[:, TET_EDGES].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0)


def vertex_index(ijk: np.ndarray, resolution: int) -> np.ndarray:
    n = resolution + 1
    ijk = np.asarray(ijk, dtype=np.int64)
    return (ijk[..., 0] * n + ijk[..., 1]) * n + ijk[..., 2]


def build_uniform_tet_grid(resolution: int, bbox=DEFAULT_BBOX, deformation_scale: float | None = None) -> TetGrid:
    """Tile `bbox` with R^3 cubes, 6 Kuhn tets each; offsets, sdf and msdf start at zero."""
    if int(resolution) != resolution or resolution < 2:
        raise InvalidArgumentError(f"resolution must be an integer >= 2, got {resolution}")
    resolution = int(resolution)
    bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 3)
    lo, hi = bbox
    if np.any(hi <= lo):
        raise InvalidArgumentError(f"degenerate bounding box {bbox.tolist()}")

    n = resolution + 1
    axis = np.arange(n)
    ijk = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    canonical = lo + (hi - lo) * ijk / resolution

    cells = np.stack(np.meshgrid(*(np.arange(resolution),) * 3, indexing="ij"), axis=-1).reshape(-1, 1, 1, 3)
    corners = cells + CUBE_TETS[None]
    tets = vertex_index(corners, resolution).reshape(-1, 4)

    if deformation_scale is None:
        deformation_scale = 0.5 * float(np.min((hi - lo) / resolution))

    nv = len(canonical)
    logger.debug("built uniform grid R=%d: %d vertices, %d tets", resolution, nv, len(tets))
    return TetGrid(
        canonical_positions=canonical,
        offsets=np.zeros((nv, 3)),
        deformation_scale=deformation_scale,
        tets=tets,
        sdf=np.zeros(nv),
        msdf=np.zeros(nv),
        resolution=resolution,
        bbox=bbox,
    )


# -------------------------
# ANALYTIC FIELDS
# -------------------------
@dataclass(frozen=True)
class AnalyticField:
    """Vectorised fields: both functions map (N, 3) points to (N,) values."""

    sdf_fn: Callable[[np.ndarray], np.ndarray]
    msdf_fn: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"


def _evaluate(fn, points: np.ndarray, label: str) -> np.ndarray:
    values = np.asarray(fn(points), dtype=np.float64).reshape(-1)
    if len(values) != len(points):
        raise DataError(f"{label} returned {len(values)} values for {len(points)} vertices")
    bad = np.flatnonzero(~np.isfinite(values))
    if len(bad):
        raise DataError(f"{label} is not finite at vertex {int(bad[0])} ({len(bad)} vertices in total)")
    return values


def sample_fields(grid: TetGrid, field: AnalyticField) -> TetGrid:
    points = grid.positions
    return grid.with_values(sdf=_evaluate(field.sdf_fn, points, "sdf"), msdf=_evaluate(field.msdf_fn, points, "msdf"))


def sphere_field(radius: float = 0.5, center=(0.0, 0.0, 0.0)) -> AnalyticField:
    c = np.asarray(center, dtype=np.float64)
    return AnalyticField(
        sdf_fn=lambda x: np.linalg.norm(x - c, axis=-1) - radius,
        msdf_fn=lambda x: np.ones(len(x)),
        name="sphere",
    )


def hemisphere_field(radius: float = 0.5, center=(0.0, 0.0, 0.0)) -> AnalyticField:
    c = np.asarray(center, dtype=np.float64)
    return AnalyticField(
        sdf_fn=lambda x: np.linalg.norm(x - c, axis=-1) - radius,
        msdf_fn=lambda x: x[:, 2] - c[2],
        name="hemisphere",
    )


def open_cylinder_field(radius: float = 0.4, height: float = 0.5, cap: float = 0.65) -> AnalyticField:
    """Capped cylinder template; the caps (|z| > height) carry negative mSDF."""

    def sdf(x):
        d = np.stack([np.linalg.norm(x[:, :2], axis=-1) - radius, np.abs(x[:, 2]) - cap], axis=-1)
        return np.minimum(d.max(axis=-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)

    return AnalyticField(sdf_fn=sdf, msdf_fn=lambda x: height - np.abs(x[:, 2]), name="open-cylinder")


def sheet_field(half_size: float = 0.6, thickness: float = 0.15, patch: float = 0.45) -> AnalyticField:
    """Flat slab template; only the square patch of its top face survives."""
    b = np.array([half_size, half_size, thickness])

    def sdf(x):
        q = np.abs(x) - b
        return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)

    def msdf(x):
        return np.minimum(x[:, 2], patch - np.abs(x[:, :2]).max(axis=-1))

    return AnalyticField(sdf_fn=sdf, msdf_fn=msdf, name="sheet")


SHAPES = {
    "sphere": sphere_field,
    "hemisphere": hemisphere_field,
    "open-cylinder": open_cylinder_field,
    "sheet": sheet_field,
}


def shape_grid(shape: str, resolution: int, bbox=DEFAULT_BBOX) -> TetGrid:
    if shape not in SHAPES:
        raise InvalidArgumentError(f"unknown shape {shape!r}; expected one of {sorted(SHAPES)}")
    return sample_fields(build_uniform_tet_grid(resolution, bbox), SHAPES[shape]())


def initial_grid(resolution: int, rng: np.random.Generator, bbox=DEFAULT_BBOX) -> TetGrid:
    """Fitting start point: sphere of diameter half the grid extent, mSDF ~ U(-0.01, 0.99)."""
    grid = build_uniform_tet_grid(resolution, bbox)
    lo, hi = grid.bbox
    radius = 0.25 * float(np.min(hi - lo))
    grid = sample_fields(grid, sphere_field(radius, center=(lo + hi) / 2))
    return grid.with_values(msdf=rng.uniform(-0.01, 0.99, size=grid.num_vertices))
