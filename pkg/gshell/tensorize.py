"""Dense cubic-tensor packing of a ghost-shell tet grid.

Two tensors: `base` holds (sdf, offset_x, offset_y, offset_z) on the (R+1)^3
vertex lattice; `alpha` holds one value per candidate slot on a finer cubic
lattice of alpha_factor * R cells per axis.

Candidate slots:
  - face candidates: inside every tet face, the edge joining the crossings on
    (p1, p2) and (p2, p3) for apex p2. Placed at (p1 + p3 + 2 p2) / 4.
  - diagonal slots: one per tet, the interior diagonal of a quad. Placed at
    the tet centroid.
In quarter-cell units both placements are integer, so alpha_factor = 4 is
exact. Injectivity is checked whenever a layout is built.

Slot values: a cut slot stores the crossing fraction measured from its first
endpoint (endpoints ordered lexicographically by the midpoints of their grid
edges) and `side` = whether that endpoint is kept. Uncut slots store
(alpha, side) = (1, 1) when kept and (0, 0) when discarded or inactive.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import FormatError, InvalidArgumentError, PlacementCollisionError
from .extract import ExtractedMesh, clip_template, extract_gshell, extract_watertight, project_msdf
from .grid import TetGrid, build_uniform_tet_grid

logger = logging.getLogger(__name__)

TENSOR_VERSION = 1
DEFAULT_ALPHA_FACTOR = 4
_TET_FACES = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])


# -------------------------
# SLOT LAYOUT
# -------------------------
@dataclass(frozen=True)
class SlotLayout:
    resolution: int
    alpha_factor: int
    face_candidates: np.ndarray  # (k, 3): apex, p1, p3 with p1 < p3
    num_tets: int
    quarter: np.ndarray  # (m, 3) placement in quarter-cell units
    coords: np.ndarray  # (m, 3) placement on the alpha lattice
    order: np.ndarray  # slot ids sorted by quarter code
    sorted_codes: np.ndarray

    @property
    def num_slots(self) -> int:
        return len(self.coords)

    @property
    def shape(self) -> tuple:
        n = self.alpha_factor * self.resolution + 1
        return (n, n, n)

    def describe(self, slot: int) -> str:
        k = len(self.face_candidates)
        if slot < k:
            apex, p1, p3 = (int(v) for v in self.face_candidates[slot])
            return f"face candidate (apex {apex}, {p1}-{p3})"
        return f"quad diagonal of tet {slot - k}"

    def slots_at(self, quarter: np.ndarray) -> np.ndarray:
        """Slot id for each quarter-unit placement; -1 where no slot sits."""
        codes = _quarter_code(quarter, self.resolution)
        pos = np.clip(np.searchsorted(self.sorted_codes, codes), 0, max(len(self.sorted_codes) - 1, 0))
        found = self.sorted_codes[pos] == codes
        return np.where(found, self.order[pos], -1)


def _quarter_code(quarter: np.ndarray, resolution: int) -> np.ndarray:
    n = 4 * resolution + 1
    quarter = np.asarray(quarter, dtype=np.int64)
    return (quarter[..., 0] * n + quarter[..., 1]) * n + quarter[..., 2]


@lru_cache(maxsize=8)
def candidate_slots(resolution: int, alpha_factor: int = DEFAULT_ALPHA_FACTOR) -> SlotLayout:
    """Enumerate every candidate slot of the uniform grid and place it; raises on collisions."""
    if alpha_factor not in (2, 4):
        raise InvalidArgumentError(f"alpha_factor must be 2 or 4, got {alpha_factor}")
    grid = build_uniform_tet_grid(resolution)
    ijk = grid.lattice
    faces = np.unique(np.sort(grid.tets[:, _TET_FACES].reshape(-1, 3), axis=1), axis=0)
    apex_first = np.concatenate([faces[:, [0, 1, 2]], faces[:, [1, 0, 2]], faces[:, [2, 0, 1]]])
    order = np.lexsort((apex_first[:, 2], apex_first[:, 1], apex_first[:, 0]))
    face_candidates = apex_first[order]

    face_quarter = 2 * ijk[face_candidates[:, 0]] + ijk[face_candidates[:, 1]] + ijk[face_candidates[:, 2]]
    tet_quarter = ijk[grid.tets].sum(axis=1)
    quarter = np.concatenate([face_quarter, tet_quarter])
    coords = np.rint(quarter * alpha_factor / 4.0).astype(np.int64) if alpha_factor != 4 else quarter

    n = alpha_factor * resolution + 1
    lin = (coords[:, 0] * n + coords[:, 1]) * n + coords[:, 2]
    by_lin = np.argsort(lin, kind="stable")
    dup = np.flatnonzero(lin[by_lin][1:] == lin[by_lin][:-1])
    layout_codes = _quarter_code(quarter, resolution)
    by_code = np.argsort(layout_codes, kind="stable")
    layout = SlotLayout(
        resolution=resolution,
        alpha_factor=alpha_factor,
        face_candidates=face_candidates,
        num_tets=len(grid.tets),
        quarter=quarter,
        coords=coords,
        order=by_code,
        sorted_codes=layout_codes[by_code],
    )
    if len(dup):
        first, second = int(by_lin[dup[0]]), int(by_lin[dup[0] + 1])
        raise PlacementCollisionError(layout.describe(first), layout.describe(second), coords[first])
    logger.debug("slot layout R=%d factor=%d: %d slots", resolution, alpha_factor, len(coords))
    return layout


# -------------------------
# TYPES
# -------------------------
@dataclass
class AlphaTable:
    """Per-slot (alpha, side), in layout order. An empty table carries no open-surface information."""

    alpha: np.ndarray
    side: np.ndarray

    @classmethod
    def empty(cls) -> "AlphaTable":
        return cls(np.zeros(0), np.zeros(0, dtype=np.uint8))

    @property
    def is_empty(self) -> bool:
        return len(self.alpha) == 0


@dataclass
class TensorGrid:
    resolution: int
    bbox: np.ndarray
    deformation_scale: float
    alpha_factor: int
    grid_scale: np.ndarray
    base: np.ndarray
    base_mask: np.ndarray
    alpha: np.ndarray
    alpha_mask: np.ndarray
    alpha_side: np.ndarray

    def __post_init__(self):
        self.resolution = int(self.resolution)
        self.alpha_factor = int(self.alpha_factor)
        self.deformation_scale = float(self.deformation_scale)
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        self.grid_scale = np.asarray(self.grid_scale, dtype=np.float64).reshape(3)
        n = self.resolution + 1
        m = self.alpha_factor * self.resolution + 1
        expected = {
            "base": (n, n, n, 4),
            "base_mask": (n, n, n),
            "alpha": (m, m, m),
            "alpha_mask": (m, m, m),
            "alpha_side": (m, m, m),
        }
        for name, shape in expected.items():
            value = np.asarray(getattr(self, name))
            if value.shape != shape:
                raise FormatError(f"{name} has shape {value.shape}, expected {shape}")
        if np.any(self.grid_scale <= 0):
            raise FormatError("grid_scale components must be positive")

    def equals(self, other: "TensorGrid") -> bool:
        """Bit-exact equality of every field."""
        return (
            self.resolution == other.resolution
            and self.alpha_factor == other.alpha_factor
            and self.deformation_scale == other.deformation_scale
            and np.array_equal(self.bbox, other.bbox)
            and np.array_equal(self.grid_scale, other.grid_scale)
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("base", "base_mask", "alpha", "alpha_mask", "alpha_side"))
        )


# -------------------------
# TEMPLATE EDGES -> SLOTS
# -------------------------
def _template_sides(template: ExtractedMesh):
    """Unique template edges (ta < tb) with one face that contains each."""
    sides = np.sort(template.faces[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    edges, first = np.unique(sides, axis=0, return_index=True)
    return edges.reshape(-1, 2), first // 3


def _lex_less(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x - y
    idx = np.argmax(diff != 0, axis=1)
    return diff[np.arange(len(diff)), idx] < 0


def _side_slots(grid: TetGrid, layout: SlotLayout, template: ExtractedMesh):
    """Slot id and endpoint order for every template edge. Returns (edges, slots, a_is_first)."""
    edges, face_of = _template_sides(template)
    ijk = grid.lattice
    ga = template.grid_edges[edges[:, 0]]
    gb = template.grid_edges[edges[:, 1]]
    shared = np.where(
        (ga[:, :1] == gb).any(axis=1),
        ga[:, 0],
        np.where((ga[:, 1:] == gb).any(axis=1), ga[:, 1], -1),
    )
    face_type = shared >= 0
    other_a = np.where(ga[:, 0] == shared, ga[:, 1], ga[:, 0])
    other_b = np.where(gb[:, 0] == shared, gb[:, 1], gb[:, 0])
    quarter = np.empty((len(edges), 3), dtype=np.int64)
    quarter[face_type] = 2 * ijk[shared[face_type]] + ijk[other_a[face_type]] + ijk[other_b[face_type]]
    tets = template.face_tets[face_of[~face_type]]
    quarter[~face_type] = ijk[grid.tets[tets]].sum(axis=1)
    slots = layout.slots_at(quarter)
    if np.any(slots < 0):
        raise FormatError("template edge has no candidate slot; grid is not a uniform Kuhn grid")
    a_is_first = _lex_less(ijk[ga].sum(axis=1), ijk[gb].sum(axis=1))
    return edges, slots, a_is_first


def _require_uniform(grid: TetGrid) -> None:
    reference = build_uniform_tet_grid(grid.resolution, grid.bbox)
    if grid.tets.shape != reference.tets.shape or not np.array_equal(grid.tets, reference.tets):
        raise InvalidArgumentError("tensorization needs a grid laid out by build_uniform_tet_grid")
    if not np.allclose(grid.canonical_positions, reference.canonical_positions, rtol=0, atol=1e-12):
        raise InvalidArgumentError("canonical positions differ from the uniform lattice")


# -------------------------
# ALPHA TABLE
# -------------------------
def alpha_table(grid: TetGrid, mesh: ExtractedMesh, alpha_factor: int = DEFAULT_ALPHA_FACTOR) -> AlphaTable:
    """Slot values describing how `mesh` (extracted from `grid`) clips its watertight template."""
    layout = candidate_slots(grid.resolution, alpha_factor)
    template = mesh.watertight
    alpha = np.zeros(layout.num_slots)
    side = np.zeros(layout.num_slots, dtype=np.uint8)
    if len(template.faces) == 0:
        return AlphaTable(alpha, side)
    if mesh.template is None:
        kept = np.ones(len(template.vertices), dtype=bool)
    else:
        nu = template.projected_msdf if template.projected_msdf is not None else project_msdf(grid, template).projected_msdf
        kept = nu >= 0

    edges, slots, a_is_first = _side_slots(grid, layout, template)
    ta, tb = edges[:, 0], edges[:, 1]
    both = kept[ta] & kept[tb]
    alpha[slots] = both.astype(np.float64)
    side[slots] = both.astype(np.uint8)

    cut = kept[ta] != kept[tb]
    if cut.any():
        ns = len(template.vertices)
        source_codes = mesh.boundary_source[:, 0] * ns + mesh.boundary_source[:, 1]
        order = np.argsort(source_codes)
        codes = ta[cut] * ns + tb[cut]
        pos = order[np.searchsorted(source_codes[order], codes)]
        beta = mesh.beta[pos]
        first_is_a = a_is_first[cut]
        alpha[slots[cut]] = np.where(first_is_a, beta, 1.0 - beta)
        side[slots[cut]] = np.where(first_is_a, kept[ta[cut]], kept[tb[cut]]).astype(np.uint8)
    return AlphaTable(alpha, side)


# -------------------------
# ENCODE / DECODE
# -------------------------
def encode(grid: TetGrid, mesh: ExtractedMesh | None = None, table: AlphaTable | None = None, alpha_factor: int = DEFAULT_ALPHA_FACTOR, normalize_sdf: bool = False) -> TensorGrid:
    """Pack a uniform grid and its open-surface clipping into dense tensors.

    Without `table`, slot values come from `mesh` (default: extract_gshell(grid)).
    `normalize_sdf` replaces sdf by its sign (+1 / -1), which is lossy.
    """
    _require_uniform(grid)
    layout = candidate_slots(grid.resolution, alpha_factor)
    if table is None:
        table = alpha_table(grid, extract_gshell(grid) if mesh is None else mesh, alpha_factor)
    if not table.is_empty and len(table.alpha) != layout.num_slots:
        raise InvalidArgumentError(f"alpha table has {len(table.alpha)} slots, layout has {layout.num_slots}")

    n = grid.resolution + 1
    sdf = np.where(grid.sdf >= 0, 1.0, -1.0) if normalize_sdf else grid.sdf
    base = np.column_stack([sdf, grid.offsets]).reshape(n, n, n, 4)
    alpha = np.zeros(layout.shape)
    alpha_mask = np.zeros(layout.shape, dtype=np.uint8)
    alpha_side = np.zeros(layout.shape, dtype=np.uint8)
    if not table.is_empty:
        c = layout.coords
        alpha[c[:, 0], c[:, 1], c[:, 2]] = table.alpha
        alpha_mask[c[:, 0], c[:, 1], c[:, 2]] = 1
        alpha_side[c[:, 0], c[:, 1], c[:, 2]] = table.side
    return TensorGrid(
        resolution=grid.resolution,
        bbox=grid.bbox.copy(),
        deformation_scale=grid.deformation_scale,
        alpha_factor=alpha_factor,
        grid_scale=(grid.bbox[1] - grid.bbox[0]) / 2.0,
        base=base,
        base_mask=np.ones((n, n, n), dtype=np.uint8),
        alpha=alpha,
        alpha_mask=alpha_mask,
        alpha_side=alpha_side,
    )


def decode(t: TensorGrid) -> tuple[TetGrid, AlphaTable]:
    """Inverse of encode: the grid (msdf set to +1) and its slot table."""
    unmasked = t.alpha_mask == 0
    if np.any(t.alpha[unmasked] != 0) or np.any(t.alpha_side[unmasked] != 0):
        bad = np.argwhere(unmasked & ((t.alpha != 0) | (t.alpha_side != 0)))[0]
        raise FormatError(f"alpha or side set at unmasked coordinate {tuple(int(v) for v in bad)}")
    if np.any(t.base_mask != 1) and np.any(t.base_mask != 0):
        raise FormatError("base mask must be all ones (or all zeros for an empty tensor)")

    grid = build_uniform_tet_grid(t.resolution, t.bbox, t.deformation_scale)
    n = grid.num_vertices
    base = np.asarray(t.base, dtype=np.float64).reshape(n, 4)
    grid = grid.with_values(sdf=base[:, 0].copy(), msdf=np.ones(n), offsets=base[:, 1:].copy())

    if not np.any(t.alpha_mask):
        return grid, AlphaTable.empty()
    layout = candidate_slots(t.resolution, t.alpha_factor)
    expected = np.zeros(layout.shape, dtype=np.uint8)
    c = layout.coords
    expected[c[:, 0], c[:, 1], c[:, 2]] = 1
    if not np.array_equal(expected, t.alpha_mask):
        bad = np.argwhere(expected != t.alpha_mask)[0]
        raise FormatError(f"alpha mask disagrees with the slot layout at {tuple(int(v) for v in bad)}")
    alpha = np.asarray(t.alpha, dtype=np.float64)[c[:, 0], c[:, 1], c[:, 2]]
    side = np.asarray(t.alpha_side)[c[:, 0], c[:, 1], c[:, 2]].astype(np.uint8)
    if np.any((alpha < 0) | (alpha > 1)):
        raise FormatError("alpha values must lie in [0, 1]")
    if np.any(side > 1):
        raise FormatError("side values must be 0 or 1")
    return grid, AlphaTable(alpha, side)


# -------------------------
# EXTRACTION FROM SLOT VALUES
# -------------------------
def extract_from_table(grid: TetGrid, table: AlphaTable, alpha_factor: int = DEFAULT_ALPHA_FACTOR) -> ExtractedMesh:
    """Open surface from sdf plus slot values, bypassing msdf. An empty table gives the watertight mesh."""
    template = extract_watertight(grid)
    if table.is_empty or len(template.faces) == 0:
        return template
    layout = candidate_slots(grid.resolution, alpha_factor)
    edges, slots, a_is_first = _side_slots(grid, layout, template)
    ta, tb = edges[:, 0], edges[:, 1]
    alpha, side = table.alpha[slots], table.side[slots].astype(np.int64)
    cut = (alpha > 0) & (alpha < 1)
    whole = np.where(alpha >= 1, 1, 0)
    first_kept = np.where(cut, side, whole)
    second_kept = np.where(cut, 1 - side, whole)
    vote_a = np.where(a_is_first, first_kept, second_kept)
    vote_b = np.where(a_is_first, second_kept, first_kept)

    ns = len(template.vertices)
    low = np.full(ns, 2, dtype=np.int64)
    high = np.full(ns, -1, dtype=np.int64)
    for ids, votes in ((ta, vote_a), (tb, vote_b)):
        np.minimum.at(low, ids, votes)
        np.maximum.at(high, ids, votes)
    conflict = np.flatnonzero(low != high)
    if len(conflict):
        raise FormatError(f"alpha table disagrees on whether template vertex {int(conflict[0])} is kept")
    kept = high == 1

    codes = ta * ns + tb

    def beta_fn(ca, cb):
        pos = np.searchsorted(codes, ca * ns + cb)
        a = alpha[pos]
        return np.where(a_is_first[pos], a, 1.0 - a)

    return clip_template(template, kept, beta_fn)
