"""Lookup tables for Marching Tetrahedra and for clipping a triangle by the sign of nu'.

Tables are generated from a positively oriented reference tet instead of being
typed in, then checked. Any tet with positive signed volume is an affine,
orientation-preserving image of the reference, so the orientation found here
holds for every tet of the grid.

Case codes: bit i of an SDF code is set when tet vertex i has s < 0
(s == 0 counts as positive). Bit i of a clip code is set when triangle corner i
is kept (nu' >= 0).
"""
import numpy as np

from .errors import ConsistencyError
from .grid import TET_EDGES

REF_TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
EDGE_ID = {(int(a), int(b)): i for i, (a, b) in enumerate(TET_EDGES)}


def _edge(a: int, b: int) -> int:
    return EDGE_ID[(min(a, b), max(a, b))]


def _facing_positive(points: np.ndarray, negative: list[int]) -> bool:
    """True when the polygon's normal points from the negative to the positive vertices."""
    normal = np.zeros(3)
    for p, q in zip(points, np.roll(points, -1, axis=0)):
        normal += np.cross(p, q)
    positive = [v for v in range(4) if v not in negative]
    direction = REF_TET[positive].mean(axis=0) - REF_TET[negative].mean(axis=0)
    return float(normal @ direction) > 0


def _midpoints(edges) -> np.ndarray:
    return np.array([REF_TET[TET_EDGES[e]].mean(axis=0) for e in edges])


def _build_marching_tets():
    count = np.zeros(16, dtype=np.int64)
    table = np.full((16, 2, 3), -1, dtype=np.int64)
    alt_table = np.full((16, 2, 3), -1, dtype=np.int64)
    diagonals = np.full((16, 2, 2), -1, dtype=np.int64)

    for code in range(16):
        negative = [v for v in range(4) if code >> v & 1]
        if len(negative) in (0, 4):
            continue
        if len(negative) in (1, 3):
            lone = negative[0] if len(negative) == 1 else next(v for v in range(4) if v not in negative)
            tri = [_edge(lone, v) for v in range(4) if v != lone]
            if not _facing_positive(_midpoints(tri), negative):
                tri = tri[::-1]
            count[code] = 1
            table[code, 0] = tri
            continue
        a, b = negative
        c, d = [v for v in range(4) if v not in negative]
        cycle = [_edge(a, c), _edge(a, d), _edge(b, d), _edge(b, c)]
        if not _facing_positive(_midpoints(cycle), negative):
            cycle = cycle[::-1]
        q0, q1, q2, q3 = cycle
        count[code] = 2
        table[code] = [[q0, q1, q2], [q0, q2, q3]]
        alt_table[code] = [[q1, q2, q3], [q1, q3, q0]]
        diagonals[code] = [[q0, q2], [q1, q3]]
    return count, table, alt_table, diagonals


TRI_COUNT, TRI_TABLE, TRI_TABLE_ALT, QUAD_DIAGONALS = _build_marching_tets()

# Clip tokens: 0..2 are triangle corners, 3..5 the crossing on edges (0,1), (1,2), (2,0).
TRI_SIDES = ((0, 1), (1, 2), (2, 0))


def _cross(i: int, j: int) -> int:
    for t, side in enumerate(TRI_SIDES):
        if set(side) == {i, j}:
            return 3 + t
    raise KeyError((i, j))


def _build_clip():
    count = np.zeros(8, dtype=np.int64)
    table = np.full((8, 2, 3), -1, dtype=np.int64)
    segment = np.full((8, 2), -1, dtype=np.int64)
    for code in range(8):
        kept = [v for v in range(3) if code >> v & 1]
        if len(kept) == 3:
            count[code] = 1
            table[code, 0] = [0, 1, 2]
        elif len(kept) == 1:
            i = kept[0]
            j, k = (i + 1) % 3, (i + 2) % 3
            count[code] = 1
            table[code, 0] = [i, _cross(i, j), _cross(k, i)]
            segment[code] = [_cross(i, j), _cross(k, i)]
        elif len(kept) == 2:
            k = next(v for v in range(3) if v not in kept)
            i, j = (k + 1) % 3, (k + 2) % 3
            count[code] = 2
            table[code] = [[i, j, _cross(j, k)], [i, _cross(j, k), _cross(k, i)]]
            segment[code] = [_cross(j, k), _cross(k, i)]
    return count, table, segment


CLIP_COUNT, CLIP_TABLE, CLIP_SEGMENT = _build_clip()


def validate_tables() -> None:
    """Check the generated tables against the case counts they must have."""
    expected = {0: 0, 1: 1, 2: 2, 3: 1, 4: 0}
    for code in range(16):
        n_neg = bin(code).count("1")
        if TRI_COUNT[code] != expected[n_neg]:
            raise ConsistencyError(f"marching-tets case {code} has {TRI_COUNT[code]} triangles")
        used = TRI_TABLE[code][: TRI_COUNT[code]]
        for e in np.unique(used[used >= 0]):
            a, b = TET_EDGES[e]
            if (code >> a & 1) == (code >> b & 1):
                raise ConsistencyError(f"marching-tets case {code} uses non-crossing edge {e}")
    for code in range(8):
        n_kept = bin(code).count("1")
        if CLIP_COUNT[code] != {0: 0, 1: 1, 2: 2, 3: 1}[n_kept]:
            raise ConsistencyError(f"clip case {code} has {CLIP_COUNT[code]} triangles")
        if (CLIP_SEGMENT[code, 0] >= 0) != (n_kept in (1, 2)):
            raise ConsistencyError(f"clip case {code} has a wrong boundary segment")


validate_tables()
