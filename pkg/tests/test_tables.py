"""Tests for the generated marching-tets and triangle-clip tables."""
import numpy as np
import numpy.testing as npt
import pytest

from gshell.grid import TET_EDGES
from gshell.tables import (
    CLIP_COUNT,
    CLIP_SEGMENT,
    CLIP_TABLE,
    QUAD_DIAGONALS,
    REF_TET,
    TRI_COUNT,
    TRI_SIDES,
    TRI_TABLE,
    TRI_TABLE_ALT,
)

TRIANGLE = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _edge_midpoints():
    return REF_TET[TET_EDGES].mean(axis=1)


def _normal(tri):
    return np.cross(tri[1] - tri[0], tri[2] - tri[0])


def _clip_points():
    """Triangle corners followed by the midpoints of its three sides."""
    mids = np.array([(TRIANGLE[a] + TRIANGLE[b]) / 2 for a, b in TRI_SIDES])
    return np.concatenate([TRIANGLE, mids])


# ---------------------------------------------------------------------------
# Marching tets
# ---------------------------------------------------------------------------

class TestMarchingTetsTable:
    @pytest.mark.parametrize("code", range(16))
    def test_triangle_count(self, code):
        n_neg = bin(code).count("1")
        assert TRI_COUNT[code] == {0: 0, 1: 1, 2: 2, 3: 1, 4: 0}[n_neg]

    @pytest.mark.parametrize("code", [c for c in range(16) if TRI_COUNT[c] > 0])
    @pytest.mark.parametrize("table", [TRI_TABLE, TRI_TABLE_ALT])
    def test_normals_face_positive_side(self, code, table):
        if table is TRI_TABLE_ALT and TRI_COUNT[code] != 2:
            pytest.skip("alternate split only exists for quads")
        negative = [v for v in range(4) if code >> v & 1]
        positive = [v for v in range(4) if not code >> v & 1]
        direction = REF_TET[positive].mean(axis=0) - REF_TET[negative].mean(axis=0)
        mids = _edge_midpoints()
        for tri in table[code][: TRI_COUNT[code]]:
            assert _normal(mids[tri]) @ direction > 0

    @pytest.mark.parametrize("code", [c for c in range(16) if TRI_COUNT[c] == 2])
    def test_quad_splits_share_one_diagonal(self, code):
        for table, diagonal in ((TRI_TABLE, QUAD_DIAGONALS[code, 0]), (TRI_TABLE_ALT, QUAD_DIAGONALS[code, 1])):
            t0, t1 = (set(t.tolist()) for t in table[code])
            assert t0 | t1 == set(np.unique(TRI_TABLE[code]).tolist())
            assert t0 & t1 == set(diagonal.tolist())

    @pytest.mark.parametrize("code", range(1, 15))
    def test_only_crossing_edges_used(self, code):
        used = TRI_TABLE[code][: TRI_COUNT[code]].ravel()
        for e in used:
            a, b = TET_EDGES[e]
            assert (code >> a & 1) != (code >> b & 1)


# ---------------------------------------------------------------------------
# Clip table
# ---------------------------------------------------------------------------

class TestClipTable:
    @pytest.mark.parametrize("code, count", [(0, 0), (1, 1), (2, 1), (4, 1), (3, 2), (5, 2), (6, 2), (7, 1)])
    def test_counts(self, code, count):
        assert CLIP_COUNT[code] == count

    @pytest.mark.parametrize("code", range(1, 8))
    def test_orientation_preserved(self, code):
        points = _clip_points()
        for tri in CLIP_TABLE[code][: CLIP_COUNT[code]]:
            assert _normal(points[tri])[2] > 0

    @pytest.mark.parametrize("code", range(1, 8))
    def test_kept_area(self, code):
        points = _clip_points()
        area = sum(0.5 * np.linalg.norm(_normal(points[t])) for t in CLIP_TABLE[code][: CLIP_COUNT[code]])
        expected = {1: 0.25, 2: 0.75, 3: 1.0}[bin(code).count("1")] * 0.5
        npt.assert_allclose(area, expected)

    @pytest.mark.parametrize("code", [1, 2, 3, 4, 5, 6])
    def test_segment_follows_face_direction(self, code):
        a, b = CLIP_SEGMENT[code]
        assert a >= 3 and b >= 3
        directed = {(int(t[k]), int(t[(k + 1) % 3])) for t in CLIP_TABLE[code][: CLIP_COUNT[code]] for k in range(3)}
        assert (int(a), int(b)) in directed

    @pytest.mark.parametrize("code", [0, 7])
    def test_no_segment_when_uncut(self, code):
        npt.assert_array_equal(CLIP_SEGMENT[code], [-1, -1])
