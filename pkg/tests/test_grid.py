"""Tests for the uniform tetrahedral grid and analytic field sampling."""
import numpy as np
import numpy.testing as npt
import pytest

from gshell.errors import DataError, InvalidArgumentError
from gshell.grid import (
    CUBE_TETS,
    AnalyticField,
    build_uniform_tet_grid,
    hemisphere_field,
    initial_grid,
    sample_fields,
    shape_grid,
    sphere_field,
    vertex_index,
)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _signed_volumes(grid):
    p = grid.positions[grid.tets]
    return np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

class TestBuildUniformTetGrid:
    @pytest.mark.parametrize("resolution, nv, nt", [(2, 27, 48), (3, 64, 162), (4, 125, 384)])
    def test_counts(self, resolution, nv, nt):
        grid = build_uniform_tet_grid(resolution)
        assert grid.num_vertices == nv
        assert len(grid.tets) == nt

    def test_vertex_order_is_lexicographic(self):
        grid = build_uniform_tet_grid(3)
        p = grid.canonical_positions
        order = np.lexsort((p[:, 2], p[:, 1], p[:, 0]))
        npt.assert_array_equal(order, np.arange(grid.num_vertices))

    def test_tets_tile_the_box(self):
        grid = build_uniform_tet_grid(3, bbox=((0, 0, 0), (1, 2, 3)))
        vol = _signed_volumes(grid)
        assert np.all(vol > 0)
        npt.assert_allclose(vol.sum(), 6.0, rtol=1e-12)

    def test_interior_faces_shared_by_two_tets(self):
        grid = build_uniform_tet_grid(3)
        faces = np.sort(grid.tets[:, [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]].reshape(-1, 3), axis=1)
        _, counts = np.unique(faces, axis=0, return_counts=True)
        assert set(counts.tolist()) <= {1, 2}
        # boundary faces: 2 triangles per cell face on the 6 box sides
        assert int(np.sum(counts == 1)) == 6 * 9 * 2

    def test_cube_tets_cover_unit_cube(self):
        d = (CUBE_TETS[:, 1:] - CUBE_TETS[:, :1]).astype(float)
        vol = np.linalg.det(d) / 6.0
        assert np.all(vol > 0)
        npt.assert_allclose(vol.sum(), 1.0)

    def test_edges_sorted_and_unique(self):
        grid = build_uniform_tet_grid(2)
        e = grid.edges
        assert np.all(e[:, 0] < e[:, 1])
        assert len(np.unique(e, axis=0)) == len(e)
        # 3 axis directions, 3 face diagonals, 1 body diagonal per the Kuhn split
        assert len(e) == 3 * 2 * 9 + 3 * 4 * 3 + 8

    def test_default_deformation_scale_is_half_cell(self):
        grid = build_uniform_tet_grid(4)
        assert grid.deformation_scale == pytest.approx(0.25)

    def test_vertex_index_matches_lattice(self):
        grid = build_uniform_tet_grid(3)
        npt.assert_array_equal(vertex_index(grid.lattice, 3), np.arange(grid.num_vertices))

    @pytest.mark.parametrize("resolution", [0, 1, 2.5])
    def test_bad_resolution(self, resolution):
        with pytest.raises(InvalidArgumentError):
            build_uniform_tet_grid(resolution)

    def test_degenerate_bbox(self):
        with pytest.raises(InvalidArgumentError):
            build_uniform_tet_grid(2, bbox=((0, 0, 0), (1, 0, 1)))


class TestOffsets:
    def test_positions_are_canonical_plus_scaled_offsets(self):
        grid = build_uniform_tet_grid(2)
        offsets = np.random.default_rng(0).uniform(-0.5, 0.5, size=(grid.num_vertices, 3))
        moved = grid.with_values(offsets=offsets)
        npt.assert_allclose(moved.positions, grid.canonical_positions + grid.deformation_scale * offsets)

    def test_offsets_are_clipped(self):
        grid = build_uniform_tet_grid(2)
        moved = grid.with_values(offsets=np.full((grid.num_vertices, 3), 2.0))
        assert np.all(moved.offsets == 1.0)

    def test_with_values_leaves_original(self):
        grid = build_uniform_tet_grid(2)
        grid.with_values(sdf=np.ones(grid.num_vertices))
        assert np.all(grid.sdf == 0)

    def test_length_mismatch(self):
        grid = build_uniform_tet_grid(2)
        with pytest.raises(InvalidArgumentError):
            grid.with_values(sdf=np.ones(3))


# ---------------------------------------------------------------------------
# Field sampling
# ---------------------------------------------------------------------------

class TestSampleFields:
    def test_sphere_center(self):
        grid = sample_fields(build_uniform_tet_grid(2), sphere_field(0.5))
        assert grid.sdf[13] == pytest.approx(-0.5)
        assert np.all(grid.msdf == 1.0)

    def test_hemisphere_msdf_sign_follows_z(self):
        grid = shape_grid("hemisphere", 4)
        z = grid.positions[:, 2]
        npt.assert_array_equal(grid.msdf >= 0, z >= 0)

    def test_non_finite_names_vertex(self):
        def sdf(x):
            values = np.ones(len(x))
            values[5] = np.nan
            return values

        field = AnalyticField(sdf_fn=sdf, msdf_fn=lambda x: np.ones(len(x)))
        with pytest.raises(DataError, match="vertex 5"):
            sample_fields(build_uniform_tet_grid(2), field)

    def test_wrong_length(self):
        field = AnalyticField(sdf_fn=lambda x: np.ones(3), msdf_fn=lambda x: np.ones(len(x)))
        with pytest.raises(DataError):
            sample_fields(build_uniform_tet_grid(2), field)

    def test_unknown_shape(self):
        with pytest.raises(InvalidArgumentError):
            shape_grid("torus", 4)

    def test_initial_grid(self):
        grid = initial_grid(4, np.random.default_rng(0))
        center = vertex_index(np.array([2, 2, 2]), 4)
        assert grid.sdf[center] == pytest.approx(-0.5)
        assert np.all((grid.msdf >= -0.01) & (grid.msdf < 0.99))
