"""Tests for watertight and open-surface extraction."""
import time

import numpy as np
import numpy.testing as npt
import pytest
from scipy.spatial import cKDTree

from gshell.analysis import manifold_report
from gshell.errors import DataError, InvalidArgumentError
from gshell.extract import (
    BoundaryVertex,
    MeshVertex,
    clip_oracle,
    extract,
    extract_gshell,
    extract_watertight,
    interpolation_coefficient,
    project_msdf,
)
from gshell.geometry import face_normals, sample_surface, triangle_areas
from gshell.grid import TetGrid, build_uniform_tet_grid, shape_grid
from gshell.tables import REF_TET


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _tets_grid(positions, tets, sdf, msdf=None):
    """Grid over arbitrary tets; resolution and bbox are placeholders."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    return TetGrid(
        canonical_positions=positions,
        offsets=np.zeros((n, 3)),
        deformation_scale=1.0,
        tets=tets,
        sdf=sdf,
        msdf=np.ones(n) if msdf is None else msdf,
        resolution=1,
        bbox=((0, 0, 0), (1, 1, 1)),
    )


def _single_tet(sdf, msdf=None, positions=REF_TET):
    return _tets_grid(positions, [[0, 1, 2, 3]], sdf, msdf)


def _random_grid(resolution, seed):
    rng = np.random.default_rng(seed)
    grid = build_uniform_tet_grid(resolution)
    n = grid.num_vertices
    signs = lambda: rng.choice([-1.0, 1.0], size=n)  # noqa: E731
    return grid.with_values(
        sdf=signs() * rng.uniform(0.05, 1.0, size=n),
        msdf=signs() * rng.uniform(0.05, 1.0, size=n),
        offsets=rng.uniform(-0.3, 0.3, size=(n, 3)),
    )


def _signed_volume(mesh):
    tri = mesh.vertices[mesh.faces]
    return float(np.sum(np.einsum("fi,fi->f", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])))) / 6.0


@pytest.fixture(scope="module")
def sphere_mesh():
    return extract_watertight(shape_grid("sphere", 32))


@pytest.fixture(scope="module")
def hemisphere():
    grid = shape_grid("hemisphere", 32)
    return grid, extract_gshell(grid)


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------

class TestInterpolationCoefficient:
    def test_midpoint(self):
        t, live = interpolation_coefficient(-1.0, 1.0)
        assert t == 0.5 and live

    def test_quarter(self):
        t, _ = interpolation_coefficient(-1.0, 3.0)
        assert t == pytest.approx(0.25)

    def test_clamped(self):
        t, live = interpolation_coefficient(0.0, 1.0)
        assert t == pytest.approx(1e-6)
        assert not live

    def test_degenerate_denominator(self):
        t, live = interpolation_coefficient(1e-14, 1e-14)
        assert t == 0.5 and not live


# ---------------------------------------------------------------------------
# Watertight extraction
# ---------------------------------------------------------------------------

class TestWatertight:
    def test_single_negative_vertex(self):
        mesh = extract_watertight(_single_tet([-1.0, 1.0, 1.0, 1.0]))
        assert len(mesh.faces) == 1
        npt.assert_allclose(np.sort(mesh.vertices, axis=0), np.sort(0.5 * REF_TET[1:], axis=0))
        assert face_normals(mesh.vertices, mesh.faces)[0] @ np.ones(3) > 0

    def test_two_negative_vertices(self):
        mesh = extract_watertight(_single_tet([-1.0, -1.0, 1.0, 1.0]))
        assert len(mesh.faces) == 2
        assert len(mesh.vertices) == 4
        assert len(mesh.diagonals) == 1

    def test_vertex_on_edge(self):
        positions = np.array([[0, 0, 0], [4, 0, 0], [0, 4, 0], [0, 0, 4]], dtype=float)
        mesh = extract_watertight(_single_tet([-1.0, 3.0, 3.0, 3.0], positions=positions))
        row = np.flatnonzero((mesh.grid_edges == [0, 1]).all(axis=1))[0]
        npt.assert_allclose(mesh.vertices[row], [1.0, 0.0, 0.0])
        assert mesh.alpha[row] == pytest.approx(0.25)

    def test_uniform_sign_is_empty(self):
        for value in (1.0, -1.0, 0.0):
            mesh = extract_watertight(_single_tet([value] * 4))
            assert mesh.is_empty and len(mesh.vertices) == 0

    def test_zero_counts_as_positive(self):
        mesh = extract_watertight(_single_tet([-1.0, 0.0, 1.0, 1.0]))
        assert len(mesh.faces) == 1

    def test_sphere_is_closed_genus_zero(self, sphere_mesh):
        report = manifold_report(sphere_mesh)
        assert report["euler_characteristic"] == 2
        assert report["is_closed"] and report["is_manifold"]
        assert report["edge_incidence_histogram"] == {"2": report["edges"]}

    def test_sphere_outward_and_close(self, sphere_mesh):
        volume = _signed_volume(sphere_mesh)
        npt.assert_allclose(volume, 4.0 / 3.0 * np.pi * 0.5**3, rtol=0.05)
        diag = np.sqrt(3) * 2.0 / 32
        assert np.max(np.abs(np.linalg.norm(sphere_mesh.vertices, axis=1) - 0.5)) < 1.5 * diag

    def test_vertex_keys_are_sorted(self, sphere_mesh):
        keys = sphere_mesh.grid_edges
        order = np.lexsort((keys[:, 1], keys[:, 0]))
        npt.assert_array_equal(order, np.arange(len(keys)))

    def test_non_finite_sdf(self):
        with pytest.raises(DataError, match="vertex 2"):
            extract_watertight(_single_tet([-1.0, 1.0, np.nan, 1.0]))

    def test_deterministic(self):
        grid = _random_grid(6, 3)
        a, b = extract_watertight(grid), extract_watertight(grid)
        npt.assert_array_equal(a.vertices, b.vertices)
        npt.assert_array_equal(a.faces, b.faces)

    def test_thread_count_does_not_change_output(self):
        grid = _random_grid(16, 4)
        one, many = extract_gshell(grid, threads=1), extract_gshell(grid, threads=4)
        npt.assert_array_equal(one.vertices, many.vertices)
        npt.assert_array_equal(one.faces, many.faces)
        npt.assert_array_equal(one.boundary_edges, many.boundary_edges)


# ---------------------------------------------------------------------------
# mSDF projection and clipping
# ---------------------------------------------------------------------------

class TestProjectMsdf:
    def test_midpoint_value(self):
        grid = _single_tet([-1.0, 1.0, 1.0, 1.0], msdf=[2.0, 4.0, 4.0, 4.0])
        mesh = project_msdf(grid, extract_watertight(grid))
        npt.assert_allclose(mesh.projected_msdf, [3.0, 3.0, 3.0])

    def test_rejects_clipped_mesh(self):
        grid = _single_tet([-1.0, 1.0, 1.0, 1.0])
        with pytest.raises(InvalidArgumentError):
            project_msdf(grid, extract_gshell(grid))


class TestClipOracle:
    def test_crossing_point(self):
        positions = np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0]], dtype=float)
        triangles, segments = clip_oracle(positions, [-1.0, 1.0, 1.0])
        assert len(triangles) == 2 and len(segments) == 1
        points = np.concatenate(triangles)
        assert np.any(np.all(np.isclose(points, [1.0, 0.0, 0.0]), axis=1))

    def test_all_kept(self):
        triangles, segments = clip_oracle(REF_TET[:3], [1.0, 1.0, 1.0])
        assert len(triangles) == 1 and not segments
        npt.assert_array_equal(triangles[0], REF_TET[:3])

    def test_all_discarded(self):
        assert clip_oracle(REF_TET[:3], [-1.0, -1.0, -1.0]) == ([], [])

    def test_area_three_quarters(self):
        triangles, _ = clip_oracle(REF_TET[:3], [-1.0, 1.0, 1.0])
        area = sum(0.5 * np.linalg.norm(np.cross(t[1] - t[0], t[2] - t[0])) for t in triangles)
        assert area == pytest.approx(0.75 * 0.5)


class TestGShell:
    def test_all_positive_matches_watertight(self):
        for seed in range(50):
            grid = _random_grid(4, seed)
            grid = grid.with_values(msdf=np.ones(grid.num_vertices))
            open_mesh, closed = extract_gshell(grid), extract_watertight(grid)
            npt.assert_array_equal(open_mesh.vertices, closed.vertices)
            npt.assert_array_equal(open_mesh.faces, closed.faces)
            assert len(open_mesh.boundary_edges) == 0

    def test_all_negative_is_empty(self):
        grid = _random_grid(4, 0)
        mesh = extract_gshell(grid.with_values(msdf=-np.ones(grid.num_vertices)))
        assert mesh.is_empty and len(mesh.vertices) == 0
        assert not mesh.watertight.is_empty

    def test_vertex_accessor(self):
        grid = _single_tet([-1.0, 1.0, 1.0, 1.0], msdf=[0.0, 1.0, -2.0, 4.0])
        mesh = extract_gshell(grid)
        assert isinstance(mesh.vertex(0), MeshVertex)
        assert isinstance(mesh.vertex(len(mesh.vertices) - 1), BoundaryVertex)
        assert mesh.num_surface + mesh.num_boundary == len(mesh.vertices)

    def test_boundary_vertices_on_zero_level(self, hemisphere):
        _, mesh = hemisphere
        nu = mesh.template.projected_msdf
        ca, cb = mesh.boundary_source[:, 0], mesh.boundary_source[:, 1]
        residual = (1.0 - mesh.beta) * nu[ca] + mesh.beta * nu[cb]
        npt.assert_allclose(residual, 0.0, atol=1e-6)
        assert np.all((nu[ca] >= 0) != (nu[cb] >= 0))

    def test_hemisphere_topology(self, hemisphere):
        _, mesh = hemisphere
        report = manifold_report(mesh)
        assert report["boundary_loops"] == 1
        assert report["euler_characteristic"] == 1
        assert report["is_manifold"]
        assert report["edge_incidence_histogram"]["1"] == len(mesh.boundary_edges)

    def test_hemisphere_boundary_near_equator(self, hemisphere):
        _, mesh = hemisphere
        ids = np.unique(mesh.boundary_edges)
        o = mesh.vertices[ids]
        to_circle = np.hypot(np.hypot(o[:, 0], o[:, 1]) - 0.5, o[:, 2])
        assert np.max(to_circle) <= 0.05 * 0.5

    def test_unknown_mode(self):
        with pytest.raises(InvalidArgumentError):
            extract(_single_tet([-1.0, 1.0, 1.0, 1.0]), mode="dual")

    def test_non_finite_msdf(self):
        with pytest.raises(DataError):
            extract_gshell(_single_tet([-1.0, 1.0, 1.0, 1.0], msdf=[1.0, np.inf, 1.0, 1.0]))

    def test_matches_clip_oracle(self):
        rng = np.random.default_rng(11)
        n = 10_000
        positions = rng.uniform(0.0, 1.0, size=(n, 4, 3))
        d = positions[:, 1:] - positions[:, :1]
        flip = np.linalg.det(d) < 0
        positions[flip, 2:] = positions[flip][:, [3, 2]]
        grid = _tets_grid(
            positions.reshape(-1, 3),
            np.arange(4 * n).reshape(n, 4),
            rng.uniform(-1.0, 1.0, size=4 * n),
            rng.uniform(-1.0, 1.0, size=4 * n),
        )
        mesh = extract_gshell(grid)
        template = mesh.template
        nu = template.projected_msdf

        oracle_area = np.zeros(n)
        oracle_points, segment_count = [], 0
        for face, tet in zip(template.faces, template.face_tets):
            triangles, segments = clip_oracle(template.vertices[face], nu[face])
            segment_count += len(segments)
            for tri in triangles:
                oracle_area[tet] += 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
                oracle_points.append(tri)

        mesh_area = np.bincount(mesh.face_tets, weights=triangle_areas(mesh.vertices, mesh.faces), minlength=n)
        npt.assert_allclose(mesh_area, oracle_area, rtol=1e-9, atol=1e-12)
        assert segment_count == len(mesh.boundary_edges)

        used = mesh.vertices[np.unique(mesh.faces)]
        oracle_points = np.concatenate(oracle_points)
        assert np.max(cKDTree(used).query(oracle_points)[0]) < 1e-12
        assert np.max(cKDTree(oracle_points).query(used)[0]) < 1e-12

    def test_clipping_conserves_area_per_tet(self):
        grid = _random_grid(6, 5)
        kept = extract_gshell(grid)
        dropped = extract_gshell(grid.with_values(msdf=-grid.msdf))
        n = len(grid.tets)

        def per_tet(mesh):
            return np.bincount(mesh.face_tets, weights=triangle_areas(mesh.vertices, mesh.faces), minlength=n)

        assert len(kept.boundary_edges) > 0
        npt.assert_allclose(per_tet(kept) + per_tet(dropped), per_tet(kept.template), rtol=1e-9, atol=1e-15)

    def test_hemisphere_close_to_analytic_surface(self, hemisphere):
        _, mesh = hemisphere
        points, _, _ = sample_surface(mesh.vertices, mesh.faces, 20_000, np.random.default_rng(0))
        ring = np.hypot(points[:, 0], points[:, 1])
        on_cap = np.abs(np.linalg.norm(points, axis=1) - 0.5)
        to_rim = np.hypot(ring - 0.5, points[:, 2])
        distance = np.where(points[:, 2] >= 0, on_cap, to_rim)
        diag = np.sqrt(3) * 2.0 / 32
        assert np.mean(distance) <= 1.5 * diag
        assert np.max(distance) <= 1.5 * diag


@pytest.mark.slow
def test_sphere_extraction_runtime():
    grid = shape_grid("sphere", 32)
    extract_watertight(grid)
    start = time.perf_counter()
    mesh = extract_watertight(grid)
    elapsed = time.perf_counter() - start
    assert not mesh.is_empty
    assert elapsed < 1.0
