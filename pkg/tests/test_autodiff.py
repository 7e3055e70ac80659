"""Tests for the extraction vector-Jacobian products."""
import numpy as np
import numpy.testing as npt
import pytest

from gshell.autodiff import GridGradient, gradcheck, msdf_vjp, vjp
from gshell.errors import InvalidArgumentError
from gshell.extract import extract_gshell, extract_watertight
from gshell.grid import TetGrid, build_uniform_tet_grid
from gshell.tables import REF_TET


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _single_tet(sdf, msdf=None):
    return TetGrid(
        canonical_positions=REF_TET,
        offsets=np.zeros((4, 3)),
        deformation_scale=1.0,
        tets=[[0, 1, 2, 3]],
        sdf=sdf,
        msdf=np.ones(4) if msdf is None else msdf,
        resolution=1,
        bbox=((0, 0, 0), (1, 1, 1)),
    )


def _random_grid(resolution, seed):
    """sdf and msdf bounded away from zero so small steps keep every sign."""
    rng = np.random.default_rng(seed)
    grid = build_uniform_tet_grid(resolution)
    n = grid.num_vertices
    return grid.with_values(
        sdf=rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.05, 1.0, size=n),
        msdf=rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.05, 1.0, size=n),
        offsets=rng.uniform(-0.5, 0.5, size=(n, 3)),
    )


def _row(mesh, a, b):
    return int(np.flatnonzero((mesh.grid_edges == [a, b]).all(axis=1))[0])


# ---------------------------------------------------------------------------
# Analytic cases
# ---------------------------------------------------------------------------

class TestVjp:
    def test_zero_cotangent(self):
        grid = _random_grid(4, 0)
        mesh = extract_gshell(grid)
        g = vjp(grid, mesh, np.zeros_like(mesh.vertices))
        assert not np.any(g.sdf) and not np.any(g.msdf) and not np.any(g.offsets)

    def test_single_edge_sdf_gradient(self):
        grid = _single_tet([-1.0, 1.0, 1.0, 1.0])
        mesh = extract_watertight(grid)
        cot = np.zeros_like(mesh.vertices)
        cot[_row(mesh, 0, 1)] = [1.0, 0.0, 0.0]
        g = vjp(grid, mesh, cot)
        npt.assert_allclose(g.sdf, [-0.25, -0.25, 0.0, 0.0])
        npt.assert_allclose(g.offsets[0], [0.5, 0.0, 0.0])
        npt.assert_allclose(g.offsets[1], [0.5, 0.0, 0.0])
        assert not np.any(g.msdf)

    def test_gradient_is_local(self):
        grid = _random_grid(4, 1)
        mesh = extract_gshell(grid)
        for v in (0, mesh.num_surface):
            cot = np.zeros_like(mesh.vertices)
            cot[v] = [0.3, -0.2, 0.7]
            g = vjp(grid, mesh, cot)
            if v < mesh.num_surface:
                support = set(mesh.grid_edges[v].tolist())
            else:
                ta, tb = mesh.boundary_source[v - mesh.num_surface]
                support = set(mesh.watertight.grid_edges[[ta, tb]].ravel().tolist())
            touched = set(np.flatnonzero(g.sdf != 0).tolist()) | set(np.flatnonzero(np.any(g.offsets != 0, axis=1)).tolist())
            assert touched <= support

    def test_stop_gradient(self):
        grid = _random_grid(4, 2)
        mesh = extract_gshell(grid)
        cot = np.random.default_rng(0).normal(size=mesh.vertices.shape)
        full = vjp(grid, mesh, cot)
        only = vjp(grid, mesh, cot, wrt=("msdf",))
        npt.assert_array_equal(only.msdf, full.msdf)
        assert not np.any(only.sdf) and not np.any(only.offsets)

    def test_unknown_group(self):
        grid = _single_tet([-1.0, 1.0, 1.0, 1.0])
        mesh = extract_watertight(grid)
        with pytest.raises(InvalidArgumentError):
            vjp(grid, mesh, np.zeros_like(mesh.vertices), wrt=("colour",))

    def test_provenance_mismatch(self):
        grid = _single_tet([-1.0, 1.0, 1.0, 1.0])
        mesh = extract_watertight(grid)
        flipped = grid.with_values(sdf=[1.0, -1.0, 1.0, 1.0])
        with pytest.raises(InvalidArgumentError):
            vjp(flipped, mesh, np.zeros_like(mesh.vertices))

    def test_cotangent_shape(self):
        grid = _single_tet([-1.0, 1.0, 1.0, 1.0])
        mesh = extract_watertight(grid)
        with pytest.raises(InvalidArgumentError):
            vjp(grid, mesh, np.zeros((7, 3)))

    def test_msdf_vjp_reaches_msdf_only(self):
        grid = _single_tet([-1.0, 1.0, 1.0, 1.0], msdf=[0.0, 1.0, -2.0, 4.0])
        mesh = extract_gshell(grid)
        g = msdf_vjp(grid, mesh, np.ones(len(mesh.watertight.vertices)))
        npt.assert_allclose(g.msdf, [1.5, 0.5, 0.5, 0.5])
        assert not np.any(g.sdf) and not np.any(g.offsets)


class TestGridGradient:
    def test_add_and_scale(self):
        a = GridGradient(np.ones(2), np.full(2, 2.0), np.ones((2, 3)))
        b = (a + a).scaled(0.5)
        npt.assert_array_equal(b.sdf, a.sdf)
        npt.assert_array_equal(b.offsets, a.offsets)

    def test_is_finite(self):
        g = GridGradient.zeros(3)
        assert g.is_finite()
        g.msdf[1] = np.nan
        assert not g.is_finite()


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

class TestGradcheck:
    @pytest.mark.parametrize("seed", range(5))
    def test_gshell(self, seed):
        report = gradcheck(_random_grid(4, seed), mode="gshell", n_cases=20, seed=seed)
        assert report["checked"] > 0
        assert report["max_relative_error"] < 1e-4, report["failures"]

    def test_watertight(self):
        report = gradcheck(_random_grid(4, 7), mode="watertight", n_cases=30, seed=1)
        assert report["checked"] > 0
        assert report["max_relative_error"] < 1e-4, report["failures"]
        assert report["max_relative_error_by_group"]["msdf"] in (None, 0.0)

    def test_empty_mesh(self):
        with pytest.raises(InvalidArgumentError):
            gradcheck(_single_tet([1.0, 1.0, 1.0, 1.0]))
