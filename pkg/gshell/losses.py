"""Geometry loss terms.

Every term takes `grad=False` and returns a float, or with `grad=True` a
(float, GridGradient) pair. Gradients of the two mSDF regularisers reach
msdf only.
"""
import logging

import numpy as np

from .autodiff import GridGradient, msdf_vjp, vjp
from .errors import InvalidArgumentError
from .extract import ExtractedMesh, project_msdf
from .geometry import nearest_points, point_mesh_distance, sample_surface
from .grid import TetGrid

logger = logging.getLogger(__name__)

CHAMFER_EMPTY = 1e6
DEGENERATE_DET = 1e-12


# -------------------------
# HUBER
# -------------------------
def huber(x, delta: float = 1.0):
    """x^2 / 2 on |x| <= delta, delta * (|x| - delta / 2) beyond."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    return np.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def huber_grad(x, delta: float = 1.0):
    x = np.asarray(x, dtype=np.float64)
    return np.clip(x, -delta, delta)


def _template_nu(grid: TetGrid, mesh: ExtractedMesh) -> np.ndarray:
    template = mesh.watertight
    if template.projected_msdf is None:
        template = project_msdf(grid, template)
    return template.projected_msdf


# -------------------------
# mSDF REGULARISERS
# -------------------------
def loss_msdf_reg_open(grid: TetGrid, mesh: ExtractedMesh, delta: float = 1.0, grad: bool = False):
    """Sum of Huber(nu') over template vertices with nu' >= 0; pulls kept mSDF towards zero."""
    nu = _template_nu(grid, mesh)
    kept = nu >= 0
    value = float(np.sum(huber(nu[kept], delta)))
    if not grad:
        return value
    g_nu = np.where(kept, huber_grad(nu, delta), 0.0)
    return value, msdf_vjp(grid, mesh, g_nu)


def loss_msdf_reg_close(grid: TetGrid, mesh: ExtractedMesh, epsilon: float = 1e-3, delta: float = 1.0, grad: bool = False):
    """Sum of Huber(nu'(o) - epsilon) over boundary vertices o.

    nu'(o) = (1 - beta) nu'_a + beta nu'_b with beta held fixed, so the value
    is epsilon^2 / 2 per boundary vertex while the gradient pushes both
    template endpoints towards +epsilon.
    """
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be positive")
    nu = _template_nu(grid, mesh)
    if mesh.template is None or mesh.num_boundary == 0:
        return (0.0, GridGradient.zeros(grid.num_vertices)) if grad else 0.0
    ca, cb = mesh.boundary_source[:, 0], mesh.boundary_source[:, 1]
    beta = mesh.beta
    residual = (1.0 - beta) * nu[ca] + beta * nu[cb] - epsilon
    value = float(np.sum(huber(residual, delta)))
    if not grad:
        return value
    g = huber_grad(residual, delta)
    g_nu = np.bincount(ca, weights=(1.0 - beta) * g, minlength=len(nu)) + np.bincount(cb, weights=beta * g, minlength=len(nu))
    return value, msdf_vjp(grid, mesh, g_nu)


# -------------------------
# SDF REGULARISERS
# -------------------------
def _bce_with_logits(x, target):
    return np.maximum(x, 0.0) - target * x + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def loss_sdf_reg(grid: TetGrid, grad: bool = False):
    """Cross-entropy between sigmoid(s_i) and the sign of s_j (and vice versa) over every grid edge."""
    edges = grid.edges
    s_i, s_j = grid.sdf[edges[:, 0]], grid.sdf[edges[:, 1]]
    t_i, t_j = (s_i >= 0).astype(np.float64), (s_j >= 0).astype(np.float64)
    value = float(np.sum(_bce_with_logits(s_i, t_j) + _bce_with_logits(s_j, t_i)))
    if not grad:
        return value
    n = grid.num_vertices
    g_sdf = np.bincount(edges[:, 0], weights=_sigmoid(s_i) - t_j, minlength=n)
    g_sdf += np.bincount(edges[:, 1], weights=_sigmoid(s_j) - t_i, minlength=n)
    return value, GridGradient(g_sdf, np.zeros(n), np.zeros((n, 3)))


def vertex_source_tets(mesh: ExtractedMesh) -> np.ndarray:
    """Lowest-index tet among the faces touching each template vertex (-1 if none)."""
    template = mesh.watertight
    ns = len(template.vertices)
    source = np.full(ns, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(source, template.faces.ravel(), np.repeat(template.face_tets, 3))
    source[source == np.iinfo(np.int64).max] = -1
    return source


def loss_eikonal_discrete(grid: TetGrid, mesh: ExtractedMesh, grad: bool = False):
    """Mean of (|grad s| - 1)^2 over template vertices, grad s being the linear gradient over the source tet."""
    n = grid.num_vertices
    zero = GridGradient.zeros(n)
    source = vertex_source_tets(mesh)
    source = source[source >= 0]
    if len(source) == 0:
        return (0.0, zero) if grad else 0.0

    tets = grid.tets[source]
    pos = grid.positions
    m = pos[tets[:, 1:]] - pos[tets[:, :1]]
    ds = grid.sdf[tets[:, 1:]] - grid.sdf[tets[:, :1]]
    det = np.linalg.det(m)
    scale = np.max(np.abs(m), axis=(1, 2)) ** 3
    ok = np.abs(det) > DEGENERATE_DET * np.maximum(scale, 1e-300)
    if not ok.all():
        logger.warning("eikonal term: excluded %d vertices with degenerate source tets", int((~ok).sum()))
    if not ok.any():
        return (0.0, zero) if grad else 0.0
    tets, m, ds = tets[ok], m[ok], ds[ok]

    g = np.linalg.solve(m, ds[..., None])[..., 0]
    norm = np.linalg.norm(g, axis=1)
    count = len(g)
    value = float(np.mean((norm - 1.0) ** 2))
    if not grad:
        return value

    w = np.where(norm[:, None] > 0, (2.0 / count) * ((norm - 1.0) / np.where(norm > 0, norm, 1.0))[:, None] * g, 0.0)
    c = np.linalg.solve(np.transpose(m, (0, 2, 1)), w[..., None])[..., 0]
    g_sdf = np.zeros(n)
    for k in range(3):
        g_sdf += np.bincount(tets[:, k + 1], weights=c[:, k], minlength=n)
    g_sdf -= np.bincount(tets[:, 0], weights=c.sum(axis=1), minlength=n)

    rows = -c[:, :, None] * g[:, None, :]
    g_pos = np.zeros((n, 3))
    for axis in range(3):
        for k in range(3):
            g_pos[:, axis] += np.bincount(tets[:, k + 1], weights=rows[:, k, axis], minlength=n)
        g_pos[:, axis] -= np.bincount(tets[:, 0], weights=rows[:, :, axis].sum(axis=1), minlength=n)
    return value, GridGradient(g_sdf, np.zeros(n), grid.deformation_scale * g_pos)


# -------------------------
# CHAMFER
# -------------------------
def loss_chamfer(mesh: ExtractedMesh, target_points, samples: int | None = None, rng: np.random.Generator | None = None, grid: TetGrid | None = None, grad: bool = False):
    """0.5 * (mean target->surface distance + mean surface-sample->target distance).

    Surface samples are drawn first from `rng`; when `samples` is smaller than
    the target cloud a random subset of targets is used. Returns CHAMFER_EMPTY
    for an empty mesh. With grad=True, `grid` must be the mesh's source grid.
    """
    target = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    if len(target) == 0:
        raise InvalidArgumentError("target point cloud is empty")
    if grad and grid is None:
        raise InvalidArgumentError("loss_chamfer(grad=True) needs the source grid")
    rng = np.random.default_rng(0) if rng is None else rng
    n = len(target) if samples is None else int(samples)
    if mesh.is_empty:
        logger.warning("chamfer evaluated on an empty mesh; returning %g", CHAMFER_EMPTY)
        return (CHAMFER_EMPTY, GridGradient.zeros(grid.num_vertices)) if grad else CHAMFER_EMPTY

    v, f = mesh.vertices, mesh.faces
    points, face_ids, bary = sample_surface(v, f, n, rng)
    if n < len(target):
        target = target[rng.choice(len(target), size=n, replace=False)]

    d_to_mesh, hit_face, hit_bary, closest = point_mesh_distance(target, v, f)
    d_to_target, nearest = nearest_points(points, target)
    value = 0.5 * (float(np.mean(d_to_mesh)) + float(np.mean(d_to_target)))
    if not grad:
        return value

    cot = np.zeros_like(v)
    # target -> surface: d(|t - c|)/dc = (c - t) / |t - c|
    dirs = np.divide(closest - target, d_to_mesh[:, None], out=np.zeros_like(target), where=d_to_mesh[:, None] > 0)
    for k in range(3):
        np.add.at(cot, f[hit_face, k], (0.5 / len(target)) * hit_bary[:, k : k + 1] * dirs)
    dirs = np.divide(points - target[nearest], d_to_target[:, None], out=np.zeros_like(points), where=d_to_target[:, None] > 0)
    for k in range(3):
        np.add.at(cot, f[face_ids, k], (0.5 / n) * bary[:, k : k + 1] * dirs)
    return value, vjp(grid, mesh, cot)
