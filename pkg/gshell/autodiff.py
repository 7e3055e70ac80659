"""Reverse-mode derivatives of extracted geometry with respect to grid attributes.

Two nested quotient rules: template vertices u = (1 - a) p_a + a p_b with
a = s_a / (s_a - s_b), and boundary vertices o = (1 - b) u_a + b u_b with
b = v_a / (v_a - v_b) over the projected mSDF v. Gradients are only valid
for the sign configuration of the mesh they were computed on.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .extract import ExtractedMesh, extract, grid_signature, interpolation_coefficient, project_msdf
from .grid import TetGrid

logger = logging.getLogger(__name__)

GROUPS = ("sdf", "msdf", "offsets")


@dataclass
class GridGradient:
    sdf: np.ndarray
    msdf: np.ndarray
    offsets: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GridGradient":
        return cls(np.zeros(n), np.zeros(n), np.zeros((n, 3)))

    def __add__(self, other: "GridGradient") -> "GridGradient":
        return GridGradient(self.sdf + other.sdf, self.msdf + other.msdf, self.offsets + other.offsets)

    def scaled(self, c: float) -> "GridGradient":
        return GridGradient(c * self.sdf, c * self.msdf, c * self.offsets)

    def masked(self, wrt) -> "GridGradient":
        """Zero every group not named in `wrt` (stop-gradient)."""
        wrt = _check_wrt(wrt)
        return GridGradient(
            self.sdf if "sdf" in wrt else np.zeros_like(self.sdf),
            self.msdf if "msdf" in wrt else np.zeros_like(self.msdf),
            self.offsets if "offsets" in wrt else np.zeros_like(self.offsets),
        )

    def as_dict(self) -> dict:
        return {"sdf": self.sdf, "msdf": self.msdf, "offsets": self.offsets}

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.sdf)) and np.all(np.isfinite(self.msdf)) and np.all(np.isfinite(self.offsets)))


def _check_wrt(wrt) -> tuple:
    wrt = tuple(wrt)
    unknown = [w for w in wrt if w not in GROUPS]
    if unknown:
        raise InvalidArgumentError(f"unknown gradient group(s) {unknown}; expected a subset of {GROUPS}")
    return wrt


def _check_provenance(grid: TetGrid, mesh: ExtractedMesh) -> None:
    if mesh.signature != grid_signature(grid):
        raise InvalidArgumentError("mesh was not extracted from this grid (or the sdf signs have changed since)")


def _scatter3(index, values, n):
    out = np.zeros((n, 3))
    for axis in range(3):
        out[:, axis] = np.bincount(index, weights=values[:, axis], minlength=n)
    return out


# -------------------------
# TEMPLATE LEVEL
# -------------------------
def template_vjp(grid: TetGrid, template: ExtractedMesh, g_u=None, g_nu=None, wrt=GROUPS) -> GridGradient:
    """Pull cotangents on template positions (ns, 3) and projected mSDF (ns,) back to the grid.

    bincount accumulation keeps the reduction order fixed.
    """
    wrt = _check_wrt(wrt)
    n = grid.num_vertices
    keys = template.grid_edges
    ns = len(keys)
    g_u = np.zeros((ns, 3)) if g_u is None else np.asarray(g_u, dtype=np.float64).reshape(ns, 3)
    g_nu = np.zeros(ns) if g_nu is None else np.asarray(g_nu, dtype=np.float64).reshape(ns)
    if ns == 0:
        return GridGradient.zeros(n)

    a, b = keys[:, 0], keys[:, 1]
    s_a, s_b = grid.sdf[a], grid.sdf[b]
    alpha, live = interpolation_coefficient(s_a, s_b)
    pos = grid.positions

    g_alpha = np.einsum("ij,ij->i", g_u, pos[b] - pos[a]) + g_nu * (grid.msdf[b] - grid.msdf[a])
    g_alpha = np.where(live, g_alpha, 0.0)
    d2 = np.where(live, (s_a - s_b) ** 2, 1.0)
    g_sdf = np.bincount(a, weights=g_alpha * -s_b / d2, minlength=n) + np.bincount(b, weights=g_alpha * s_a / d2, minlength=n)
    g_msdf = np.bincount(a, weights=(1.0 - alpha) * g_nu, minlength=n) + np.bincount(b, weights=alpha * g_nu, minlength=n)
    g_pos = _scatter3(a, (1.0 - alpha)[:, None] * g_u, n) + _scatter3(b, alpha[:, None] * g_u, n)
    return GridGradient(g_sdf, g_msdf, grid.deformation_scale * g_pos).masked(wrt)


def msdf_vjp(grid: TetGrid, mesh: ExtractedMesh, g_nu, wrt=("msdf",)) -> GridGradient:
    """Gradient of a loss that acts directly on the template's projected mSDF.

    Defaults to msdf only, the stop-gradient the mSDF regularisers need.
    """
    _check_provenance(grid, mesh)
    return template_vjp(grid, mesh.watertight, g_nu=g_nu, wrt=wrt)


# -------------------------
# MESH LEVEL
# -------------------------
def vjp(grid: TetGrid, mesh: ExtractedMesh, cotangents, wrt=GROUPS) -> GridGradient:
    """Gradient of sum_v <cotangents[v], mesh.vertices[v]> over (sdf, msdf, offsets)."""
    _check_provenance(grid, mesh)
    wrt = _check_wrt(wrt)
    cot = np.asarray(cotangents, dtype=np.float64).reshape(-1, 3)
    if len(cot) != len(mesh.vertices):
        raise InvalidArgumentError(f"{len(cot)} cotangents for a mesh with {len(mesh.vertices)} vertices")
    if mesh.template is None:
        return template_vjp(grid, mesh, g_u=cot, wrt=wrt)

    template = mesh.template
    if template.projected_msdf is None:
        template = project_msdf(grid, template)
    ns = len(template.vertices)
    nu = template.projected_msdf
    u = template.vertices

    g_u = _scatter3(mesh.template_ids, cot[: mesh.num_surface], ns)
    g_nu = np.zeros(ns)
    if mesh.num_boundary:
        c = cot[mesh.num_surface :]
        ca, cb = mesh.boundary_source[:, 0], mesh.boundary_source[:, 1]
        beta, live = interpolation_coefficient(nu[ca], nu[cb])
        g_u += _scatter3(ca, (1.0 - beta)[:, None] * c, ns) + _scatter3(cb, beta[:, None] * c, ns)
        g_beta = np.where(live, np.einsum("ij,ij->i", c, u[cb] - u[ca]), 0.0)
        d2 = np.where(live, (nu[ca] - nu[cb]) ** 2, 1.0)
        g_nu += np.bincount(ca, weights=g_beta * -nu[cb] / d2, minlength=ns)
        g_nu += np.bincount(cb, weights=g_beta * nu[ca] / d2, minlength=ns)
    return template_vjp(grid, template, g_u=g_u, g_nu=g_nu, wrt=wrt)


# -------------------------
# FINITE-DIFFERENCE CHECK
# -------------------------
def _same_topology(m0: ExtractedMesh, m1: ExtractedMesh) -> bool:
    return (
        m0.signature == m1.signature
        and m0.faces.shape == m1.faces.shape
        and np.array_equal(m0.faces, m1.faces)
        and np.array_equal(m0.template_ids, m1.template_ids)
        and np.array_equal(m0.boundary_source, m1.boundary_source)
    )


def _perturbed(grid: TetGrid, group: str, index: int, axis: int, delta: float) -> TetGrid:
    values = getattr(grid, group).copy()
    if group == "offsets":
        values[index, axis] += delta
    else:
        values[index] += delta
    return grid.with_values(**{group: values})


def gradcheck(grid: TetGrid, mode: str = "gshell", n_cases: int = 100, seed: int = 0, h: float = 1e-5, atol: float = 1e-6) -> dict:
    """Compare vjp against central differences on randomly chosen grid parameters.

    Each case draws a random cotangent and one parameter feeding the mesh.
    Steps that change the sign configuration are skipped, as are offsets whose
    step would hit the [-1, 1] clip. Relative error uses max(|analytic|, |fd|, atol)
    as denominator.
    """
    rng = np.random.default_rng(seed)
    mesh = extract(grid, mode)
    if len(mesh.vertices) == 0:
        raise InvalidArgumentError("gradcheck needs a non-empty mesh")
    support = np.unique(mesh.watertight.grid_edges)
    scale = {g: max(1.0, float(np.max(np.abs(getattr(grid, g))))) for g in GROUPS}

    errors = {g: [] for g in GROUPS}
    skipped = 0
    failures = []
    for case in range(n_cases):
        cot = rng.normal(size=mesh.vertices.shape)
        group = GROUPS[rng.integers(len(GROUPS))]
        index = int(support[rng.integers(len(support))])
        axis = int(rng.integers(3))
        analytic = vjp(grid, mesh, cot).as_dict()[group]
        analytic = float(analytic[index, axis] if group == "offsets" else analytic[index])

        step = h * scale[group]
        if group == "offsets" and abs(grid.offsets[index, axis]) + step >= 1.0:
            skipped += 1
            continue
        plus = extract(_perturbed(grid, group, index, axis, step), mode)
        minus = extract(_perturbed(grid, group, index, axis, -step), mode)
        if not (_same_topology(mesh, plus) and _same_topology(mesh, minus)):
            skipped += 1
            continue
        fd = float(np.sum(cot * (plus.vertices - minus.vertices))) / (2.0 * step)
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), atol)
        errors[group].append(rel)
        if rel >= 1e-4:
            failures.append({"case": case, "group": group, "index": index, "axis": axis, "analytic": analytic, "finite_difference": fd, "relative_error": rel})

    checked = sum(len(v) for v in errors.values())
    if skipped:
        logger.info("gradcheck skipped %d of %d cases (sign change or clip)", skipped, n_cases)
    every = [e for v in errors.values() for e in v]
    return {
        "mode": mode,
        "cases": n_cases,
        "checked": checked,
        "skipped": skipped,
        "max_relative_error": max(every) if every else 0.0,
        "max_relative_error_by_group": {g: (max(v) if v else None) for g, v in errors.items()},
        "failures": failures,
    }
