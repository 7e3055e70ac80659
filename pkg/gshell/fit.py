"""Gradient-based fitting of a TetGrid to a target point cloud."""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import manifold_report, manifold_summary
from .autodiff import GridGradient
from .config import FitConfig
from .errors import InvalidArgumentError, NumericError
from .extract import extract
from .grid import TetGrid
from .losses import loss_chamfer, loss_eikonal_discrete, loss_msdf_reg_close, loss_msdf_reg_open, loss_sdf_reg
from .optim import Adam

logger = logging.getLogger(__name__)

TERMS = ("chamfer", "msdf_open", "msdf_close", "sdf_reg", "eikonal")


@dataclass
class IterationRecord:
    iteration: int
    total: float
    terms: dict
    chamfer: float
    boundary_edges: int
    faces: int


@dataclass
class FitReport:
    records: list = field(default_factory=list)
    final_chamfer: float | None = None
    manifold: dict = field(default_factory=dict)
    best_iteration: int = -1
    tau: float | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "final_chamfer": self.final_chamfer,
            "manifold": self.manifold,
            "best_iteration": self.best_iteration,
            "tau": self.tau,
            "config": self.config,
        }


def _term_weights(config: FitConfig, iteration: int, rho: float) -> dict:
    return {
        "chamfer": config.weight_chamfer(iteration),
        "msdf_open": config.weight_msdf_open(iteration) / rho,
        "msdf_close": config.weight_msdf_close(iteration) / rho,
        "sdf_reg": config.weight_sdf_reg(iteration),
        "eikonal": config.weight_eikonal(iteration),
    }


def _evaluate_terms(grid, mesh, target, config, weights, rng):
    """Value of every term and the weighted gradient sum."""
    n = grid.num_vertices
    gradient = GridGradient.zeros(n)
    values = {}

    def add(name, value_and_grad):
        nonlocal gradient
        value, g = value_and_grad
        values[name] = value
        if weights[name] != 0:
            gradient = gradient + g.scaled(weights[name])

    gshell = config.mode == "gshell"
    add("chamfer", loss_chamfer(mesh, target, samples=config.samples_per_iter, rng=rng, grid=grid, grad=True))
    if gshell and weights["msdf_open"] != 0:
        add("msdf_open", loss_msdf_reg_open(grid, mesh, config.huber_delta, grad=True))
    else:
        values["msdf_open"] = 0.0
    if gshell and weights["msdf_close"] != 0:
        add("msdf_close", loss_msdf_reg_close(grid, mesh, config.epsilon, config.huber_delta, grad=True))
    else:
        values["msdf_close"] = 0.0
    if weights["sdf_reg"] != 0:
        add("sdf_reg", loss_sdf_reg(grid, grad=True))
    else:
        values["sdf_reg"] = 0.0
    if weights["eikonal"] != 0:
        add("eikonal", loss_eikonal_discrete(grid, mesh, grad=True))
    else:
        values["eikonal"] = 0.0
    return values, gradient


def fit(grid: TetGrid, target_points, config: FitConfig, rng: np.random.Generator | None = None, threads: int = 1, callback=None):
    """Fit sdf, msdf and offsets to `target_points`.

    Returns the grid with the lowest per-iteration Chamfer estimate and a
    FitReport. In watertight mode msdf is frozen at +1.
    """
    target = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    if len(target) == 0:
        raise InvalidArgumentError("target point cloud is empty")
    config.validate()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    gshell = config.mode == "gshell"
    if not gshell:
        grid = grid.with_values(msdf=np.ones(grid.num_vertices))
    rho = config.rho(grid.resolution)

    groups = {"sdf": grid.sdf.shape, "offsets": grid.offsets.shape}
    learning_rates = {"sdf": config.lr_sdf, "offsets": config.lr_offsets}
    if gshell:
        groups["msdf"] = grid.msdf.shape
        learning_rates["msdf"] = config.lr_msdf
    optimizer = Adam(groups, learning_rates, betas=config.betas, decay_rate=config.lr_decay)

    report = FitReport(tau=config.tau(0), config=config.to_dict())
    best_grid, best_chamfer = grid, np.inf
    mode = "gshell" if gshell else "watertight"
    logger.info("fit: %d iterations, mode=%s, R=%d, %d target points", config.iterations, mode, grid.resolution, len(target))

    for iteration in range(config.iterations):
        mesh = extract(grid, mode, threads)
        weights = _term_weights(config, iteration, rho)
        values, gradient = _evaluate_terms(grid, mesh, target, config, weights, rng)
        for name in TERMS:
            if not np.isfinite(values[name]):
                raise NumericError(f"loss term {name} is not finite at iteration {iteration}")
        if not gradient.is_finite():
            raise NumericError(f"gradient is not finite at iteration {iteration}")
        total = float(sum(weights[k] * values[k] for k in TERMS))
        report.records.append(
            IterationRecord(iteration, total, values, values["chamfer"], len(mesh.boundary_edges), len(mesh.faces))
        )
        if values["chamfer"] < best_chamfer:
            best_chamfer, best_grid = values["chamfer"], grid
            report.best_iteration = iteration
        if iteration % config.log_every == 0:
            logger.info("iter %d: total=%.6g chamfer=%.6g faces=%d boundary=%d", iteration, total, values["chamfer"], len(mesh.faces), len(mesh.boundary_edges))
        if callback is not None:
            callback(report.records[-1])

        updates = optimizer.step({k: getattr(gradient, k) for k in groups})
        grid = grid.with_values(
            sdf=grid.sdf + updates["sdf"],
            msdf=grid.msdf + updates["msdf"] if gshell else None,
            offsets=grid.offsets + updates["offsets"],
        )

    final = extract(best_grid, mode, threads)
    report.final_chamfer = float(loss_chamfer(final, target, samples=config.eval_samples, rng=rng))
    report.manifold = manifold_summary(manifold_report(final))
    logger.info("fit done: best iteration %d, final chamfer %.6g", report.best_iteration, report.final_chamfer)
    return best_grid, report
