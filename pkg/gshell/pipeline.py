"""Run a sequence of stages (gen, fit, extract, check, ...) and record a manifest.

Stages exchange typed artifacts (grid, mesh, points, report, pack) through a
context; each stage's inputs are type-checked before anything runs. Every
file is written atomically and listed in manifest.json with its sha256.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from . import formats
from .analysis import boundary_loops, manifold_report, sample_band, winding_numbers
from .config import PipelineSpec, StageSpec, load_fit_config
from .errors import InvalidArgumentError
from .extract import extract
from .fit import fit
from .geometry import sample_surface
from .grid import SHAPES, initial_grid, shape_grid
from .losses import loss_chamfer
from .tensorize import decode, encode
from .utils import sha256_file, stage_rng

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class StageContext:
    output_dir: Path
    threads: int
    artifacts: dict = field(default_factory=dict)
    written: list = field(default_factory=list)

    def require(self, kind: str, stage: StageSpec):
        if kind not in self.artifacts:
            raise InvalidArgumentError(f"stage {stage.name!r} needs a {kind} artifact")
        return self.artifacts[kind]

    def emit(self, kind: str, value, stage: StageSpec, path: Path | None = None) -> None:
        self.artifacts[kind] = value
        if path is not None:
            self.record(path, stage, kind)

    def record(self, path: Path, stage: StageSpec, kind: str) -> None:
        self.written.append({"path": path.name, "sha256": sha256_file(path), "stage": stage.name, "type": kind})


def _path(ctx: StageContext, stage: StageSpec, suffix: str) -> Path:
    return ctx.output_dir / f"{stage.name}.{suffix}"


# -------------------------
# STAGES
# -------------------------
def _stage_gen(stage, ctx, rng):
    cfg = stage.config
    shape = cfg.get("shape", "sphere")
    if shape not in SHAPES:
        raise InvalidArgumentError(f"unknown shape {shape!r}")
    grid = shape_grid(shape, int(cfg.get("resolution", 32)))
    ctx.emit("grid", grid, stage, formats.write_grid(grid, _path(ctx, stage, "grid.json")))
    n_points = int(cfg.get("points", 0))
    if n_points:
        mesh = extract(grid, "gshell", ctx.threads)
        points, _, _ = sample_surface(mesh.vertices, mesh.faces, n_points, rng)
        ctx.emit("points", points, stage, formats.write_ply(points, _path(ctx, stage, "points.ply")))


def _stage_fit(stage, ctx, rng):
    cfg = dict(stage.config)
    points_file = cfg.pop("points_file", None)
    points = formats.read_points(points_file) if points_file else ctx.require("points", stage)
    init = cfg.pop("init", "sphere")
    resolution = int(cfg.pop("resolution", 32))
    config_file = cfg.pop("config", None)
    if init == "sphere":
        grid = initial_grid(resolution, rng)
    elif init == "grid":
        grid = ctx.require("grid", stage)
    else:
        raise InvalidArgumentError(f"fit init must be 'sphere' or 'grid', got {init!r}")
    config = load_fit_config(config_file, overrides=cfg)
    fitted, report = fit(grid, points, config, rng=rng, threads=ctx.threads)
    ctx.emit("grid", fitted, stage, formats.write_grid(fitted, _path(ctx, stage, "grid.json")))
    ctx.emit("report", report.to_dict(), stage, formats.write_report(report.to_dict(), _path(ctx, stage, "report.json")))


def _stage_extract(stage, ctx, rng):
    grid = ctx.require("grid", stage)
    mesh = extract(grid, stage.config.get("mode", "gshell"), ctx.threads)
    ctx.emit("mesh", mesh, stage, formats.write_obj(mesh, _path(ctx, stage, "obj")))
    if stage.config.get("boundary", False):
        doc = formats.boundary_document(mesh, boundary_loops(mesh.faces))
        ctx.record(formats.write_report(doc, _path(ctx, stage, "boundary.json")), stage, "report")


def _stage_check(stage, ctx, rng):
    report = manifold_report(ctx.require("mesh", stage))
    ctx.emit("report", report, stage, formats.write_report(report, _path(ctx, stage, "json")))


def _stage_winding(stage, ctx, rng):
    mesh = ctx.require("mesh", stage)
    n = int(stage.config.get("samples", 1000))
    band = float(stage.config.get("band", 0.05))
    queries = sample_band(mesh, n, band, rng)
    w, perturbed, distance = winding_numbers(mesh, queries, ctx.threads)
    frame = pd.DataFrame({"x": queries[:, 0], "y": queries[:, 1], "z": queries[:, 2], "winding": w, "dist_to_surface": distance, "perturbed": perturbed})
    ctx.record(formats.write_csv(frame, _path(ctx, stage, "csv")), stage, "report")


def _stage_metrics(stage, ctx, rng):
    mesh = ctx.require("mesh", stage)
    points = ctx.require("points", stage)
    samples = int(stage.config.get("samples", 100000))
    report = {"chamfer": loss_chamfer(mesh, points, samples=samples, rng=rng), "samples": samples}
    ctx.emit("report", report, stage, formats.write_report(report, _path(ctx, stage, "json")))


def _stage_tensorize(stage, ctx, rng):
    grid = ctx.require("grid", stage)
    t = encode(grid, normalize_sdf=bool(stage.config.get("normalize_sdf", False)))
    path = formats.write_gsp(t, _path(ctx, stage, "gsp"), dtype=stage.config.get("dtype", "<f4"))
    ctx.emit("pack", t, stage, path)


def _stage_detensorize(stage, ctx, rng):
    grid, _ = decode(ctx.require("pack", stage))
    ctx.emit("grid", grid, stage, formats.write_grid(grid, _path(ctx, stage, "grid.json")))


STAGES = {
    "gen": (_stage_gen, (), ("grid", "points")),
    "fit": (_stage_fit, ("points",), ("grid", "report")),
    "extract": (_stage_extract, ("grid",), ("mesh",)),
    "check": (_stage_check, ("mesh",), ("report",)),
    "winding": (_stage_winding, ("mesh",), ()),
    "metrics": (_stage_metrics, ("mesh", "points"), ("report",)),
    "tensorize": (_stage_tensorize, ("grid",), ("pack",)),
    "detensorize": (_stage_detensorize, ("pack",), ("grid",)),
}


def _stage_inputs(stage: StageSpec) -> tuple:
    inputs = STAGES[stage.kind][1]
    if stage.kind == "fit" and stage.config.get("points_file"):
        inputs = ()
    if stage.kind == "fit" and stage.config.get("init", "sphere") == "grid":
        inputs = inputs + ("grid",)
    return inputs


def _stage_outputs(stage: StageSpec) -> tuple:
    outputs = STAGES[stage.kind][2]
    if stage.kind == "gen" and not int(stage.config.get("points", 0)):
        outputs = ("grid",)
    return outputs


def check_stage_types(spec: PipelineSpec) -> None:
    """Every stage's inputs must be produced by an earlier stage."""
    available = set()
    for stage in spec.stages:
        if stage.kind not in STAGES:
            raise InvalidArgumentError(f"stage {stage.name!r}: unknown kind {stage.kind!r}; expected one of {sorted(STAGES)}")
        missing = [k for k in _stage_inputs(stage) if k not in available]
        if missing:
            raise InvalidArgumentError(f"stage {stage.name!r} needs {missing}, which no earlier stage produces")
        available.update(_stage_outputs(stage))


# -------------------------
# RUNNER
# -------------------------
def _write_manifest(spec: PipelineSpec, ctx: StageContext, stages: list, status: str, error: str | None = None) -> dict:
    manifest = {
        "status": status,
        "seed": spec.seed,
        "stages": stages,
        "artifacts": ctx.written,
    }
    if error is not None:
        manifest["error"] = error
    formats.write_report(manifest, spec.output_dir / MANIFEST_NAME)
    return manifest


def run_pipeline(spec: PipelineSpec, threads: int | None = None) -> dict:
    """Run every stage in order; returns the manifest (also written to output_dir/manifest.json).

    On a failing stage the manifest records the completed stages with status
    "failed" and the exception is re-raised.
    """
    check_stage_types(spec)
    output_dir = Path(spec.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ctx = StageContext(output_dir=output_dir, threads=spec.threads if threads is None else threads)
    completed = []
    for index, stage in enumerate(spec.stages):
        logger.info("stage %s (%s): begin", stage.name, stage.kind)
        start = time.perf_counter()
        try:
            STAGES[stage.kind][0](stage, ctx, stage_rng(spec.seed, stage.name, index))
        except Exception as exc:
            logger.error("stage %s failed: %s", stage.name, exc)
            completed.append({"name": stage.name, "kind": stage.kind, "status": "failed"})
            _write_manifest(spec, ctx, completed, "failed", f"{type(exc).__name__}: {exc}")
            raise
        completed.append({"name": stage.name, "kind": stage.kind, "status": "ok"})
        logger.info("stage %s: end (%.2fs)", stage.name, time.perf_counter() - start)
    return _write_manifest(spec, ctx, completed, "ok")


def manifest_hashes(manifest: dict) -> dict:
    return {a["path"]: a["sha256"] for a in manifest["artifacts"]}
