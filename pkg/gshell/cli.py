"""Command-line entry point: `python -m gshell <command>`."""
import functools
import json
import logging
import sys

import click
import pandas as pd

from . import formats
from .analysis import boundary_loops, manifold_report, sample_band, winding_numbers
from .autodiff import gradcheck
from .config import load_fit_config, load_pipeline_spec
from .errors import GShellError
from .extract import extract
from .fit import fit as run_fit
from .geometry import sample_surface
from .grid import SHAPES, initial_grid, shape_grid
from .losses import loss_chamfer
from .pipeline import run_pipeline
from .tensorize import decode, encode, extract_from_table
from .utils import configure_logging, default_threads, stage_rng

logger = logging.getLogger(__name__)


def _handle_errors(fn):
    """Map library errors to their exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GShellError as exc:
            click.echo(f"error: {exc}", err=True)
            click.get_current_context().exit(exc.exit_code)

    return wrapper


def _rng(ctx: click.Context, name: str):
    return stage_rng(ctx.obj["seed"], name)


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Root seed for every random stream.")
@click.option("--threads", type=int, default=default_threads, help="Worker threads (default: $GSHELL_THREADS or 1).")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False), default="WARNING", show_default=True)
@click.pass_context
def main(ctx, seed, threads, log_level):
    """Open and closed mesh extraction from SDF + mSDF grids."""
    configure_logging(log_level)
    ctx.obj = {"seed": seed, "threads": max(1, threads)}


@main.command()
@click.option("--shape", type=click.Choice(sorted(SHAPES)), required=True)
@click.option("--res", "resolution", type=int, default=32, show_default=True, help="Cells per axis.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--points", "n_points", type=int, default=0, help="Also sample this many surface points.")
@click.option("--points-out", type=click.Path(dir_okay=False), help="Where to write the sampled points (.ply or .xyz).")
@click.pass_context
@_handle_errors
def gen(ctx, shape, resolution, out, n_points, points_out):
    """Sample an analytic shape onto a uniform grid."""
    grid = shape_grid(shape, resolution)
    formats.write_grid(grid, out)
    click.echo(f"wrote {out} ({grid.num_vertices} vertices, {len(grid.tets)} tets)")
    if n_points:
        if not points_out:
            raise click.UsageError("--points needs --points-out")
        mesh = extract(grid, "gshell", ctx.obj["threads"])
        points, _, _ = sample_surface(mesh.vertices, mesh.faces, n_points, _rng(ctx, "gen"))
        formats.write_points(points, points_out)
        click.echo(f"wrote {points_out} ({n_points} points)")


@main.command(name="extract")
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--mode", type=click.Choice(["watertight", "gshell"]), default="gshell", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--boundary", type=click.Path(dir_okay=False), help="Write boundary loops and edges as JSON.")
@click.pass_context
@_handle_errors
def extract_cmd(ctx, grid_path, mode, out, boundary):
    """Extract a mesh from a grid JSON file."""
    mesh = extract(formats.read_grid(grid_path), mode, ctx.obj["threads"])
    formats.write_obj(mesh, out)
    if boundary:
        formats.write_report(formats.boundary_document(mesh, boundary_loops(mesh.faces)), boundary)
    click.echo(f"wrote {out} ({len(mesh.vertices)} vertices, {len(mesh.faces)} faces, {len(mesh.boundary_edges)} boundary edges)")


@main.command(name="fit")
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), help="Initial grid; default is a sphere.")
@click.option("--res", "resolution", type=int, default=32, show_default=True, help="Resolution of the sphere initialisation.")
@click.option("--points", "points_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--iterations", type=int, help="Override the configured iteration count.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--report", type=click.Path(dir_okay=False))
@click.pass_context
@_handle_errors
def fit_cmd(ctx, grid_path, resolution, points_path, config_path, iterations, out, report):
    """Fit a grid to a point cloud."""
    overrides = {} if iterations is None else {"iterations": iterations}
    config = load_fit_config(config_path, overrides)
    rng = _rng(ctx, "fit")
    grid = formats.read_grid(grid_path) if grid_path else initial_grid(resolution, rng)
    fitted, fit_report = run_fit(grid, formats.read_points(points_path), config, rng=rng, threads=ctx.obj["threads"])
    formats.write_grid(fitted, out)
    if report:
        formats.write_report(fit_report.to_dict(), report)
    click.echo(f"final chamfer {fit_report.final_chamfer:.6g} (best iteration {fit_report.best_iteration})")


@main.command()
@click.option("--mesh", "mesh_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--points", "points_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--samples", type=int, default=100000, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
@_handle_errors
def metrics(ctx, mesh_path, points_path, samples, out):
    """Symmetric Chamfer distance between a mesh and a point cloud."""
    value = loss_chamfer(formats.read_obj(mesh_path), formats.read_points(points_path), samples=samples, rng=_rng(ctx, "metrics"))
    if out:
        formats.write_report({"chamfer": value, "samples": samples}, out)
    click.echo(f"chamfer {value!r}")


@main.command()
@click.option("--mesh", "mesh_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False))
@_handle_errors
def check(mesh_path, out):
    """Manifoldness report of a mesh."""
    report = manifold_report(formats.read_obj(mesh_path))
    if out:
        formats.write_report(report, out)
    summary = {k: report[k] for k in ("euler_characteristic", "boundary_loops", "components", "is_closed", "is_manifold")}
    click.echo(json.dumps(summary))


@main.command()
@click.option("--mesh", "mesh_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--near-surface-band", "band", type=float, default=0.05, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
@_handle_errors
def winding(ctx, mesh_path, samples, band, out):
    """Winding numbers at points sampled in a band around the surface (CSV)."""
    mesh = formats.read_obj(mesh_path)
    queries = sample_band(mesh, samples, band, _rng(ctx, "winding"))
    w, perturbed, distance = winding_numbers(mesh, queries, ctx.obj["threads"])
    frame = pd.DataFrame({"x": queries[:, 0], "y": queries[:, 1], "z": queries[:, 2], "winding": w, "dist_to_surface": distance, "perturbed": perturbed})
    formats.write_csv(frame, out)
    click.echo(f"wrote {out} ({samples} samples)")


@main.command(name="gradcheck", hidden=True)
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--mode", type=click.Choice(["watertight", "gshell"]), default="gshell")
@click.option("--cases", type=int, default=100)
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
@_handle_errors
def gradcheck_cmd(ctx, grid_path, mode, cases, out):
    report = gradcheck(formats.read_grid(grid_path), mode, cases, ctx.obj["seed"])
    if out:
        formats.write_report(report, out)
    click.echo(json.dumps({k: report[k] for k in ("checked", "skipped", "max_relative_error")}))


@main.command()
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--dtype", type=click.Choice(["<f4", "<f8"]), default="<f4", show_default=True)
@click.option("--alpha-factor", type=click.Choice(["2", "4"]), default="4", show_default=True)
@click.option("--normalize-sdf", is_flag=True, help="Store sign(sdf) instead of sdf (lossy).")
@click.pass_context
@_handle_errors
def tensorize(ctx, grid_path, out, dtype, alpha_factor, normalize_sdf):
    """Pack a grid and its open-surface clipping into a .gsp file."""
    t = encode(formats.read_grid(grid_path), alpha_factor=int(alpha_factor), normalize_sdf=normalize_sdf)
    formats.write_gsp(t, out, dtype=dtype)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--mesh-out", type=click.Path(dir_okay=False), help="Also extract the open surface from the packed slot values.")
@_handle_errors
def detensorize(in_path, out, mesh_out):
    """Unpack a .gsp file into a grid JSON."""
    grid, table = decode(formats.read_gsp(in_path))
    formats.write_grid(grid, out)
    if mesh_out:
        formats.write_obj(extract_from_table(grid, table), mesh_out)
    click.echo(f"wrote {out}")


@main.command()
@click.argument("spec_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_handle_errors
def pipeline(ctx, spec_path):
    """Run a YAML pipeline spec."""
    spec = load_pipeline_spec(spec_path)
    manifest = run_pipeline(spec, threads=ctx.obj["threads"])
    click.echo(f"{len(manifest['artifacts'])} artifacts in {spec.output_dir}")


if __name__ == "__main__":
    sys.exit(main())
