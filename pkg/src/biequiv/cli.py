"""Batch command-line front end.

Subcommands: ``gen`` (synthetic pair generation), ``assemble`` (run the
assembly model, optionally with ICP refinement or as composed complete
matching), ``match`` (complete matching), ``audit`` (numerical equivariance
and kernel-constraint certification), ``arun`` (closed-form alignment of
corresponded clouds) and ``icp``.

Every command is deterministic given its options plus ``--seed``.  Options
may also come from a JSON config document passed via ``--config``; explicit
command-line flags override config values and unknown config keys are
rejected.  Outputs are UTF-8 JSON and the cloud formats of the I/O module;
each report also renders a PNG figure next to its data files unless
``--no-plot`` is given.  The exit status is zero only when no error occurred
and all configured tolerances passed.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
from scipy.spatial import cKDTree

from . import cloud_io, figures, geometry
from .fields import PointCloud, RigidTransform
from .model import (
    AssemblyModel,
    ModelConfig,
    assemble as run_assembly,
    build_model,
    complete_match,
    equivariance_audit,
    load_model,
)
from .registration import (
    DegenerateSpectrum,
    UnderDeterminedProblem,
    arun_solve,
    correspondence_mse,
    icp_refine,
    loss,
    metrics,
)
from .kernels import certify_kernel_constraint


def _apply_config(ctx: click.Context, config_path) -> None:
    """Overlay JSON config values onto parameters the user did not set."""
    if config_path is None:
        return
    with open(config_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise click.UsageError("config document must be a JSON object")
    known = {p.name for p in ctx.command.params}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise click.UsageError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in doc.items():
        source = ctx.get_parameter_source(key)
        if source is None or source.name in ("DEFAULT", "DEFAULT_MAP"):
            ctx.params[key] = value


def _out_dir(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_pair(source, reference) -> tuple[PointCloud, PointCloud]:
    return cloud_io.load_cloud(source), cloud_io.load_cloud(reference)


def _build_or_load_model(model_path, init_seed, keypoints, neighbors, channels, use_normals) -> AssemblyModel:
    if model_path is not None:
        return load_model(model_path)
    config = ModelConfig(
        keypoints=keypoints, neighbors=neighbors, channels=channels, use_normals=use_normals
    )
    return build_model(config, seed=init_seed)


def _write_metrics(path, g: RigidTransform, g_gt: RigidTransform) -> dict:
    dr, dt = metrics(g, g_gt)
    doc = {
        "schema_version": 1,
        "rotation_error_deg": dr,
        "translation_error": dt,
        "loss": loss(g, g_gt),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return doc


_model_options = [
    click.option("--model", "model_path", type=click.Path(exists=True), default=None,
                 help="Load weights from a model JSON file."),
    click.option("--init-seed", type=int, default=0, show_default=True,
                 help="Seed for fresh random weights when no model file is given."),
    click.option("--keypoints", type=int, default=32, show_default=True),
    click.option("--neighbors", type=int, default=24, show_default=True),
    click.option("--channels", type=int, default=4, show_default=True),
    click.option("--use-normals", is_flag=True, default=False,
                 help="Feed the normals channel as an input feature."),
    click.option("--estimate-normals", "estimate_normals_k", type=int, default=None,
                 help="Attach normals estimated from this many neighbors before running."),
]


def _add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


def _maybe_normals(cloud: PointCloud, k: int | None) -> PointCloud:
    if k is None:
        return cloud
    return geometry.estimate_normals(cloud, k=k)


@click.group()
def main() -> None:
    """Bi-equivariant point-cloud assembly tools."""


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON config file.")
@click.option("--mesh", "mesh_path", default="icosphere", show_default=True,
              help="Mesh file (obj/ply) or the built-in 'icosphere'.")
@click.option("--samples", type=int, default=2048, show_default=True)
@click.option("--outliers", type=int, default=200, show_default=True)
@click.option("--outlier-box", type=float, default=1.0, show_default=True)
@click.option("--split-ratio", type=float, default=0.3, show_default=True)
@click.option("--crop", type=float, default=1.0, show_default=True,
              help="Keep this ratio of each part by a random plane (1 keeps all).")
@click.option("--rotation-scope", type=float, default=180.0, show_default=True)
@click.option("--translation", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.pass_context
def gen(ctx, config, mesh_path, samples, outliers, outlier_box, split_ratio, crop,
        rotation_scope, translation, seed, out, plot):
    """Generate a rigidly perturbed source/reference pair with ground truth.

    Samples the surface uniformly, appends box outliers, splits the cloud by
    a random plane and moves both parts by independent random rigid motions.
    Writes source.xyz, reference.xyz and gt.json (the transform aligning the
    source onto the reference).
    """
    _apply_config(ctx, config)
    p = ctx.params
    rng = np.random.default_rng(p["seed"])
    if p["mesh_path"] == "icosphere":
        mesh = geometry.icosphere()
    else:
        mesh = cloud_io.load_mesh(p["mesh_path"])
    cloud = geometry.sample_mesh(mesh, p["samples"], rng)
    cloud = geometry.add_outliers(cloud, p["outliers"], p["outlier_box"], rng)
    part_a, part_b = geometry.split_two(cloud, p["split_ratio"], rng)
    if p["crop"] < 1.0:
        part_a, _ = geometry.crop_by_plane(part_a, geometry.PlaneCropSpec(p["crop"]), rng)
        part_b, _ = geometry.crop_by_plane(part_b, geometry.PlaneCropSpec(p["crop"]), rng)
    g1 = geometry.random_rigid(rng, p["rotation_scope"], p["translation"])
    g2 = geometry.random_rigid(rng, p["rotation_scope"], p["translation"])
    source = part_a.transformed(g1)
    reference = part_b.transformed(g2)
    out_dir = _out_dir(p["out"])
    cloud_io.save_cloud(source, out_dir / "source.xyz")
    cloud_io.save_cloud(reference, out_dir / "reference.xyz")
    cloud_io.save_transform(
        g2.compose(g1.inverse()),
        out_dir / "gt.json",
        extra={
            "source_points": len(source),
            "reference_points": len(reference),
            "seed": p["seed"],
        },
    )
    if p["plot"]:
        figures.plot_assembly(out_dir / "pair.png", source.points, reference.points)
    click.echo(f"wrote {len(source)} source and {len(reference)} reference points to {out_dir}")


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON config file.")
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True))
@_add_options(_model_options)
@click.option("--gt", "gt_path", type=click.Path(exists=True), default=None,
              help="Ground-truth transform for metrics.")
@click.option("--refine", type=click.Choice(["none", "icp"]), default="none", show_default=True)
@click.option("--complete-match", "use_complete_match", is_flag=True, default=False,
              help="Compose with the self-match (requires swap ties).")
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.pass_context
def assemble(ctx, config, source, reference, model_path, init_seed, keypoints, neighbors,
             channels, use_normals, estimate_normals_k, gt_path, refine,
             use_complete_match, out, plot):
    """Estimate the rigid transform aligning the source cloud to the reference."""
    _apply_config(ctx, config)
    p = ctx.params
    x, y = _load_pair(p["source"], p["reference"])
    x = _maybe_normals(x, p["estimate_normals_k"])
    y = _maybe_normals(y, p["estimate_normals_k"])
    model = _build_or_load_model(p["model_path"], p["init_seed"], p["keypoints"],
                                 p["neighbors"], p["channels"], p["use_normals"])
    out_dir = _out_dir(p["out"])
    try:
        if p["use_complete_match"]:
            g = complete_match(model, x, y)
        else:
            g = run_assembly(model, x, y).transform
    except DegenerateSpectrum as exc:
        raise click.ClickException(f"degenerate feature spectrum: {exc}") from exc
    extra = {"refined": p["refine"]}
    if p["refine"] == "icp":
        tree = cKDTree(y.points)
        mse0 = correspondence_mse(x.points, tree, g)
        g = icp_refine(x, y, g)
        extra["initial_mse"] = mse0
        extra["final_mse"] = correspondence_mse(x.points, tree, g)
    cloud_io.save_transform(g, out_dir / "transform.json", extra=extra)
    if p["gt_path"] is not None:
        doc = _write_metrics(out_dir / "metrics.json", g, cloud_io.load_transform(p["gt_path"]))
        click.echo(f"rotation error {doc['rotation_error_deg']:.6g} deg, "
                   f"translation error {doc['translation_error']:.6g}")
    if p["plot"]:
        figures.plot_assembly(out_dir / "assembly.png", x.points, y.points, g.apply(x.points))
    click.echo(f"wrote transform to {out_dir / 'transform.json'}")


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON config file.")
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True))
@_add_options(_model_options)
@click.option("--gt", "gt_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.pass_context
def match(ctx, config, source, reference, model_path, init_seed, keypoints, neighbors,
          channels, use_normals, estimate_normals_k, gt_path, out, plot):
    """Complete matching: recover the transform relating two copies of a shape.

    Composes the pair assembly with the source self-assembly; with a
    swap-tied model this recovers the relating rigid motion exactly even for
    random untrained weights.
    """
    _apply_config(ctx, config)
    p = ctx.params
    x, y = _load_pair(p["source"], p["reference"])
    x = _maybe_normals(x, p["estimate_normals_k"])
    y = _maybe_normals(y, p["estimate_normals_k"])
    model = _build_or_load_model(p["model_path"], p["init_seed"], p["keypoints"],
                                 p["neighbors"], p["channels"], p["use_normals"])
    out_dir = _out_dir(p["out"])
    try:
        g = complete_match(model, x, y)
    except DegenerateSpectrum as exc:
        raise click.ClickException(f"degenerate feature spectrum: {exc}") from exc
    cloud_io.save_transform(g, out_dir / "transform.json")
    if p["gt_path"] is not None:
        doc = _write_metrics(out_dir / "metrics.json", g, cloud_io.load_transform(p["gt_path"]))
        click.echo(f"rotation error {doc['rotation_error_deg']:.6g} deg, "
                   f"translation error {doc['translation_error']:.6g}")
    if p["plot"]:
        figures.plot_assembly(out_dir / "match.png", x.points, y.points, g.apply(x.points))
    click.echo(f"wrote transform to {out_dir / 'transform.json'}")


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON config file.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for the random test clouds and perturbations.")
@_add_options(_model_options)
@click.option("--points", type=int, default=128, show_default=True)
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--tol", type=float, default=1e-9, show_default=True)
@click.option("--kernel-trials", type=int, default=25, show_default=True)
@click.option("--kernel-tol", type=float, default=1e-10, show_default=True)
@click.option("--break-swap-ties", is_flag=True, default=False,
              help="Fault injection: drop the swap weight ties.")
@click.option("--break-scale", is_flag=True, default=False,
              help="Fault injection: degree-1 radial networks in every layer.")
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.pass_context
def audit(ctx, config, seed, model_path, init_seed, keypoints, neighbors, channels,
          use_normals, estimate_normals_k, points, trials, tol, kernel_trials,
          kernel_tol, break_swap_ties, break_scale, out, plot):
    """Certify equivariances and the kernel constraint numerically.

    Measures the two-sided rigid, swap and scale residuals of the model on
    random clouds, checks every pair-layer kernel against the steerability
    constraint, writes audit.json and exits nonzero if any tolerance fails.
    """
    _apply_config(ctx, config)
    p = ctx.params
    if p["model_path"] is not None:
        model = load_model(p["model_path"])
    else:
        config_obj = ModelConfig(
            keypoints=p["keypoints"], neighbors=p["neighbors"], channels=p["channels"],
            use_normals=p["use_normals"],
            swap_tied=not p["break_swap_ties"],
            scale_chain=not p["break_scale"],
        )
        model = build_model(config_obj, seed=p["init_seed"])
    rng = np.random.default_rng(p["seed"])
    x = PointCloud(rng.normal(size=(p["points"], 3)))
    y = PointCloud(rng.normal(size=(p["points"], 3)) + rng.normal(size=3))
    if model.config.use_normals:
        x, y = geometry.estimate_normals(x), geometry.estimate_normals(y)
    report = equivariance_audit(model, x, y, trials=p["trials"], seed=rng)
    kernel_worst = 0.0
    specs = 0
    for layer in model.pair_stack.layers:
        for spec in list(layer.key_specs.values()) + list(layer.value_specs.values()):
            cert = certify_kernel_constraint(spec, trials=p["kernel_trials"], seed=rng)
            kernel_worst = max(kernel_worst, cert.max_residual)
            specs += 1
    passed = report.passed(p["tol"]) and kernel_worst < p["kernel_tol"]
    doc = {
        "schema_version": 1,
        "tolerance": p["tol"],
        "residuals": report.as_dict(),
        "kernel_constraint": {
            "specs": specs,
            "trials_per_spec": p["kernel_trials"],
            "max_residual": kernel_worst,
            "tolerance": p["kernel_tol"],
        },
        "passed": bool(passed),
    }
    out_dir = _out_dir(p["out"])
    with open(out_dir / "audit.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    if p["plot"]:
        residuals = dict(report.as_dict())
        residuals.pop("trials")
        figures.plot_audit(out_dir / "audit.png", residuals, p["tol"])
    for name, value in report.as_dict().items():
        if name != "trials":
            click.echo(f"{name}: {value:.3e}")
    click.echo(f"kernel constraint: {kernel_worst:.3e} over {specs} kernels")
    if not passed:
        raise click.ClickException("audit tolerances failed")
    click.echo("audit passed")


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON config file.")
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.pass_context
def arun(ctx, config, source, reference, gt_path, out):
    """Closed-form alignment of two corresponded, equal-length clouds."""
    _apply_config(ctx, config)
    p = ctx.params
    x, y = _load_pair(p["source"], p["reference"])
    try:
        g = arun_solve(x, y)
    except (DegenerateSpectrum, UnderDeterminedProblem, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    out_dir = _out_dir(p["out"])
    cloud_io.save_transform(g, out_dir / "transform.json")
    if p["gt_path"] is not None:
        _write_metrics(out_dir / "metrics.json", g, cloud_io.load_transform(p["gt_path"]))
    click.echo(f"wrote transform to {out_dir / 'transform.json'}")


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON config file.")
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--init", "init_path", type=click.Path(exists=True), default=None,
              help="Initial transform JSON (identity when omitted).")
@click.option("--max-iter", type=int, default=50, show_default=True)
@click.option("--tol", type=float, default=1e-10, show_default=True)
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.pass_context
def icp(ctx, config, source, reference, init_path, max_iter, tol, out, plot):
    """Iterative-closest-point refinement from an initial transform."""
    _apply_config(ctx, config)
    p = ctx.params
    x, y = _load_pair(p["source"], p["reference"])
    g0 = RigidTransform.identity() if p["init_path"] is None else cloud_io.load_transform(p["init_path"])
    history: list[float] = []
    g = icp_refine(x, y, g0, max_iter=p["max_iter"], tol=p["tol"], history=history)
    out_dir = _out_dir(p["out"])
    cloud_io.save_transform(
        g, out_dir / "transform.json",
        extra={"initial_mse": history[0], "final_mse": min(history)},
    )
    if p["plot"]:
        figures.plot_icp_history(out_dir / "icp.png", history)
        figures.plot_assembly(out_dir / "assembly.png", x.points, y.points, g.apply(x.points))
    click.echo(f"mse {history[0]:.6g} -> {min(history):.6g}; "
               f"wrote transform to {out_dir / 'transform.json'}")


if __name__ == "__main__":
    sys.exit(main())
