"""Command-line interface: eval, synth, transfer, basis build/fit.

Exit codes: 0 success, 1 partial failure (some shapes failed), 2 config or
I/O error.
"""

import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import click
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .evaluate import bicp_evaluate, gicp_stats, region_mean_stats
from .fixtures import donor_face, synth_fixture_corpus, synthetic_face
from .mesh import MeshbenchError
from .meshio import (
    Annotations,
    load_annotations,
    load_mesh,
    save_annotations,
    save_mesh,
)
from .morphable import (
    DEFAULT_VARIANCE_CUTOFF,
    fit_residual_mm,
    fit_to_mesh,
    load_basis,
    pca_build,
    reconstruct,
    save_basis,
)
from .nicp import NicpSchedule, NicpStage
from .report import (
    new_report,
    read_report,
    region_report_dict,
    stats_dict,
    summarize,
    write_report,
)
from .rigid import IcpParams
from .transfer import crop_by_nose_radius, transfer_keypoints, transfer_region

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_CONFIG)


@click.group()
def main():
    """Region-aware evaluation toolkit for 3D mesh reconstruction."""


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_DEFAULT_PARAMS = {
    "ricp": {"max_iterations": 100, "tolerance_mm2": 1e-6},
    "gicp": {"max_iterations": 100, "tolerance_mm2": 1e-6},
    "nicp": {
        "tolerance_mm": 1e-6,
        "stages": [
            {"distance_weight": 0.0, "landmark_weight": 50.0,
             "stiffness_weight": 150.0, "decay_factor": 0.5, "steps": 4},
            {"distance_weight": 1.0, "landmark_weight": 5.0,
             "stiffness_weight": 50.0, "decay_factor": 0.5, "steps": 4},
        ],
    },
}


def _resolve_config(raw: dict, config_dir: Path) -> dict:
    config = {"params": json.loads(json.dumps(_DEFAULT_PARAMS)), "shapes": []}
    params = raw.get("params", {})
    for group in ("ricp", "gicp", "nicp"):
        for key, value in params.get(group, {}).items():
            if key not in config["params"][group]:
                raise MeshbenchError(f"unknown parameter params.{group}.{key}")
            config["params"][group][key] = value
    shapes = raw.get("shapes", [])
    if not shapes:
        raise MeshbenchError("config lists no [[shapes]]")
    for i, shape in enumerate(shapes):
        entry = {}
        for key in ("pred", "gt", "gt_annotations", "pred_keypoints"):
            if key not in shape:
                raise MeshbenchError(f"shapes[{i}] lacks {key!r}")
            entry[key] = str((config_dir / shape[key]).resolve())
        entry["name"] = str(shape.get("name", f"shape{i}"))
        config["shapes"].append(entry)
    config["output"] = {
        "report": str((config_dir / raw.get("output", {}).get(
            "report", "report.json")).resolve()),
    }
    return config


def _schedule_from_config(nicp_cfg: dict) -> NicpSchedule:
    stages = tuple(
        NicpStage(distance_weight=float(s["distance_weight"]),
                  landmark_weight=float(s["landmark_weight"]),
                  stiffness_weight=float(s["stiffness_weight"]),
                  decay_factor=float(s.get("decay_factor", 0.5)),
                  steps=int(s.get("steps", 4)))
        for s in nicp_cfg["stages"])
    return NicpSchedule(stages=stages, tolerance_mm=float(nicp_cfg["tolerance_mm"]))


def _icp_params(cfg: dict) -> IcpParams:
    return IcpParams(max_iterations=int(cfg["max_iterations"]),
                     tolerance_mm2=float(cfg["tolerance_mm2"]))


def _evaluate_shape(entry: dict, config: dict, region_filter,
                    gicp_only: bool, heatmap_dir: Optional[str]) -> dict:
    result = {"name": entry["name"], "status": "ok"}
    try:
        pred = load_mesh(entry["pred"])
        gt = load_mesh(entry["gt"])
        gt_ann = load_annotations(entry["gt_annotations"])
        pred_ann = load_annotations(entry["pred_keypoints"])
        if gt_ann.keypoints is None or pred_ann.keypoints is None:
            raise MeshbenchError("both meshes need keypoints for evaluation")
        regions = gt_ann.regions_for(gt)
        if region_filter:
            missing = sorted(set(region_filter) - set(regions))
            if missing:
                raise MeshbenchError(f"regions not in annotations: {missing}")
            regions = {k: v for k, v in regions.items() if k in region_filter}

        gparams = _icp_params(config["params"]["gicp"])
        fwd, _ = gicp_stats(pred, gt, params=gparams)
        bwd, _ = gicp_stats(gt, pred, params=gparams)
        result["gicp"] = {"pred_to_gt": stats_dict(fwd),
                          "gt_to_pred": stats_dict(bwd)}

        if not gicp_only:
            schedule = _schedule_from_config(config["params"]["nicp"])
            reports = bicp_evaluate(
                pred, gt, regions, pred_ann.keypoints, gt_ann.keypoints,
                schedule=schedule, icp_params=_icp_params(config["params"]["ricp"]))
            result["regions"] = {r.region: region_report_dict(r) for r in reports}
            result["all_region_mean"] = stats_dict(region_mean_stats(reports))
            if heatmap_dir:
                _export_heatmaps(heatmap_dir, entry["name"], gt, regions, reports)
    except Exception as exc:  # one bad shape must not abort the batch
        result["status"] = "error"
        result["error"] = f"{type(exc).__name__}: {exc}"
        result["traceback"] = traceback.format_exc()
    return result


def _export_heatmaps(heatmap_dir, shape_name, gt, regions, reports) -> None:
    from .mesh import submesh

    out = Path(heatmap_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_name = {r.region: r for r in reports}
    for name, mask in regions.items():
        report = by_name.get(name)
        if report is None:
            continue
        sub, vertex_ids = submesh(gt, mask.face_ids)
        errors = np.zeros(sub.n_vertices, np.float64)
        lookup = {int(v): i for i, v in enumerate(vertex_ids)}
        for vid, err in zip(report.vertex_ids, report.vertex_errors_mm):
            errors[lookup[int(vid)]] = err
        save_mesh(out / f"{shape_name}_{name}.ply", sub, vertex_errors=errors)


def _worker(args):
    return _evaluate_shape(*args)


@main.command("eval")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=False), help="TOML config file.")
@click.option("--jobs", default=None, type=int,
              help="Parallel shape evaluations (default: cpu count).")
@click.option("--regions", "regions_opt", default=None,
              help="Comma-separated region names to evaluate.")
@click.option("--export-heatmaps", "heatmaps", is_flag=True,
              help="Write per-vertex error PLY files next to the report.")
@click.option("--gicp-only", is_flag=True, help="Skip the region pipeline.")
def cmd_eval(config_path, jobs, regions_opt, heatmaps, gicp_only):
    """Batch-evaluate predicted meshes against annotated ground truth."""
    config_path = Path(config_path)
    if not config_path.exists():
        _fail(f"config not found: {config_path}")
    try:
        with open(config_path, "rb") as fh:
            raw = tomllib.load(fh)
        config = _resolve_config(raw, config_path.parent.resolve())
    except (tomllib.TOMLDecodeError, MeshbenchError) as exc:
        _fail(str(exc))

    region_filter = ([r.strip() for r in regions_opt.split(",") if r.strip()]
                     if regions_opt else None)
    report = new_report(config)
    report["config"]["region_filter"] = region_filter
    report["config"]["gicp_only"] = bool(gicp_only)
    heatmap_dir = (str(Path(config["output"]["report"]).parent / "heatmaps")
                   if heatmaps else None)

    tasks = [(entry, config, region_filter, gicp_only, heatmap_dir)
             for entry in config["shapes"]]
    jobs = jobs if jobs is not None else (os.cpu_count() or 1)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, tasks))
    else:
        results = [_worker(t) for t in tasks]
    report["shapes"] = results  # input order regardless of completion order
    summarize(report)
    write_report(config["output"]["report"], report)
    read_report(config["output"]["report"])  # validate-on-load round trip

    failed = [s for s in results if s["status"] != "ok"]
    for shape in failed:
        click.echo(f"shape {shape['name']} failed: {shape['error']}", err=True)
    click.echo(f"report written to {config['output']['report']} "
               f"({len(results) - len(failed)}/{len(results)} shapes ok)")
    sys.exit(EXIT_PARTIAL if failed else EXIT_OK)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


@main.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--base", "base_path", default=None, type=click.Path(),
              help="Base mesh (default: built-in synthetic face).")
@click.option("--annotations", "ann_path", default=None, type=click.Path(),
              help="Annotations for the base mesh (required with --base).")
@click.option("--donor", "donors", multiple=True,
              help="region=mesh.ply donor override; repeatable.")
@click.option("--blend-rings", default=2, type=int,
              help="Boundary blend band width in vertex rings.")
def cmd_synth(out_dir, base_path, ann_path, donors, blend_rings):
    """Write a region-replacement fixture corpus with identity ground truth."""
    try:
        if base_path is not None:
            if ann_path is None:
                _fail("--base requires --annotations")
            mesh = load_mesh(base_path)
            ann = load_annotations(ann_path)
            if ann.keypoints is None or not ann.region_faces:
                _fail("annotations must provide keypoints and regions")
            from .fixtures import FaceFixture

            fixture = FaceFixture(mesh=mesh, keypoints=ann.keypoints,
                                  regions=ann.regions_for(mesh),
                                  semantics=ann.semantics)
        else:
            fixture = synthetic_face()
        donor_meshes = {}
        for spec_item in donors:
            if "=" not in spec_item:
                _fail(f"--donor expects region=path, got {spec_item!r}")
            region, _, path = spec_item.partition("=")
            if region not in fixture.regions:
                _fail(f"unknown donor region {region!r}")
            donor_meshes[region] = load_mesh(path)
        if not donor_meshes:
            if base_path is not None:
                _fail("--base requires at least one --donor region=mesh")
            donor_meshes = {name: donor_face(name) for name in fixture.regions}
        manifest = synth_fixture_corpus(out_dir, blend_rings=blend_rings,
                                        base=fixture, donors=donor_meshes)
    except MeshbenchError as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(manifest['shapes'])} fixtures to {out_dir}")
    sys.exit(EXIT_OK)


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------


@main.command("transfer")
@click.option("--low", "low_path", required=True, type=click.Path())
@click.option("--low-annotations", "low_ann_path", required=True, type=click.Path())
@click.option("--high", "high_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--crop", is_flag=True,
              help="Apply the nose-centered evaluation crop to each region.")
@click.option("--exclusions", "exclusion_region", default=None,
              help="Name of a low-mesh region to subtract (cavity filter).")
def cmd_transfer(low_path, low_ann_path, high_path, out_path, crop,
                 exclusion_region):
    """Transfer keypoints and region masks from a low mesh onto a high mesh."""
    try:
        low = load_mesh(low_path)
        high = load_mesh(high_path)
        ann = load_annotations(low_ann_path)
        if ann.keypoints is None:
            _fail("low annotations carry no keypoints")
        regions = ann.regions_for(low)
        exclusions = None
        if exclusion_region is not None:
            if exclusion_region not in regions:
                _fail(f"exclusion region {exclusion_region!r} not in annotations")
            exclusions = regions.pop(exclusion_region)

        moved = transfer_keypoints(ann.keypoints, low, high)
        if moved.duplicate_slots:
            click.echo(f"warning: duplicate keypoint landings at slots "
                       f"{list(moved.duplicate_slots)}", err=True)
        high_kp = moved.to_keypoints()
        out_regions = {}
        for name, mask in regions.items():
            out_mask = transfer_region(mask, low, high, exclusions=exclusions)
            if crop:
                out_mask = crop_by_nose_radius(high, high_kp, out_mask,
                                               slots=ann.semantics or None)
            out_regions[name] = out_mask.face_ids
        save_annotations(out_path, Annotations(
            keypoints=high_kp, region_faces=out_regions, semantics=ann.semantics))
    except MeshbenchError as exc:
        _fail(str(exc))
    click.echo(f"wrote {out_path}")
    sys.exit(EXIT_OK)


# ---------------------------------------------------------------------------
# basis
# ---------------------------------------------------------------------------


@main.group("basis")
def cmd_basis():
    """Morphable-basis construction and fitting."""


@cmd_basis.command("build")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--cutoff", default=DEFAULT_VARIANCE_CUTOFF, type=float,
              help="Cumulative explained-variance cutoff.")
@click.argument("meshes", nargs=-1, required=True, type=click.Path())
def cmd_basis_build(out_path, cutoff, meshes):
    """Build a PCA basis from topology-consistent meshes."""
    try:
        corpus = [load_mesh(p) for p in meshes]
        basis = pca_build(corpus, cumulative_variance_cutoff=cutoff)
        save_basis(out_path, basis)
    except MeshbenchError as exc:
        _fail(str(exc))
    click.echo(f"basis with {basis.n_components} components written to {out_path}")
    sys.exit(EXIT_OK)


@cmd_basis.command("fit")
@click.option("--basis", "basis_path", required=True, type=click.Path())
@click.option("--target", "target_path", required=True, type=click.Path())
@click.option("--reg-weight", default=0.0, type=float)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--annotations", "ann_path", default=None, type=click.Path(),
              help="Target annotations for a per-region fit-error breakdown.")
@click.option("--export-heatmap", "heatmap_path", default=None, type=click.Path(),
              help="Write the fitted mesh with per-vertex error as PLY.")
def cmd_basis_fit(basis_path, target_path, reg_weight, out_path, ann_path,
                  heatmap_path):
    """Fit basis coefficients to a same-topology target mesh."""
    try:
        basis = load_basis(basis_path)
        target = load_mesh(target_path)
        alpha = fit_to_mesh(basis, target, reg_weight=reg_weight)
        fitted = reconstruct(basis, alpha)
        diff = fitted.vertices - target.vertices
        per_vertex = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        payload = {
            "coefficients": [float(a) for a in alpha],
            "reg_weight": float(reg_weight),
            "rms_mm": fit_residual_mm(basis, target, alpha),
            "mean_mm": float(per_vertex.mean()),
        }
        if ann_path is not None:
            ann = load_annotations(ann_path)
            payload["regions"] = {}
            for name, mask in ann.regions_for(target).items():
                errs = per_vertex[mask.vertex_ids]
                payload["regions"][name] = {
                    "nmse_mm2": float(np.mean(errs ** 2)),
                    "rms_mm": float(np.sqrt(np.mean(errs ** 2))),
                    "mean_mm": float(errs.mean()),
                    "vertex_count": int(errs.size),
                }
        from .report import round_floats

        Path(out_path).write_text(
            json.dumps(round_floats(payload), sort_keys=True, indent=1) + "\n")
        if heatmap_path is not None:
            save_mesh(heatmap_path, fitted, vertex_errors=per_vertex)
    except MeshbenchError as exc:
        _fail(str(exc))
    click.echo(f"fit residual {payload['rms_mm']:.6g} mm RMS; wrote {out_path}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
