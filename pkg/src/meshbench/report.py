"""Evaluation report schema, deterministic serialization, and validation.

Reports are JSON with keys sorted and every float formatted at 9 significant
digits, so identical inputs produce byte-identical payloads. The `metadata`
block is exempt (it may carry timestamps); everything else is the payload.

Schema (stable field names):
  metadata: {tool, version, created}           -- exempt from determinism
  config:   resolved configuration, defaults materialized
  shapes:   [{name, status, error?, regions?, all_region_mean?, gicp?}]
            regions: {<name>: {nmse_mm2, rms_mm, mean_mm, vertex_count,
                               warnings}}; includes the vertex-pooled "all" row
            gicp: {pred_to_gt, gt_to_pred}: {nmse_mm2, rms_mm, mean_mm,
                               iterations, converged}
  summary:  {counts: {ok, failed}, regions: {<name>: {<metric>: {mean, std}}}}
"""

import json
import math
from datetime import datetime, timezone
from pathlib import Path

from .mesh import MeshbenchError

SIGNIFICANT_DIGITS = 9


class ReportFormatError(MeshbenchError):
    pass


def round_floats(obj):
    """Recursively fix floats at 9 significant digits (payload determinism)."""
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            raise ReportFormatError("non-finite value in report payload")
        return float(f"{obj:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def payload_bytes(report: dict) -> bytes:
    """Canonical bytes of everything except the metadata block."""
    payload = {k: v for k, v in report.items() if k != "metadata"}
    return json.dumps(payload, sort_keys=True, indent=1).encode("utf-8")


def new_report(config: dict) -> dict:
    from . import __version__

    return {
        "metadata": {
            "tool": "meshbench",
            "version": __version__,
            "created": datetime.now(timezone.utc).isoformat(),
        },
        "config": round_floats(config),
        "shapes": [],
        "summary": {},
    }


def stats_dict(stats) -> dict:
    return {"nmse_mm2": stats.nmse_mm2, "rms_mm": stats.rms_mm,
            "mean_mm": stats.mean_mm}


def region_report_dict(report) -> dict:
    return {
        "nmse_mm2": report.nmse_mm2,
        "rms_mm": report.rms_mm,
        "mean_mm": report.mean_mm,
        "vertex_count": int(report.vertex_count),
        "warnings": list(report.warnings),
    }


def summarize(report: dict) -> None:
    """Fill the summary block: mean/std per region metric over ok shapes."""
    ok_shapes = [s for s in report["shapes"] if s["status"] == "ok"]
    failed = [s for s in report["shapes"] if s["status"] != "ok"]
    regions = {}
    for shape in ok_shapes:
        for name, entry in shape.get("regions", {}).items():
            for metric in ("nmse_mm2", "rms_mm", "mean_mm"):
                regions.setdefault(name, {}).setdefault(metric, []).append(
                    entry[metric])
    summary_regions = {}
    for name, metrics in regions.items():
        summary_regions[name] = {}
        for metric, values in metrics.items():
            mean = sum(values) / len(values)
            var = sum((v - mean) ** 2 for v in values) / len(values)
            summary_regions[name][metric] = {"mean": mean, "std": math.sqrt(var)}
    report["summary"] = {
        "counts": {"ok": len(ok_shapes), "failed": len(failed)},
        "regions": summary_regions,
    }


def write_report(path, report: dict) -> None:
    report = dict(report)
    metadata = report.pop("metadata", {})
    body = round_floats(report)
    body["metadata"] = metadata
    Path(path).write_text(json.dumps(body, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


_REQUIRED_TOP = {"config", "shapes", "summary"}
_REQUIRED_SHAPE = {"name", "status"}
_REQUIRED_REGION = {"nmse_mm2", "rms_mm", "mean_mm", "vertex_count"}


def read_report(path) -> dict:
    """Load a report and validate the schema (field presence and types)."""
    path = Path(path)
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportFormatError(f"{path.name}: {exc}") from None
    missing = _REQUIRED_TOP - set(report)
    if missing:
        raise ReportFormatError(f"{path.name}: missing keys {sorted(missing)}")
    if not isinstance(report["shapes"], list):
        raise ReportFormatError(f"{path.name}: shapes must be a list")
    for i, shape in enumerate(report["shapes"]):
        if _REQUIRED_SHAPE - set(shape):
            raise ReportFormatError(f"{path.name}: shape {i} lacks name/status")
        for name, entry in shape.get("regions", {}).items():
            if _REQUIRED_REGION - set(entry):
                raise ReportFormatError(
                    f"{path.name}: shape {i} region {name!r} lacks metrics")
    return report
