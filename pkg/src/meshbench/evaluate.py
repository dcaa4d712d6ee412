"""Region-aware bidirectional evaluation of a predicted mesh.

For each named region of the ground-truth mesh: rigidly align the prediction
to that region (keypoint-weighted region ICP), deform the region submesh onto
the aligned prediction with non-rigid ICP, induce vertex-to-surface
correspondences from the deformed copy, and measure distances from the
ORIGINAL region vertices to their induced surface points. That anchoring is
what makes the number a reconstruction error rather than a registration
residual.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .mesh import (
    KeypointSet,
    MeshbenchError,
    RegionMask,
    TriangleMesh,
    submesh,
)
from .nicp import NicpSchedule, induce_correspondences, nicp_deform
from .rigid import DistanceStats, IcpParams, IcpResult, gicp, ricp
from .spatial import SpatialIndex, map_target_coordinates

MIN_REGION_LANDMARKS = 4


@dataclass(frozen=True)
class RegionReport:
    """Per-region error summary; aggregates are recomputable from the list."""

    region: str
    nmse_mm2: float
    rms_mm: float
    mean_mm: float
    vertex_count: int
    vertex_errors_mm: np.ndarray
    vertex_ids: np.ndarray
    warnings: Tuple[str, ...] = ()

    @classmethod
    def from_errors(cls, region: str, vertex_ids, errors,
                    warnings: Tuple[str, ...] = ()) -> "RegionReport":
        errors = np.asarray(errors, np.float64)
        stats = DistanceStats.from_distances(errors)
        return cls(region=region, nmse_mm2=stats.nmse_mm2, rms_mm=stats.rms_mm,
                   mean_mm=stats.mean_mm, vertex_count=errors.size,
                   vertex_errors_mm=errors,
                   vertex_ids=np.asarray(vertex_ids, np.int32),
                   warnings=warnings)


@dataclass(frozen=True)
class RegionEvaluation:
    """One region's full evaluation trace."""

    report: RegionReport
    ricp_result: IcpResult
    induced_map: object = None  # CorrespondenceMap from region onto aligned pred


def _region_landmarks(region: RegionMask, gt_kp: KeypointSet,
                      pred_kp: KeypointSet, aligned_pred: TriangleMesh,
                      sub_vertex_ids: np.ndarray):
    """Landmark anchors for the region deformation.

    Only keypoints whose vertex lies inside the region anchor the
    deformation; their targets are the corresponding predicted keypoints on
    the aligned prediction. Out-of-region keypoints are never imported: on
    locally modified shapes their displacement would contaminate regions
    that are otherwise clean.
    """
    local_of = {int(v): i for i, v in enumerate(sub_vertex_ids)}
    inside = [j for j, v in enumerate(gt_kp.indices) if int(v) in local_of]
    ids = np.array([local_of[int(gt_kp.indices[j])] for j in inside], np.int64)
    targets = aligned_pred.vertices[pred_kp.indices][inside]
    return ids, targets


def _schedule_for_region(schedule: NicpSchedule, n_landmarks: int):
    """Drop landmark-only stages when the region holds too few keypoints.

    A stage without a distance term is anchored purely by landmarks; fewer
    than MIN_REGION_LANDMARKS of them cannot pin a global affine and the
    solve would be singular.
    """
    if n_landmarks >= MIN_REGION_LANDMARKS:
        return schedule, ()
    stages = tuple(s for s in schedule.stages if s.distance_weight > 0)
    if not stages:
        raise MeshbenchError(
            f"{n_landmarks} keypoints inside the region and every deformation "
            "stage is landmark-only")
    warning = (f"only {n_landmarks} keypoints inside the region; skipping "
               f"{len(schedule.stages) - len(stages)} landmark-only "
               "deformation stage(s)",)
    return NicpSchedule(stages, schedule.tolerance_mm), warning


def evaluate_region(pred: TriangleMesh, gt: TriangleMesh, name: str,
                    region: RegionMask, pred_kp: KeypointSet, gt_kp: KeypointSet,
                    schedule: Optional[NicpSchedule] = None,
                    icp_params: Optional[IcpParams] = None,
                    pred_index: Optional[SpatialIndex] = None) -> RegionEvaluation:
    schedule = schedule or NicpSchedule.default()
    try:
        icp_result = ricp(pred, region, gt, pred_kp, gt_kp, params=icp_params,
                          pred_index=pred_index)
        aligned = icp_result.aligned_source
        sub, sub_vertex_ids = submesh(gt, region.face_ids)
        lm_ids, lm_targets = _region_landmarks(region, gt_kp, pred_kp, aligned,
                                               sub_vertex_ids)
        region_schedule, warn = _schedule_for_region(schedule, lm_ids.size)
        aligned_index = SpatialIndex.build(aligned)
        deformed = nicp_deform(sub, aligned, (lm_ids, lm_targets),
                               region_schedule, target_index=aligned_index)
        cmap = induce_correspondences(deformed, region, aligned,
                                      index=aligned_index)
        induced = map_target_coordinates(cmap, aligned)
        diff = gt.vertices[region.vertex_ids] - induced
        errors = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    except MeshbenchError as exc:
        raise MeshbenchError(f"region {name!r}: {exc}") from exc
    report = RegionReport.from_errors(name, region.vertex_ids, errors, warn)
    return RegionEvaluation(report=report, ricp_result=icp_result,
                            induced_map=cmap)


def bicp_evaluate(pred: TriangleMesh, gt: TriangleMesh,
                  regions: Dict[str, RegionMask],
                  pred_kp: KeypointSet, gt_kp: KeypointSet,
                  schedule: Optional[NicpSchedule] = None,
                  icp_params: Optional[IcpParams] = None) -> List[RegionReport]:
    """Evaluate every region and append the pooled composite report ("all").

    The composite pools per-vertex errors across regions; overlapping regions
    contribute once per region, so its vertex count is the sum of the region
    counts.
    """
    if not regions:
        raise MeshbenchError("at least one region is required")
    pred_index = SpatialIndex.build(pred)
    reports: List[RegionReport] = []
    for name in sorted(regions):
        evaluation = evaluate_region(
            pred, gt, name, regions[name], pred_kp, gt_kp,
            schedule=schedule, icp_params=icp_params, pred_index=pred_index)
        reports.append(evaluation.report)
    pooled = np.concatenate([r.vertex_errors_mm for r in reports])
    pooled_ids = np.concatenate([r.vertex_ids for r in reports])
    warns = tuple(w for r in reports for w in r.warnings)
    reports.append(RegionReport.from_errors("all", pooled_ids, pooled, warns))
    return reports


def region_mean_stats(reports: List[RegionReport]) -> DistanceStats:
    """Average of the per-region means (the vertex-pooled "all" row is the
    other aggregation; both are emitted in reports)."""
    named = [r for r in reports if r.region != "all"]
    if not named:
        raise MeshbenchError("no region reports")
    return DistanceStats(
        nmse_mm2=float(np.mean([r.nmse_mm2 for r in named])),
        rms_mm=float(np.mean([r.rms_mm for r in named])),
        mean_mm=float(np.mean([r.mean_mm for r in named])),
    )


def gicp_stats(source: TriangleMesh, target: TriangleMesh,
               params: Optional[IcpParams] = None) -> Tuple[DistanceStats, IcpResult]:
    """Whole-mesh baseline alignment error (one direction)."""
    from .rigid import correspondence_distances

    result = gicp(source, target, params=params)
    distances = correspondence_distances(result.aligned_source, result.map, target)
    return DistanceStats.from_distances(distances), result
