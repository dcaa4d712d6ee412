"""Non-rigid ICP: per-vertex affine deformation with stiffness regularization.

Each source vertex carries a 3x4 affine transform. Every solve minimizes

    distance_weight * sum_i ||X_i v~_i - proj(v_i)||^2
  + landmark_weight * sum_k ||X_{l_k} v~_{l_k} - t_k||^2
  + stiffness_weight * sum_{(i,j) in edges} ||X_i - X_j||_F^2

over all transforms jointly (v~ is the homogeneous rest position). The
system is linear; it is solved exactly through sparse normal equations with
a direct factorization. Correspondences are re-projected after each solve,
and the stiffness weight decays geometrically across steps, first with the
distance term disabled and then with all terms active (the default
two-stage schedule).
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import (
    CorrespondenceMap,
    MeshbenchError,
    RegionMask,
    TriangleMesh,
    mesh_edges,
)
from .spatial import SpatialIndex, build_vertex_to_point_map, map_target_coordinates


class NicpSolveError(MeshbenchError):
    pass


@dataclass(frozen=True)
class NicpStage:
    distance_weight: float
    landmark_weight: float
    stiffness_weight: float
    decay_factor: float = 0.5
    steps: int = 4

    def __post_init__(self):
        if self.distance_weight < 0 or self.landmark_weight < 0:
            raise MeshbenchError("weights must be non-negative")
        if self.stiffness_weight <= 0:
            raise MeshbenchError("stiffness weight must be positive")
        if not 0 < self.decay_factor <= 1:
            raise MeshbenchError("decay factor must be in (0, 1]")
        if self.steps < 1:
            raise MeshbenchError("each stage needs at least one step")


@dataclass(frozen=True)
class NicpSchedule:
    stages: Tuple[NicpStage, ...]
    tolerance_mm: float = 1e-6

    @classmethod
    def default(cls) -> "NicpSchedule":
        # landmark+stiffness warm start, then all terms, stiffness decaying
        return cls(stages=(
            NicpStage(distance_weight=0.0, landmark_weight=50.0, stiffness_weight=150.0),
            NicpStage(distance_weight=1.0, landmark_weight=5.0, stiffness_weight=50.0),
        ))


@dataclass(frozen=True)
class DeformationState:
    """Per-vertex 3x4 affine transforms and the positions they produce."""

    transforms: np.ndarray  # (n, 3, 4)
    positions: np.ndarray   # (n, 3)
    rest_positions: np.ndarray  # (n, 3)


def _homogeneous(points: np.ndarray) -> np.ndarray:
    return np.concatenate([points, np.ones((points.shape[0], 1))], axis=1)


def _apply_transforms(transforms: np.ndarray, rest_h: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nj->ni", transforms, rest_h)


def nicp_objective(rest_positions: np.ndarray, transforms: np.ndarray,
                   edges: np.ndarray, stage_weights: Tuple[float, float, float],
                   corr_points: Optional[np.ndarray],
                   landmark_ids: Optional[np.ndarray],
                   landmark_targets: Optional[np.ndarray]) -> float:
    """Deformation energy for a fixed set of correspondences."""
    w_d, w_l, w_s = stage_weights
    pos = _apply_transforms(transforms, _homogeneous(rest_positions))
    total = 0.0
    if w_d > 0 and corr_points is not None:
        diff = pos - corr_points
        total += w_d * float(np.einsum("ij,ij->", diff, diff))
    if w_l > 0 and landmark_ids is not None and landmark_ids.size:
        diff = pos[landmark_ids] - landmark_targets
        total += w_l * float(np.einsum("ij,ij->", diff, diff))
    dx = transforms[edges[:, 0]] - transforms[edges[:, 1]]
    total += w_s * float(np.einsum("eij,eij->", dx, dx))
    return total


def _solve_step(rest_h, edges, w_d, w_l, w_s, corr_points,
                landmark_ids, landmark_targets, context: str) -> np.ndarray:
    n = rest_h.shape[0]
    row_blocks, col_blocks, val_blocks, rhs_blocks = [], [], [], []
    next_row = 0

    def add_point_rows(weight, vertex_ids, targets):
        nonlocal next_row
        root = np.sqrt(weight)
        k = len(vertex_ids)
        row_blocks.append(np.repeat(next_row + np.arange(k), 4))
        col_blocks.append(((4 * vertex_ids[:, None]) + np.arange(4)).reshape(-1))
        val_blocks.append((root * rest_h[vertex_ids]).reshape(-1))
        rhs_blocks.append(root * targets)
        next_row += k

    if w_d > 0:
        add_point_rows(w_d, np.arange(n), corr_points)
    if w_l > 0 and landmark_ids is not None and landmark_ids.size:
        add_point_rows(w_l, landmark_ids, landmark_targets)

    root_s = np.sqrt(w_s)
    ne = edges.shape[0]
    edge_rows = next_row + np.arange(4 * ne)
    row_blocks.append(np.repeat(edge_rows, 2))
    icols = (4 * edges[:, 0].astype(np.int64))[:, None] + np.arange(4)
    jcols = (4 * edges[:, 1].astype(np.int64))[:, None] + np.arange(4)
    col_blocks.append(np.stack(
        [icols.reshape(-1), jcols.reshape(-1)], axis=1).reshape(-1))
    val_blocks.append(np.tile([root_s, -root_s], 4 * ne))
    rhs_blocks.append(np.zeros((4 * ne, 3)))
    next_row += 4 * ne

    a = sp.coo_matrix(
        (np.concatenate(val_blocks),
         (np.concatenate(row_blocks), np.concatenate(col_blocks))),
        shape=(next_row, 4 * n),
    ).tocsr()
    b = np.concatenate(rhs_blocks, axis=0)
    normal = (a.T @ a).tocsc()
    rhs = a.T @ b
    try:
        lu = spla.splu(normal)
    except RuntimeError as exc:
        raise NicpSolveError(f"singular deformation system at {context}: {exc}") from None
    diag = np.abs(lu.U.diagonal())
    if diag.min() <= diag.max() * 1e-13:
        raise NicpSolveError(
            f"singular deformation system at {context}: unconstrained affine "
            "modes (too few independent anchors for a zero-distance stage)")
    x = lu.solve(rhs)
    if not np.isfinite(x).all():
        raise NicpSolveError(f"non-finite deformation solve at {context}")
    return x.reshape(n, 4, 3).transpose(0, 2, 1)


def nicp_deform(source: TriangleMesh, target: TriangleMesh,
                landmarks: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                schedule: Optional[NicpSchedule] = None,
                target_index: Optional[SpatialIndex] = None,
                max_inner: int = 10,
                record: Optional[list] = None) -> DeformationState:
    """Deform the source mesh to fit the target surface.

    `landmarks` is (source vertex ids, target positions). Returns the final
    per-vertex affine transforms and deformed positions; pass `record` to
    collect per-solve diagnostics.
    """
    if target.n_faces == 0:
        raise MeshbenchError("target mesh has no faces")
    schedule = schedule or NicpSchedule.default()
    index = target_index or SpatialIndex.build(target)
    edges = mesh_edges(source)
    if edges.size == 0:
        raise NicpSolveError("source mesh has no edges; stiffness term is undefined")

    rest = source.vertices
    rest_h = _homogeneous(rest)
    n = source.n_vertices

    if landmarks is not None:
        lm_ids = np.asarray(landmarks[0], np.int64).reshape(-1)
        lm_targets = np.asarray(landmarks[1], np.float64).reshape(-1, 3)
        if lm_ids.size != lm_targets.shape[0]:
            raise MeshbenchError("landmark ids and targets differ in length")
        if lm_ids.size and (lm_ids.min() < 0 or lm_ids.max() >= n):
            raise MeshbenchError("landmark vertex id outside source mesh")
    else:
        lm_ids = np.zeros(0, np.int64)
        lm_targets = np.zeros((0, 3))

    transforms = np.tile(np.hstack([np.eye(3), np.zeros((3, 1))]), (n, 1, 1))
    positions = rest.copy()

    for stage_idx, stage in enumerate(schedule.stages):
        w_s = stage.stiffness_weight
        for step in range(stage.steps):
            for inner in range(max_inner):
                context = f"stage {stage_idx + 1}, step {step + 1}, pass {inner + 1}"
                if stage.distance_weight > 0:
                    cmap = build_vertex_to_point_map(
                        np.arange(n, dtype=np.int32), positions, target, index)
                    corr = map_target_coordinates(cmap, target)
                else:
                    corr = None
                new_transforms = _solve_step(
                    rest_h, edges, stage.distance_weight, stage.landmark_weight,
                    w_s, corr, lm_ids, lm_targets, context)
                new_positions = _apply_transforms(new_transforms, rest_h)
                move = float(np.sqrt(((new_positions - positions) ** 2).sum(axis=1).max()))
                if record is not None:
                    record.append({
                        "stage": stage_idx + 1, "step": step + 1, "inner": inner + 1,
                        "stiffness": w_s,
                        "objective_before": nicp_objective(
                            rest, transforms, edges,
                            (stage.distance_weight, stage.landmark_weight, w_s),
                            corr, lm_ids, lm_targets),
                        "objective_after": nicp_objective(
                            rest, new_transforms, edges,
                            (stage.distance_weight, stage.landmark_weight, w_s),
                            corr, lm_ids, lm_targets),
                        "max_move_mm": move,
                    })
                transforms = new_transforms
                positions = new_positions
                if move < schedule.tolerance_mm:
                    break
            w_s *= stage.decay_factor

    return DeformationState(transforms=transforms, positions=positions,
                            rest_positions=rest.copy())


def induce_correspondences(deformed: DeformationState, region: RegionMask,
                           pred_aligned: TriangleMesh,
                           index: Optional[SpatialIndex] = None) -> CorrespondenceMap:
    """Vertex-to-point map from region vertices onto the aligned prediction.

    Row i of the deformation state must correspond to region.vertex_ids[i]
    (the layout produced by extracting the region submesh). The original
    vertices stay the measurement anchors; only their deformed copies are
    projected.
    """
    if pred_aligned.n_faces == 0:
        raise MeshbenchError("prediction mesh has no faces")
    if deformed.positions.shape[0] != region.n_vertices:
        raise MeshbenchError(
            "deformation does not cover the region "
            f"({deformed.positions.shape[0]} rows for {region.n_vertices} vertices)")
    index = index or SpatialIndex.build(pred_aligned)
    return build_vertex_to_point_map(
        region.vertex_ids, deformed.positions, pred_aligned, index,
        source="gt_region", target_name="pred_aligned")
