"""Rigid/similarity alignment and the mean-squared surface error metric.

The error of a correspondence map is the mean squared distance between each
source vertex and its mapped position on the target (mm^2); reports also
carry the RMS and mean distance in mm since published tables rarely state
which convention they use.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mesh import CorrespondenceMap, MeshbenchError, RegionMask, KeypointSet, TriangleMesh
from .spatial import SpatialIndex, build_vertex_to_point_map, map_target_coordinates


class DegenerateGeometryError(MeshbenchError):
    pass


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation; scale 1 for rigid."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        rot = np.asarray(self.rotation, np.float64).reshape(3, 3)
        tr = np.asarray(self.translation, np.float64).reshape(3)
        if self.scale <= 0:
            raise MeshbenchError("scale must be positive")
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise MeshbenchError("rotation must be orthonormal with determinant +1")
        rot = rot.copy()
        tr = tr.copy()
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, np.float64)
        return self.scale * (points @ self.rotation.T) + self.translation

    def apply_mesh(self, mesh: TriangleMesh) -> TriangleMesh:
        return mesh.with_vertices(self.apply(mesh.vertices))

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying `inner` first, then self."""
        rot = self.rotation @ inner.rotation
        scale = self.scale * inner.scale
        tr = self.scale * (self.rotation @ inner.translation) + self.translation
        return SimilarityTransform(rot, tr, scale)

    def inverse(self) -> "SimilarityTransform":
        rot = self.rotation.T
        scale = 1.0 / self.scale
        tr = -scale * (rot @ self.translation)
        return SimilarityTransform(rot, tr, scale)

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------


def correspondence_distances(source: TriangleMesh, cmap: CorrespondenceMap,
                             target: TriangleMesh) -> np.ndarray:
    """Euclidean distance (mm) from each mapped source vertex to its target."""
    if len(cmap) == 0:
        raise MeshbenchError("correspondence map is empty")
    mapped = map_target_coordinates(cmap, target)
    diff = source.vertices[cmap.source_ids] - mapped
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def nmse(source: TriangleMesh, cmap: CorrespondenceMap, target: TriangleMesh) -> float:
    """Mean squared mapped distance over the map's source vertices (mm^2)."""
    d = correspondence_distances(source, cmap, target)
    return float(np.mean(d * d))


@dataclass(frozen=True)
class DistanceStats:
    nmse_mm2: float
    rms_mm: float
    mean_mm: float

    @classmethod
    def from_distances(cls, distances: np.ndarray) -> "DistanceStats":
        d = np.asarray(distances, np.float64)
        if d.size == 0:
            raise MeshbenchError("no correspondences")
        msq = float(np.mean(d * d))
        return cls(msq, float(np.sqrt(msq)), float(np.mean(d)))


def distance_stats(source: TriangleMesh, cmap: CorrespondenceMap,
                   target: TriangleMesh) -> DistanceStats:
    """NMSE (mm^2) plus RMS and mean distance (mm) over the same map."""
    return DistanceStats.from_distances(correspondence_distances(source, cmap, target))


# ---------------------------------------------------------------------------
# closed-form weighted similarity (Umeyama with reflection suppression)
# ---------------------------------------------------------------------------


def solve_similarity(src_points, dst_points, weights=None,
                     with_scale: bool = False) -> SimilarityTransform:
    """Least-squares s*R*src + t ~ dst over weighted point pairs.

    Reflections are suppressed by flipping the smallest singular direction,
    so the returned rotation always has determinant +1. Collinear or
    coincident source points leave the rotation ambiguous and raise.
    """
    src = np.asarray(src_points, np.float64).reshape(-1, 3)
    dst = np.asarray(dst_points, np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise MeshbenchError("point lists must have equal length")
    n = src.shape[0]
    if n < 3:
        raise MeshbenchError(f"need at least 3 point pairs, got {n}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, np.float64).reshape(-1)
        if w.shape[0] != n:
            raise MeshbenchError("one weight per point pair required")
        if (w <= 0).any():
            raise MeshbenchError("weights must be positive")
    wsum = w.sum()
    mu_src = (w[:, None] * src).sum(axis=0) / wsum
    mu_dst = (w[:, None] * dst).sum(axis=0) / wsum
    x = src - mu_src
    y = dst - mu_dst
    cov = (y.T * w) @ x / wsum
    u, s, vt = np.linalg.svd(cov)
    rank = int(np.sum(s > s[0] * max(cov.shape) * np.finfo(np.float64).eps)) if s[0] > 0 else 0
    if rank < 2:
        raise DegenerateGeometryError(
            "rotation is ambiguous: correspondence covariance has rank "
            f"{rank} (collinear or coincident points)")
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[-1] = -1.0
    rot = (u * sign) @ vt
    if with_scale:
        var_src = float((w * np.einsum("ij,ij->i", x, x)).sum() / wsum)
        if var_src == 0.0:
            raise DegenerateGeometryError("source points are coincident; scale undefined")
        scale = float((s * sign).sum() / var_src)
        if scale <= 0:
            raise DegenerateGeometryError("non-positive optimal scale")
    else:
        scale = 1.0
    tr = mu_dst - scale * (rot @ mu_src)
    return SimilarityTransform(rot, tr, scale)


def alignment_objective(transform: SimilarityTransform, src_points, dst_points,
                        weights=None) -> float:
    """Weighted sum of squared residuals that solve_similarity minimizes."""
    src = np.asarray(src_points, np.float64).reshape(-1, 3)
    dst = np.asarray(dst_points, np.float64).reshape(-1, 3)
    w = np.ones(src.shape[0]) if weights is None else np.asarray(weights, np.float64)
    res = transform.apply(src) - dst
    return float((w * np.einsum("ij,ij->i", res, res)).sum())


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    tolerance_mm2: float = 1e-6
    max_correspondence_distance: Optional[float] = None  # off by default


@dataclass(frozen=True)
class IcpResult:
    transform: SimilarityTransform
    aligned_source: TriangleMesh
    map: CorrespondenceMap
    final_error: float  # mm^2
    iterations: int
    converged: bool
    error_history: tuple = field(default=())


def _reject_mask(dsq: np.ndarray, params: IcpParams) -> np.ndarray:
    if params.max_correspondence_distance is None:
        return np.ones(dsq.shape[0], bool)
    keep = dsq <= params.max_correspondence_distance ** 2
    if not keep.any():
        raise MeshbenchError("all correspondences rejected by the distance cap")
    return keep


def gicp(source: TriangleMesh, target: TriangleMesh,
         init: Optional[SimilarityTransform] = None,
         params: Optional[IcpParams] = None,
         target_index: Optional[SpatialIndex] = None) -> IcpResult:
    """Whole-mesh rigid ICP from source vertices to the target surface.

    Alternates a vertex-to-point nearest-neighbor map with an exact rigid
    re-solve against the original source, so the error sequence never
    increases.
    """
    if source.n_vertices == 0 or target.n_faces == 0:
        raise MeshbenchError("gicp requires non-empty meshes")
    params = params or IcpParams()
    transform = init or SimilarityTransform.identity()
    index = target_index or SpatialIndex.build(target)
    src = source.vertices
    ids = np.arange(source.n_vertices, dtype=np.int32)

    def match(tf):
        moved = tf.apply(src)
        cmap = build_vertex_to_point_map(ids, moved, target, index,
                                         source="source", target_name="target")
        mapped = map_target_coordinates(cmap, target)
        diff = moved - mapped
        err = float(np.mean(np.einsum("ij,ij->i", diff, diff)))
        return cmap, mapped, err

    cmap, mapped, err = match(transform)
    history = [err]
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        keep = _reject_mask(((transform.apply(src) - mapped) ** 2).sum(axis=1), params)
        transform = solve_similarity(src[keep], mapped[keep], with_scale=False)
        cmap, mapped, new_err = match(transform)
        history.append(new_err)
        if abs(err - new_err) < params.tolerance_mm2:
            err = new_err
            converged = True
            break
        err = new_err
    aligned = transform.apply_mesh(source)
    final_error = nmse(aligned, cmap, target)
    return IcpResult(transform, aligned, cmap, final_error, iterations,
                     converged, tuple(history))


def ricp(pred: TriangleMesh, gt_region: RegionMask, gt_mesh: TriangleMesh,
         pred_keypoints: KeypointSet, gt_keypoints: KeypointSet,
         params: Optional[IcpParams] = None,
         pred_index: Optional[SpatialIndex] = None) -> IcpResult:
    """Region-aware rigid alignment of a prediction onto one target region.

    Initialized from the keypoint pairs, then iterated with a vertex-to-point
    map from the region vertices of the target mesh onto the moving predicted
    surface. Each keypoint pair enters the rigid solve with weight
    |region vertices| / |keypoints|; the stop rule follows the change of the
    region matching error.
    """
    if gt_region.n_vertices == 0:
        raise MeshbenchError("region is empty")
    if len(pred_keypoints) != len(gt_keypoints):
        raise MeshbenchError(
            f"keypoint sets differ in length: {len(pred_keypoints)} vs {len(gt_keypoints)}")
    if len(pred_keypoints) == 0:
        raise MeshbenchError("keypoint sets are empty")
    params = params or IcpParams()
    index = pred_index or SpatialIndex.build(pred)

    kp_src = pred_keypoints.positions(pred)
    kp_dst = gt_keypoints.positions(gt_mesh)
    region_pos = gt_mesh.vertices[gt_region.vertex_ids]
    w_kp = gt_region.n_vertices / len(pred_keypoints)
    weights = np.concatenate([np.ones(gt_region.n_vertices),
                              np.full(len(pred_keypoints), w_kp)])

    transform = solve_similarity(kp_src, kp_dst, with_scale=False)

    def match(tf):
        # nearest points on the moving prediction, found in its rest frame
        local = tf.inverse().apply(region_pos)
        cmap = build_vertex_to_point_map(gt_region.vertex_ids, local, pred, index,
                                         source="gt", target_name="pred")
        anchors = map_target_coordinates(cmap, pred)  # material points on pred
        diff = tf.apply(anchors) - region_pos
        err = float(np.mean(np.einsum("ij,ij->i", diff, diff)))
        return cmap, anchors, err

    cmap, anchors, err = match(transform)
    history = [err]
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        src = np.concatenate([anchors, kp_src])
        dst = np.concatenate([region_pos, kp_dst])
        transform = solve_similarity(src, dst, weights, with_scale=False)
        cmap, anchors, new_err = match(transform)
        history.append(new_err)
        if abs(err - new_err) < params.tolerance_mm2:
            err = new_err
            converged = True
            break
        err = new_err
    aligned = transform.apply_mesh(pred)
    final_cmap = CorrespondenceMap(
        cmap.kind, cmap.source_ids, target_face_ids=cmap.target_face_ids,
        barycentric=cmap.barycentric, source="gt", target="pred_aligned")
    final_error = nmse(gt_mesh, final_cmap, aligned)
    return IcpResult(transform, aligned, final_cmap, final_error, iterations,
                     converged, tuple(history))
