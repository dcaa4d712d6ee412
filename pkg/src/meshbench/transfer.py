"""Transfer of region masks and keypoints between meshes of one shape.

Masks move from a retopologized low-resolution mesh onto the high-resolution
scan it was wrapped to, using nearest-surface passes in both directions:
the forward pass seeds candidate faces (hit faces plus their one-ring), the
reverse pass fills them in with every scan vertex whose nearest point on the
low mesh falls inside the region, optional cavity exclusions are subtracted,
and the largest edge-connected component survives.
"""

import warnings as _warnings
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .mesh import (
    KeypointSet,
    MeshbenchError,
    RegionMask,
    TriangleMesh,
    connected_components,
    faces_touching_vertices,
)
from .spatial import (
    SpatialIndex,
    nearest_surface_points,
    nearest_surface_points_bruteforce,
    nearest_vertices,
)

# Semantic slots into the 68-landmark evaluation scheme (indices follow the
# common jaw/brow/nose/eyes/mouth layout).
SEMANTIC_SLOTS: Dict[str, int] = {
    "nose_tip": 30,
    "nose_bridge": 27,
    "nose_base": 33,
    "outer_eye_right": 36,
    "outer_eye_left": 45,
}


class TransferError(MeshbenchError):
    pass


def _region_attains_minimum(low: TriangleMesh, region_faces: np.ndarray,
                            queries: np.ndarray, global_dsq: np.ndarray) -> np.ndarray:
    """True where some region face reaches each query's global minimum distance.

    Both sides evaluate the same per-triangle kernel, so the comparison is an
    exact equality of identically computed values (tie-inclusive membership:
    a vertex on the region boundary counts as inside even when the global
    winner by face id lies outside).
    """
    sub = TriangleMesh(low.vertices, low.faces[region_faces])
    _, _, _, region_dsq = nearest_surface_points_bruteforce(sub, queries)
    return region_dsq <= global_dsq


def transfer_region(region_low: RegionMask, low: TriangleMesh, high: TriangleMesh,
                    exclusions: Optional[RegionMask] = None, *,
                    use_bbox: bool = True, bbox_margin: float = 0.10,
                    low_index: Optional[SpatialIndex] = None,
                    high_index: Optional[SpatialIndex] = None) -> RegionMask:
    """Map a region mask from the low mesh onto the (pre-aligned) high mesh."""
    if region_low.n_faces == 0:
        raise TransferError("input region is empty")
    high_index = high_index or SpatialIndex.build(high)
    low_index = low_index or SpatialIndex.build(low)

    # forward pass: region vertices -> high surface. Hit faces seed the
    # candidate vertex pool; their one-ring neighborhood widens the reverse
    # pass's bounding-box scope (the dense reverse pass fills the interior).
    seeds = low.vertices[region_low.vertex_ids]
    hit_faces, _, hit_points, hit_dsq = nearest_surface_points(high, high_index, seeds)
    hit_faces = np.unique(hit_faces)
    ring_faces = faces_touching_vertices(
        high, np.unique(high.faces[hit_faces].reshape(-1)))
    if ring_faces.size == 0:
        raise TransferError("forward pass produced no candidate faces")

    # reverse pass: high vertices whose nearest low-surface point lies in the
    # region; restricted to an inflated bounding box of the forward hits
    if use_bbox:
        ring_points = high.vertices[np.unique(high.faces[ring_faces].reshape(-1))]
        bb_min = np.minimum(hit_points.min(axis=0), ring_points.min(axis=0))
        bb_max = np.maximum(hit_points.max(axis=0), ring_points.max(axis=0))
        inflate = bbox_margin * np.linalg.norm(bb_max - bb_min) \
            + float(np.sqrt(hit_dsq.max()))
        in_box = np.flatnonzero(
            (high.vertices >= bb_min - inflate).all(axis=1)
            & (high.vertices <= bb_max + inflate).all(axis=1))
    else:
        in_box = np.arange(high.n_vertices)

    vertex_keep = np.zeros(high.n_vertices, bool)
    vertex_keep[np.unique(high.faces[hit_faces].reshape(-1))] = True
    if in_box.size:
        scan_points = high.vertices[in_box]
        _, _, _, global_dsq = nearest_surface_points(low, low_index, scan_points)
        inside = _region_attains_minimum(low, region_low.face_ids, scan_points,
                                         global_dsq)
        vertex_keep[in_box[inside]] = True

    # a face joins the mask only when all of its vertices were reached;
    # unconditional one-ring face inclusion would overrun the region boundary
    keep_faces = np.flatnonzero(vertex_keep[high.faces].all(axis=1))
    if keep_faces.size == 0:
        raise TransferError("reverse pass eliminated every candidate face")

    # cavity filter: drop faces touching the exclusion mask's footprint
    if exclusions is not None:
        touched = np.unique(high.faces[keep_faces].reshape(-1))
        points = high.vertices[touched]
        _, _, _, excl_global = nearest_surface_points(low, low_index, points)
        excluded = _region_attains_minimum(low, exclusions.face_ids, points,
                                           excl_global)
        if excluded.any():
            bad_faces = faces_touching_vertices(high, touched[excluded])
            keep_faces = np.setdiff1d(keep_faces, bad_faces)
        if keep_faces.size == 0:
            raise TransferError("exclusion filtering emptied the mask")

    components = connected_components(high, keep_faces)
    if not components:
        raise TransferError("no connected component survived")
    return RegionMask.from_faces(high, components[0])


def crop_by_nose_radius(high: TriangleMesh, keypoints_high: KeypointSet,
                        mask: RegionMask,
                        slots: Optional[Dict[str, int]] = None) -> RegionMask:
    """Keep mask faces whose centroid lies within the nose-centered crop.

    The radius is 0.7 * (outer-eye distance + nose-bridge-to-lower-cartilage
    distance), measured from the nose tip.
    """
    slots = slots or SEMANTIC_SLOTS
    required = ["nose_tip", "nose_bridge", "nose_base",
                "outer_eye_right", "outer_eye_left"]
    missing = [name for name in required
               if name not in slots or slots[name] >= len(keypoints_high)]
    if missing:
        raise TransferError(
            "required semantic keypoints missing: " + ", ".join(sorted(missing)))
    keypoints_high.validate_for(high)
    pos = {name: high.vertices[keypoints_high.indices[slots[name]]]
           for name in required}
    d_outer_eye = float(np.linalg.norm(pos["outer_eye_right"] - pos["outer_eye_left"]))
    d_nose = float(np.linalg.norm(pos["nose_bridge"] - pos["nose_base"]))
    radius = 0.7 * (d_outer_eye + d_nose)

    corners = high.vertices[high.faces[mask.face_ids]]
    centroids = corners.mean(axis=1)
    dist = np.linalg.norm(centroids - pos["nose_tip"], axis=1)
    kept = mask.face_ids[dist <= radius]
    if kept.size == 0:
        raise TransferError(
            f"crop radius {radius:.3f} mm removed every face of the mask")
    return RegionMask.from_faces(high, kept)


@dataclass(frozen=True)
class KeypointTransfer:
    """Raw keypoint landings. Duplicates are allowed here but flagged; a
    KeypointSet (which requires distinct indices) is built on demand."""

    indices: np.ndarray
    duplicate_slots: Tuple[int, ...]
    semantic_count: Optional[int] = None

    def to_keypoints(self) -> KeypointSet:
        return KeypointSet(self.indices, semantic_count=self.semantic_count)


def transfer_keypoints(kp_low: KeypointSet, low: TriangleMesh,
                       high: TriangleMesh) -> KeypointTransfer:
    """Map each keypoint to its nearest high-mesh vertex, order preserved.

    Two keypoints may land on one vertex; such slots are listed in
    duplicate_slots and reported through a warning.
    """
    kp_low.validate_for(low)
    positions = low.vertices[kp_low.indices]
    landed = nearest_vertices(high, positions).astype(np.int32)
    unique, counts = np.unique(landed, return_counts=True)
    duplicates = unique[counts > 1]
    slots: Tuple[int, ...] = ()
    if duplicates.size:
        slots = tuple(int(i) for i in np.flatnonzero(np.isin(landed, duplicates)))
        _warnings.warn(
            f"keypoints {list(slots)} landed on shared vertices "
            f"{[int(v) for v in duplicates]} during transfer",
            stacklevel=2)
    return KeypointTransfer(indices=landed, duplicate_slots=slots,
                            semantic_count=kp_low.semantic_count)
