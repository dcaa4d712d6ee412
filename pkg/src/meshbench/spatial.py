"""Exact spatial queries against triangle meshes.

The index accelerates nearest-surface-point lookups without changing their
result: indexed and brute-force queries return bit-equal distances, with ties
broken toward the lowest face id (lowest vertex id for vertex queries).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mesh import (
    VERTEX_TO_POINT,
    VERTEX_TO_VERTEX,
    CorrespondenceMap,
    MeshbenchError,
    TriangleMesh,
)


@dataclass(frozen=True)
class SpatialIndex:
    """Bounding-volume hierarchy over one mesh's triangles; read-only."""

    tri_a: np.ndarray
    tri_b: np.ndarray
    tri_c: np.ndarray
    face_bb_min: np.ndarray
    face_bb_max: np.ndarray
    node_bb_min: np.ndarray
    node_bb_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    tri_order: np.ndarray

    @classmethod
    def build(cls, mesh: TriangleMesh) -> "SpatialIndex":
        if mesh.n_faces == 0:
            raise MeshbenchError("cannot index a mesh without faces")
        a, b, c = mesh.face_corners()
        stacked = np.stack([a, b, c])
        bb_min = stacked.min(axis=0)
        bb_max = stacked.max(axis=0)
        centroids = (a + b + c) / 3.0
        nodes = kernels.build_bvh_arrays(bb_min, bb_max, centroids)
        arrays = [np.ascontiguousarray(a), np.ascontiguousarray(b),
                  np.ascontiguousarray(c), bb_min, bb_max, *nodes]
        for arr in arrays:
            arr.setflags(write=False)
        return cls(*arrays)

    def numpy_lookup(self):
        """kd-trees used by the numpy backend's candidate prefilter
        (corner tree for upper bounds, centroid tree + max face radius for
        candidate gathering); built lazily, cached on the index."""
        cache = getattr(self, "_numpy_cache", None)
        if cache is None:
            from scipy.spatial import cKDTree

            corners = np.concatenate([self.tri_a, self.tri_b, self.tri_c])
            centroids = (self.tri_a + self.tri_b + self.tri_c) / 3.0
            radius_sq = np.maximum.reduce([
                ((self.tri_a - centroids) ** 2).sum(axis=1),
                ((self.tri_b - centroids) ** 2).sum(axis=1),
                ((self.tri_c - centroids) ** 2).sum(axis=1),
            ])
            cache = (cKDTree(corners), cKDTree(centroids),
                     float(np.sqrt(radius_sq.max())))
            object.__setattr__(self, "_numpy_cache", cache)
        return cache


def nearest_surface_points(mesh: TriangleMesh, index: SpatialIndex, queries):
    """Globally nearest surface points for a batch of queries.

    Returns (face_ids, barycentric, points, dist_sq); ties go to the lowest
    face id.
    """
    queries = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, np.float64)))
    return kernels.surface_query_indexed(index, queries)


def nearest_surface_points_bruteforce(mesh: TriangleMesh, queries):
    """Exhaustive scan over all triangles; the oracle for the indexed query."""
    if mesh.n_faces == 0:
        raise MeshbenchError("mesh has no faces")
    a, b, c = mesh.face_corners()
    holder = _BruteHolder(np.ascontiguousarray(a), np.ascontiguousarray(b),
                          np.ascontiguousarray(c))
    queries = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, np.float64)))
    return kernels.surface_query_brute(holder, queries)


@dataclass(frozen=True)
class _BruteHolder:
    tri_a: np.ndarray
    tri_b: np.ndarray
    tri_c: np.ndarray


def nearest_surface_point(p, mesh: TriangleMesh, index: SpatialIndex):
    """Single-point variant: (face_id, barycentric, point)."""
    faces, bary, points, _ = nearest_surface_points(mesh, index, np.asarray(p)[None, :])
    return int(faces[0]), bary[0], points[0]


def closest_point_on_triangle(p, a, b, c):
    """Closest point on one (possibly degenerate) triangle: (point, barycentric)."""
    _, bary, point = kernels.closest_point_on_triangle_kernel(
        np.asarray(p, np.float64), np.asarray(a, np.float64),
        np.asarray(b, np.float64), np.asarray(c, np.float64))
    return point, bary


def nearest_vertices(mesh: TriangleMesh, queries) -> np.ndarray:
    """Nearest vertex ids for a batch of queries; ties go to the lowest id."""
    if mesh.n_vertices == 0:
        raise MeshbenchError("mesh has no vertices")
    queries = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, np.float64)))
    ids, _ = kernels.nearest_vertex_scan(mesh.vertices, queries)
    return ids


def nearest_vertex(p, mesh: TriangleMesh) -> int:
    return int(nearest_vertices(mesh, np.asarray(p)[None, :])[0])


def map_target_coordinates(cmap: CorrespondenceMap, target: TriangleMesh) -> np.ndarray:
    """Coordinates of each map entry's target, one row per source vertex."""
    cmap.validate_for_target(target)
    if cmap.kind == VERTEX_TO_VERTEX:
        return target.vertices[cmap.target_vertex_ids]
    corners = target.vertices[target.faces[cmap.target_face_ids]]  # (k,3,3)
    return np.einsum("kc,kcd->kd", cmap.barycentric, corners)


def build_vertex_to_point_map(source_ids, points, target: TriangleMesh,
                              index: SpatialIndex, source: str = "",
                              target_name: str = "") -> CorrespondenceMap:
    """Project points onto the target surface and record face/barycentric entries."""
    faces, bary, _, _ = nearest_surface_points(target, index, points)
    return CorrespondenceMap(
        VERTEX_TO_POINT,
        np.asarray(source_ids, np.int32),
        target_face_ids=faces.astype(np.int32),
        barycentric=bary,
        source=source,
        target=target_name,
    )
