"""Core data model: triangle meshes, keypoints, region masks, correspondences.

All objects are immutable after construction (arrays are marked read-only)
and safe to share across threads/processes. Coordinates are millimeters.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


class MeshbenchError(ValueError):
    """Base error for invalid meshes, annotations, and pipeline failures."""


class TopologyError(MeshbenchError):
    pass


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TriangleMesh:
    """Vertex positions (n,3) in mm and triangle index list (m,3)."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int32)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise TopologyError(f"vertices must be (n,3), got {verts.shape}")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise TopologyError(f"faces must be (m,3), got {faces.shape}")
        if not np.isfinite(verts).all():
            bad = int(np.flatnonzero(~np.isfinite(verts).all(axis=1))[0])
            raise TopologyError(f"non-finite coordinates at vertex {bad}")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                bad = int(np.flatnonzero(
                    (faces < 0).any(axis=1) | (faces >= len(verts)).any(axis=1))[0])
                raise TopologyError(
                    f"face {bad} references a vertex outside [0, {len(verts)})")
            repeated = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if repeated.any():
                bad = int(np.flatnonzero(repeated)[0])
                raise TopologyError(f"face {bad} references the same vertex twice")
        object.__setattr__(self, "vertices", _freeze(verts))
        object.__setattr__(self, "faces", _freeze(faces))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices) -> "TriangleMesh":
        """Same topology, new vertex positions."""
        return TriangleMesh(vertices, self.faces)

    def face_corners(self):
        """Corner position arrays (a, b, c), each (m,3)."""
        return (
            self.vertices[self.faces[:, 0]],
            self.vertices[self.faces[:, 1]],
            self.vertices[self.faces[:, 2]],
        )

    def face_centroids(self) -> np.ndarray:
        a, b, c = self.face_corners()
        return (a + b + c) / 3.0

    def degenerate_faces(self) -> np.ndarray:
        """Ids of zero-area faces (accepted with a warning at load time)."""
        a, b, c = self.face_corners()
        cross = np.cross(b - a, c - a)
        area_sq = np.einsum("ij,ij->i", cross, cross)
        return np.flatnonzero(area_sq == 0.0).astype(np.int32)


@dataclass(frozen=True)
class KeypointSet:
    """Ordered landmark vertex indices; 68 for the evaluation scheme."""

    indices: np.ndarray
    semantic_count: Optional[int] = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int32).reshape(-1)
        if len(np.unique(idx)) != len(idx):
            raise MeshbenchError("keypoint indices must be pairwise distinct")
        if self.semantic_count is not None and len(idx) != self.semantic_count:
            raise MeshbenchError(
                f"expected {self.semantic_count} keypoints, got {len(idx)}")
        object.__setattr__(self, "indices", _freeze(idx))

    def __len__(self) -> int:
        return len(self.indices)

    def validate_for(self, mesh: TriangleMesh) -> None:
        if self.indices.size and (self.indices.min() < 0
                                  or self.indices.max() >= mesh.n_vertices):
            raise MeshbenchError("keypoint index outside host mesh")

    def positions(self, mesh: TriangleMesh) -> np.ndarray:
        self.validate_for(mesh)
        return mesh.vertices[self.indices]


@dataclass(frozen=True)
class RegionMask:
    """Face-id subset of a mesh plus the derived incident vertex set."""

    face_ids: np.ndarray
    vertex_ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "face_ids", _freeze(np.asarray(self.face_ids, np.int32)))
        object.__setattr__(self, "vertex_ids", _freeze(np.asarray(self.vertex_ids, np.int32)))
        if self.face_ids.size == 0:
            raise MeshbenchError("region mask must be non-empty")

    @classmethod
    def from_faces(cls, mesh: TriangleMesh, face_ids) -> "RegionMask":
        face_ids = np.unique(np.asarray(face_ids, dtype=np.int32))
        if face_ids.size == 0:
            raise MeshbenchError("region mask must be non-empty")
        if face_ids.min() < 0 or face_ids.max() >= mesh.n_faces:
            raise MeshbenchError("region face id outside host mesh")
        vertex_ids = np.unique(mesh.faces[face_ids].reshape(-1)).astype(np.int32)
        return cls(face_ids, vertex_ids)

    @property
    def n_faces(self) -> int:
        return self.face_ids.size

    @property
    def n_vertices(self) -> int:
        return self.vertex_ids.size


VERTEX_TO_VERTEX = "vertex-to-vertex"
VERTEX_TO_POINT = "vertex-to-point"


@dataclass(frozen=True)
class CorrespondenceMap:
    """Directed map from source vertices to target vertices or surface points.

    Vertex-to-point entries carry (face id, barycentric triple) on the target.
    """

    kind: str
    source_ids: np.ndarray
    target_vertex_ids: Optional[np.ndarray] = None
    target_face_ids: Optional[np.ndarray] = None
    barycentric: Optional[np.ndarray] = None
    source: str = ""
    target: str = ""

    def __post_init__(self):
        src = _freeze(np.asarray(self.source_ids, np.int32).reshape(-1))
        object.__setattr__(self, "source_ids", src)
        if self.kind == VERTEX_TO_VERTEX:
            if self.target_vertex_ids is None:
                raise MeshbenchError("vertex-to-vertex map needs target_vertex_ids")
            tgt = _freeze(np.asarray(self.target_vertex_ids, np.int32).reshape(-1))
            if tgt.shape != src.shape:
                raise MeshbenchError("map entry count mismatch")
            object.__setattr__(self, "target_vertex_ids", tgt)
        elif self.kind == VERTEX_TO_POINT:
            if self.target_face_ids is None or self.barycentric is None:
                raise MeshbenchError("vertex-to-point map needs faces and barycentrics")
            faces = _freeze(np.asarray(self.target_face_ids, np.int32).reshape(-1))
            bary = np.asarray(self.barycentric, np.float64).reshape(-1, 3)
            if faces.shape[0] != src.shape[0] or bary.shape[0] != src.shape[0]:
                raise MeshbenchError("map entry count mismatch")
            if bary.size and (bary.min() < -1e-9 or
                              np.abs(bary.sum(axis=1) - 1.0).max() > 1e-9):
                raise MeshbenchError("barycentric coordinates must be >= 0 and sum to 1")
            bary = _freeze(np.clip(bary, 0.0, None))
            object.__setattr__(self, "target_face_ids", faces)
            object.__setattr__(self, "barycentric", bary)
        else:
            raise MeshbenchError(f"unknown correspondence kind {self.kind!r}")

    def __len__(self) -> int:
        return self.source_ids.size

    @classmethod
    def identity(cls, n_vertices: int, source: str = "", target: str = "") -> "CorrespondenceMap":
        ids = np.arange(n_vertices, dtype=np.int32)
        return cls(VERTEX_TO_VERTEX, ids, target_vertex_ids=ids,
                   source=source, target=target)

    def validate_for_target(self, target: TriangleMesh) -> None:
        if self.kind == VERTEX_TO_VERTEX:
            ids = self.target_vertex_ids
            if ids.size and (ids.min() < 0 or ids.max() >= target.n_vertices):
                raise MeshbenchError("map references a vertex outside the target mesh")
        else:
            ids = self.target_face_ids
            if ids.size and (ids.min() < 0 or ids.max() >= target.n_faces):
                raise MeshbenchError("map references a face outside the target mesh")


# ---------------------------------------------------------------------------
# connectivity
# ---------------------------------------------------------------------------


def _sorted_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return np.sort(e, axis=1)


def mesh_edges(mesh: TriangleMesh) -> np.ndarray:
    """Unique undirected edges, (e,2) with first index < second."""
    return np.unique(_sorted_edges(mesh.faces), axis=0)


def connected_components(mesh: TriangleMesh, face_ids) -> list:
    """Partition a face subset by shared-edge adjacency (breadth-first).

    Components are sorted by size descending, ties by lowest contained face id.
    """
    face_ids = np.unique(np.asarray(face_ids, dtype=np.int64))
    if face_ids.size and (face_ids.min() < 0 or face_ids.max() >= mesh.n_faces):
        raise MeshbenchError("face id outside mesh")
    if face_ids.size == 0:
        return []
    sub = mesh.faces[face_ids]
    edges = np.sort(np.concatenate(
        [sub[:, [0, 1]], sub[:, [1, 2]], sub[:, [2, 0]]]), axis=1)
    owner = np.tile(np.arange(face_ids.size), 3)
    key = edges[:, 0].astype(np.int64) * mesh.n_vertices + edges[:, 1]
    order = np.argsort(key, kind="stable")
    key_sorted, owner_sorted = key[order], owner[order]

    adjacency = [[] for _ in range(face_ids.size)]
    run_start = 0
    for i in range(1, key_sorted.size + 1):
        if i == key_sorted.size or key_sorted[i] != key_sorted[run_start]:
            group = owner_sorted[run_start:i]
            for a in group:
                for b in group:
                    if a != b:
                        adjacency[a].append(b)
            run_start = i

    label = np.full(face_ids.size, -1, dtype=np.int64)
    groups = []
    for seed in range(face_ids.size):
        if label[seed] >= 0:
            continue
        comp = len(groups)
        label[seed] = comp
        queue = [seed]
        members = [seed]
        while queue:
            cur = queue.pop()
            for nxt in adjacency[cur]:
                if label[nxt] < 0:
                    label[nxt] = comp
                    queue.append(nxt)
                    members.append(nxt)
        groups.append(np.sort(face_ids[members]).astype(np.int32))
    groups.sort(key=lambda g: (-len(g), int(g[0])))
    return groups


def vertex_face_incidence(mesh: TriangleMesh):
    """CSR-style incidence: (offsets, face_ids) with faces of vertex v at
    face_ids[offsets[v]:offsets[v+1]]."""
    flat = mesh.faces.reshape(-1).astype(np.int64)
    owner = np.repeat(np.arange(mesh.n_faces, dtype=np.int64), 3)
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=mesh.n_vertices)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return offsets, owner[order]


def one_ring_faces(mesh: TriangleMesh, face_id: int) -> np.ndarray:
    """Faces sharing at least one vertex with the given face, itself included."""
    if not 0 <= face_id < mesh.n_faces:
        raise MeshbenchError(f"face id {face_id} outside mesh")
    verts = mesh.faces[face_id]
    mask = np.isin(mesh.faces, verts).any(axis=1)
    return np.flatnonzero(mask).astype(np.int32)


def faces_touching_vertices(mesh: TriangleMesh, vertex_ids) -> np.ndarray:
    """All faces containing at least one of the given vertices."""
    lookup = np.zeros(mesh.n_vertices, bool)
    lookup[np.asarray(vertex_ids, dtype=np.int64)] = True
    mask = lookup[mesh.faces].any(axis=1)
    return np.flatnonzero(mask).astype(np.int32)


def submesh(mesh: TriangleMesh, face_ids):
    """Extract the faces as a standalone mesh.

    Returns (mesh, vertex_ids) where vertex_ids[i] is the original id of
    new vertex i (ascending order, matching RegionMask.vertex_ids).
    """
    face_ids = np.unique(np.asarray(face_ids, dtype=np.int64))
    faces = mesh.faces[face_ids]
    vertex_ids = np.unique(faces.reshape(-1))
    remap = np.full(mesh.n_vertices, -1, dtype=np.int32)
    remap[vertex_ids] = np.arange(vertex_ids.size, dtype=np.int32)
    return TriangleMesh(mesh.vertices[vertex_ids], remap[faces]), vertex_ids.astype(np.int32)


def vertex_rings(mesh: TriangleMesh, seed_vertex_ids, max_ring: int) -> np.ndarray:
    """Per-vertex ring distance (edge hops) from a seed set, capped at max_ring+1.

    Seeds get 0, direct neighbors 1, etc.; vertices farther than max_ring get
    max_ring + 1.
    """
    edges = mesh_edges(mesh)
    ring = np.full(mesh.n_vertices, max_ring + 1, dtype=np.int32)
    ring[np.asarray(seed_vertex_ids, dtype=np.int64)] = 0
    frontier = ring == 0
    for r in range(1, max_ring + 1):
        touch_a = frontier[edges[:, 0]]
        touch_b = frontier[edges[:, 1]]
        nxt = np.zeros(mesh.n_vertices, bool)
        nxt[edges[touch_a, 1]] = True
        nxt[edges[touch_b, 0]] = True
        nxt &= ring > r
        if not nxt.any():
            break
        ring[nxt] = r
        frontier = nxt
    return ring
