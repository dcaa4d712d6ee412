"""PCA morphable basis: construction, reconstruction, and regularized fitting.

A basis is a mean shape plus orthonormal principal directions over flattened
vertex coordinates of a topology-consistent corpus. The component count is
the smallest one reaching the cumulative explained-variance cutoff
(default 0.999).
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .mesh import MeshbenchError, TriangleMesh

_MAGIC = b"MBASIS01"
DEFAULT_VARIANCE_CUTOFF = 0.999


@dataclass(frozen=True)
class MorphableBasis:
    mean_shape: np.ndarray   # (3n,)
    components: np.ndarray   # (3n, k), orthonormal columns
    variances: np.ndarray    # (k,), descending
    faces: np.ndarray        # shared topology (m, 3)

    def __post_init__(self):
        mean = np.asarray(self.mean_shape, np.float64).reshape(-1)
        comp = np.asarray(self.components, np.float64)
        var = np.asarray(self.variances, np.float64).reshape(-1)
        faces = np.asarray(self.faces, np.int32).reshape(-1, 3)
        if comp.shape[0] != mean.shape[0] or comp.shape[1] != var.shape[0]:
            raise MeshbenchError("basis dimensions are inconsistent")
        gram = comp.T @ comp
        if comp.size and np.abs(gram - np.eye(comp.shape[1])).max() > 1e-9:
            raise MeshbenchError("basis columns must be orthonormal")
        if var.size and ((var <= 0).any() or (np.diff(var) > 0).any()):
            raise MeshbenchError("variances must be positive and descending")
        for name, arr in (("mean_shape", mean), ("components", comp),
                          ("variances", var), ("faces", faces)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.shape[0] // 3

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def mean_mesh(self) -> TriangleMesh:
        return TriangleMesh(self.mean_shape.reshape(-1, 3), self.faces)


def _flatten_corpus(corpus: Sequence[TriangleMesh]) -> np.ndarray:
    first = corpus[0]
    rows = []
    for i, mesh in enumerate(corpus):
        if mesh.n_vertices != first.n_vertices or not np.array_equal(mesh.faces, first.faces):
            raise MeshbenchError(
                f"corpus mesh {i} does not share the corpus topology "
                f"({mesh.n_vertices} vertices / {mesh.n_faces} faces vs "
                f"{first.n_vertices} / {first.n_faces})")
        rows.append(mesh.vertices.reshape(-1))
    return np.stack(rows)


def pca_build(corpus: Sequence[TriangleMesh],
              cumulative_variance_cutoff: float = DEFAULT_VARIANCE_CUTOFF) -> MorphableBasis:
    """Build a basis from >= 2 topology-consistent meshes.

    Keeps the smallest component count whose cumulative explained variance
    reaches the cutoff; a corpus of identical shapes has no variance to
    explain and raises.
    """
    if len(corpus) < 2:
        raise MeshbenchError("corpus must contain at least two meshes")
    if not 0 < cumulative_variance_cutoff <= 1:
        raise MeshbenchError("variance cutoff must lie in (0, 1]")
    data = _flatten_corpus(corpus)
    mean = data.mean(axis=0)
    centered = data - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    # rank threshold relative to the raw coordinate scale: centering identical
    # shapes leaves rounding dust that must not count as variance
    scale = max(float(np.abs(data).max()), 1.0)
    tol = scale * max(centered.shape) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol))
    if rank == 0:
        raise MeshbenchError("corpus has zero variance (all shapes identical)")
    s = s[:rank]
    variances = (s * s) / (len(corpus) - 1)
    ratio = np.cumsum(variances) / variances.sum()
    k = int(np.searchsorted(ratio, cumulative_variance_cutoff - 1e-12) + 1)
    k = min(k, rank)
    return MorphableBasis(mean, vt[:k].T, variances[:k], corpus[0].faces)


def reconstruct(basis: MorphableBasis, alpha) -> TriangleMesh:
    """Mean shape plus the coefficient-weighted components."""
    alpha = np.asarray(alpha, np.float64).reshape(-1)
    if alpha.shape[0] > basis.n_components:
        raise MeshbenchError(
            f"{alpha.shape[0]} coefficients for a basis with "
            f"{basis.n_components} components")
    if alpha.shape[0] < basis.n_components:
        alpha = np.pad(alpha, (0, basis.n_components - alpha.shape[0]))
    flat = basis.mean_shape + basis.components @ alpha
    return TriangleMesh(flat.reshape(-1, 3), basis.faces)


def fit_to_mesh(basis: MorphableBasis, target: TriangleMesh,
                reg_weight: float = 0.0) -> np.ndarray:
    """Ridge-regularized coefficients for a full same-topology target.

    Minimizes ||reconstruction - target||^2 + reg_weight * ||alpha||^2 in
    closed form (the regularization pulls toward the mean-shape coefficients,
    which are zero for a centered basis).
    """
    if target.n_vertices != basis.n_vertices:
        raise MeshbenchError(
            f"target has {target.n_vertices} vertices, basis expects "
            f"{basis.n_vertices}")
    if reg_weight < 0:
        raise MeshbenchError("regularization weight must be >= 0")
    residual = target.vertices.reshape(-1) - basis.mean_shape
    # orthonormal columns: the normal matrix is (1 + w) * I
    return (basis.components.T @ residual) / (1.0 + reg_weight)


def fit_to_points(basis: MorphableBasis, vertex_ids, positions,
                  reg_weight: float = 0.0) -> np.ndarray:
    """Fit from sparse vertex correspondences instead of a full target."""
    vertex_ids = np.asarray(vertex_ids, np.int64).reshape(-1)
    positions = np.asarray(positions, np.float64).reshape(-1, 3)
    if vertex_ids.shape[0] != positions.shape[0]:
        raise MeshbenchError("one position per vertex id required")
    if vertex_ids.size and (vertex_ids.min() < 0 or vertex_ids.max() >= basis.n_vertices):
        raise MeshbenchError("vertex id outside the basis topology")
    if reg_weight < 0:
        raise MeshbenchError("regularization weight must be >= 0")
    rows = np.stack([3 * vertex_ids, 3 * vertex_ids + 1, 3 * vertex_ids + 2],
                    axis=1).reshape(-1)
    phi = basis.components[rows]
    b = positions.reshape(-1) - basis.mean_shape[rows]
    normal = phi.T @ phi + reg_weight * np.eye(basis.n_components)
    return np.linalg.solve(normal, phi.T @ b)


def fit_residual_mm(basis: MorphableBasis, target: TriangleMesh,
                    alpha: np.ndarray) -> float:
    """RMS vertex distance between the reconstruction and the target."""
    rec = reconstruct(basis, alpha)
    diff = rec.vertices - target.vertices
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff))))


# ---------------------------------------------------------------------------
# container format: magic, int64 counts, float64 mean/components/variances,
# int32 face list; everything little-endian
# ---------------------------------------------------------------------------


def save_basis(path, basis: MorphableBasis) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqq", basis.n_vertices, basis.n_components,
                             basis.faces.shape[0]))
        fh.write(basis.mean_shape.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.components).astype("<f8").tobytes())
        fh.write(basis.variances.astype("<f8").tobytes())
        fh.write(basis.faces.astype("<i4").tobytes())


def load_basis(path) -> MorphableBasis:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise MeshbenchError(f"{path.name}: not a morphable-basis container")
        n, k, m = struct.unpack("<qqq", fh.read(24))
        mean = np.frombuffer(fh.read(8 * 3 * n), "<f8")
        comp = np.frombuffer(fh.read(8 * 3 * n * k), "<f8").reshape(3 * n, k)
        var = np.frombuffer(fh.read(8 * k), "<f8")
        faces = np.frombuffer(fh.read(4 * 3 * m), "<i4").reshape(m, 3)
        if faces.shape[0] != m:
            raise MeshbenchError(f"{path.name}: truncated container")
    return MorphableBasis(mean, comp, var, faces)
