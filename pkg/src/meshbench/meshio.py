"""Mesh and annotation file I/O.

Formats:
  OBJ  — ASCII, `v x y z` and `f i j k` (1-based) lines; other directives
         are ignored. Face entries may carry `/vt/vn` suffixes.
  PLY  — binary little-endian; float32 x/y/z, int32 vertex_indices lists,
         optional per-vertex float32 `error` property for heatmap export.
  Sidecar annotations — TOML: a `keypoints` integer list plus a `[regions]`
         table of face-id lists (names like nose/mouth/forehead/cheek plus
         arbitrary extras), and an optional `[semantics]` slot table.
"""

import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .mesh import KeypointSet, MeshbenchError, RegionMask, TriangleMesh


class MeshFormatError(MeshbenchError):
    pass


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is not None:
        return fmt.lower()
    suffix = path.suffix.lower().lstrip(".")
    if suffix in {"obj", "ply"}:
        return suffix
    raise MeshFormatError(f"cannot infer mesh format from {path.name!r}")


def load_mesh(path, fmt: Optional[str] = None) -> TriangleMesh:
    """Load an OBJ or PLY mesh; vertex order is preserved from the file."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "obj":
        mesh = _load_obj(path)
    elif fmt == "ply":
        mesh, _ = _load_ply(path)
    else:
        raise MeshFormatError(f"unsupported format {fmt!r}")
    degenerate = mesh.degenerate_faces()
    if degenerate.size:
        warnings.warn(
            f"{path.name}: {degenerate.size} zero-area face(s), e.g. face "
            f"{int(degenerate[0])}; closest-point queries fall back to edges",
            stacklevel=2,
        )
    return mesh


def save_mesh(path, mesh: TriangleMesh, fmt: Optional[str] = None,
              vertex_errors: Optional[np.ndarray] = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "obj":
        if vertex_errors is not None:
            raise MeshFormatError("per-vertex errors require PLY output")
        _save_obj(path, mesh)
    elif fmt == "ply":
        _save_ply(path, mesh, vertex_errors)
    else:
        raise MeshFormatError(f"unsupported format {fmt!r}")


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------


def _load_obj(path: Path) -> TriangleMesh:
    verts = []
    faces = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "v":
                if len(tokens) < 4:
                    raise MeshFormatError(f"{path.name}:{lineno}: malformed vertex line")
                try:
                    verts.append([float(t) for t in tokens[1:4]])
                except ValueError as exc:
                    raise MeshFormatError(f"{path.name}:{lineno}: {exc}") from None
            elif tokens[0] == "f":
                entries = tokens[1:]
                face_no = len(faces) + 1
                if len(entries) != 3:
                    raise MeshFormatError(
                        f"{path.name}: face {face_no} has {len(entries)} vertices; "
                        "only triangles are supported")
                idx = []
                for entry in entries:
                    first = entry.split("/")[0]
                    try:
                        i = int(first)
                    except ValueError:
                        raise MeshFormatError(
                            f"{path.name}: face {face_no} has malformed index "
                            f"{entry!r}") from None
                    if i < 1 or i > len(verts):
                        raise MeshFormatError(
                            f"{path.name}: face {face_no} references vertex {i}, "
                            f"outside 1..{len(verts)}")
                    idx.append(i - 1)
                faces.append(idx)
    if not verts:
        raise MeshFormatError(f"{path.name}: no vertices")
    try:
        return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int32).reshape(-1, 3))
    except MeshbenchError as exc:
        raise MeshFormatError(f"{path.name}: {exc}") from None


def _save_obj(path: Path, mesh: TriangleMesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# PLY (binary little-endian)
# ---------------------------------------------------------------------------

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _load_ply(path: Path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshFormatError(f"{path.name}: not a PLY file")
        fmt_line = fh.readline().split()
        if len(fmt_line) < 2 or fmt_line[1] != b"binary_little_endian":
            raise MeshFormatError(f"{path.name}: only binary little-endian PLY is supported")
        elements = []  # (name, count, [(prop_kind, ...)])
        current = None
        while True:
            line = fh.readline()
            if not line:
                raise MeshFormatError(f"{path.name}: truncated header")
            tokens = line.split()
            if not tokens or tokens[0] == b"comment":
                continue
            if tokens[0] == b"end_header":
                break
            if tokens[0] == b"element":
                current = (tokens[1].decode(), int(tokens[2]), [])
                elements.append(current)
            elif tokens[0] == b"property":
                if current is None:
                    raise MeshFormatError(f"{path.name}: property before element")
                if tokens[1] == b"list":
                    count_t = _PLY_SCALARS.get(tokens[2].decode())
                    item_t = _PLY_SCALARS.get(tokens[3].decode())
                    name = tokens[4].decode()
                    if count_t is None or item_t is None:
                        raise MeshFormatError(f"{path.name}: unsupported list types")
                    current[2].append(("list", count_t, item_t, name))
                else:
                    scalar_t = _PLY_SCALARS.get(tokens[1].decode())
                    name = tokens[2].decode()
                    if scalar_t is None:
                        raise MeshFormatError(
                            f"{path.name}: unsupported property type {tokens[1].decode()!r}")
                    current[2].append(("scalar", scalar_t, name))

        verts = None
        faces = None
        errors = None
        for name, count, props in elements:
            if all(p[0] == "scalar" for p in props):
                dtype = np.dtype([(p[2], "<" + p[1]) for p in props])
                raw = fh.read(dtype.itemsize * count)
                if len(raw) != dtype.itemsize * count:
                    raise MeshFormatError(f"{path.name}: truncated {name} data")
                data = np.frombuffer(raw, dtype=dtype)
                if name == "vertex":
                    if not {"x", "y", "z"} <= set(dtype.names):
                        raise MeshFormatError(f"{path.name}: vertex element lacks x/y/z")
                    verts = np.stack(
                        [data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
                    if "error" in dtype.names:
                        errors = data["error"].astype(np.float64)
            else:
                # element with list properties is read entry by entry
                rows = []
                for i in range(count):
                    row = []
                    for p in props:
                        if p[0] == "scalar":
                            item = np.dtype("<" + p[1])
                            row.append(np.frombuffer(fh.read(item.itemsize), item)[0])
                        else:
                            count_dt = np.dtype("<" + p[1])
                            item_dt = np.dtype("<" + p[2])
                            n = int(np.frombuffer(fh.read(count_dt.itemsize), count_dt)[0])
                            values = np.frombuffer(fh.read(item_dt.itemsize * n), item_dt)
                            row.append(values)
                    if name == "face":
                        poly = row[0]
                        if len(poly) != 3:
                            raise MeshFormatError(
                                f"{path.name}: face {i} has {len(poly)} vertices; "
                                "only triangles are supported")
                        rows.append(poly)
                if name == "face":
                    faces = np.array(rows, dtype=np.int32).reshape(-1, 3)
        if verts is None:
            raise MeshFormatError(f"{path.name}: no vertex element")
        if faces is None:
            faces = np.zeros((0, 3), dtype=np.int32)
        try:
            return TriangleMesh(verts, faces), errors
        except MeshbenchError as exc:
            raise MeshFormatError(f"{path.name}: {exc}") from None


def load_ply_vertex_errors(path) -> Optional[np.ndarray]:
    """Per-vertex `error` property of a PLY heatmap, or None if absent."""
    _, errors = _load_ply(Path(path))
    return errors


def _save_ply(path: Path, mesh: TriangleMesh, vertex_errors=None) -> None:
    if vertex_errors is not None:
        vertex_errors = np.asarray(vertex_errors, dtype=np.float32).reshape(-1)
        if vertex_errors.shape[0] != mesh.n_vertices:
            raise MeshFormatError("vertex_errors length must match vertex count")
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {mesh.n_vertices}",
              "property float x", "property float y", "property float z"]
    if vertex_errors is not None:
        header.append("property float error")
    header += [f"element face {mesh.n_faces}",
               "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        n_props = 3 + (1 if vertex_errors is not None else 0)
        vdata = np.empty((mesh.n_vertices, n_props), dtype="<f4")
        vdata[:, :3] = mesh.vertices
        if vertex_errors is not None:
            vdata[:, 3] = vertex_errors
        fh.write(vdata.tobytes())
        fdata = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
        fdata["n"] = 3
        fdata["idx"] = mesh.faces
        fh.write(fdata.tobytes())


# ---------------------------------------------------------------------------
# sidecar annotations
# ---------------------------------------------------------------------------


@dataclass
class Annotations:
    """Keypoints and named face-id regions attached to one mesh."""

    keypoints: Optional[KeypointSet] = None
    region_faces: Dict[str, np.ndarray] = field(default_factory=dict)
    semantics: Dict[str, int] = field(default_factory=dict)

    def regions_for(self, mesh: TriangleMesh) -> Dict[str, RegionMask]:
        return {name: RegionMask.from_faces(mesh, ids)
                for name, ids in self.region_faces.items()}


def load_annotations(path) -> Annotations:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise MeshFormatError(f"{path.name}: {exc}") from None
    ann = Annotations()
    if "keypoints" in data:
        indices = data["keypoints"]
        if not isinstance(indices, list) or not all(isinstance(i, int) for i in indices):
            raise MeshFormatError(f"{path.name}: keypoints must be an integer list")
        semantic = data.get("keypoint_scheme_size")
        ann.keypoints = KeypointSet(np.array(indices, dtype=np.int32),
                                    semantic_count=semantic)
    for name, ids in data.get("regions", {}).items():
        if not isinstance(ids, list) or not all(isinstance(i, int) for i in ids):
            raise MeshFormatError(f"{path.name}: region {name!r} must be an integer list")
        ann.region_faces[name] = np.array(ids, dtype=np.int32)
    for name, slot in data.get("semantics", {}).items():
        if not isinstance(slot, int):
            raise MeshFormatError(f"{path.name}: semantic slot {name!r} must be an integer")
        ann.semantics[name] = slot
    return ann


def save_annotations(path, annotations: Annotations) -> None:
    lines = []
    if annotations.keypoints is not None:
        kp = annotations.keypoints
        lines.append(f"keypoints = [{', '.join(str(int(i)) for i in kp.indices)}]")
        if kp.semantic_count is not None:
            lines.append(f"keypoint_scheme_size = {kp.semantic_count}")
    if annotations.semantics:
        lines.append("")
        lines.append("[semantics]")
        for name, slot in annotations.semantics.items():
            lines.append(f"{name} = {int(slot)}")
    if annotations.region_faces:
        lines.append("")
        lines.append("[regions]")
        for name, ids in annotations.region_faces.items():
            lines.append(f"{name} = [{', '.join(str(int(i)) for i in ids)}]")
    Path(path).write_text("\n".join(lines) + "\n")
