"""Synthetic face-like fixtures for controlled evaluation experiments.

The generator builds a structured-grid "face": a smooth dome with nose,
mouth, brow, and cheek features, 68 landmark vertices in the usual
jaw/brow/nose/eyes/mouth layout, and four well-separated region masks.
Donor variants change one feature's shape; replacing a region's vertex
positions with a donor's produces a predicted mesh whose ground-truth
correspondence to the base is the identity (shared topology), which is what
the correspondence-accuracy audits need.
"""

import json
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .mesh import (
    KeypointSet,
    MeshbenchError,
    RegionMask,
    TriangleMesh,
    vertex_rings,
)
from .meshio import Annotations, save_annotations, save_mesh
from .transfer import SEMANTIC_SLOTS

GRID_NX = 49
GRID_NY = 65
GRID_WIDTH = 120.0   # mm, x in [-60, 60]
GRID_HEIGHT = 160.0  # mm, y in [-80, 80]

REGION_BOUNDS: Dict[str, Tuple[float, float, float, float]] = {
    # xmin, xmax, ymin, ymax; pairwise gaps exceed the default blend band
    "nose": (-14.0, 14.0, -12.0, 16.0),
    "mouth": (-22.0, 22.0, -48.0, -26.0),
    "forehead": (-30.0, 30.0, 36.0, 62.0),
    "cheek": (-54.0, -28.0, -22.0, 4.0),
}


@dataclass(frozen=True)
class FaceParams:
    """Feature shape knobs; donors override a subset."""

    dome_amp: float = 45.0
    nose_amp: float = 12.0
    nose_sigma: float = 9.0
    nose_center_y: float = 2.0
    mouth_amp: float = 4.0
    mouth_center_y: float = -36.0
    mouth_sx: float = 18.0
    mouth_sy: float = 8.0
    brow_amp: float = 3.0
    brow_center_y: float = 48.0
    cheek_amp: float = 5.0
    cheek_center: Tuple[float, float] = (-38.0, -9.0)
    cheek_sigma: float = 12.0


# Feature shifts rather than pure inflations: a displaced feature is still a
# genuine shape difference, but its displacement field has little net pull,
# so region alignments away from the edit stay put while the global
# alignment still drifts measurably.
DONOR_PARAMS: Dict[str, FaceParams] = {
    "nose": dc_replace(FaceParams(), nose_center_y=8.0, nose_sigma=11.0),
    "mouth": dc_replace(FaceParams(), mouth_center_y=-31.0, mouth_sy=6.0),
    "forehead": dc_replace(FaceParams(), brow_center_y=43.0, brow_amp=8.0),
    "cheek": dc_replace(FaceParams(), cheek_center=(-34.0, -16.0),
                        cheek_sigma=13.0, cheek_amp=10.0),
}


def _height(params: FaceParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = params.dome_amp * np.exp(-((x / 55.0) ** 2 + (y / 75.0) ** 2))
    z += params.nose_amp * np.exp(
        -((x ** 2 + (y - params.nose_center_y) ** 2) / params.nose_sigma ** 2))
    z += params.mouth_amp * np.exp(
        -((x / params.mouth_sx) ** 2 + ((y - params.mouth_center_y) / params.mouth_sy) ** 2))
    z += params.brow_amp * np.exp(
        -((x / 24.0) ** 2 + ((y - params.brow_center_y) / 10.0) ** 2))
    cx, cy = params.cheek_center
    z += params.cheek_amp * np.exp(
        -(((x - cx) / params.cheek_sigma) ** 2 + ((y - cy) / params.cheek_sigma) ** 2))
    return z


def _grid_vertices(params: FaceParams, nx: int, ny: int):
    xs = np.linspace(-GRID_WIDTH / 2, GRID_WIDTH / 2, nx)
    ys = np.linspace(-GRID_HEIGHT / 2, GRID_HEIGHT / 2, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    x = gx.reshape(-1)
    y = gy.reshape(-1)
    return np.stack([x, y, _height(params, x, y)], axis=1), xs, ys


def _grid_faces(nx: int, ny: int) -> np.ndarray:
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            faces.append([a, b, d])
            faces.append([a, d, c])
    return np.array(faces, dtype=np.int32)


def _landmark_targets() -> np.ndarray:
    pts = []
    # jaw/cheek contour (17): lower arc of an ellipse
    for i in range(17):
        theta = np.pi + np.pi * i / 16.0
        pts.append((54.0 * np.cos(theta), 8.0 + 76.0 * np.sin(theta) * 0.92))
    # eyebrows (10), kept just below the forehead region
    for x in np.linspace(-40.0, -16.0, 5):
        pts.append((x, 33.0))
    for x in np.linspace(16.0, 40.0, 5):
        pts.append((x, 33.0))
    # nose bridge and base (9)
    pts += [(0.0, 18.0), (0.0, 12.0), (0.0, 7.0), (0.0, 2.0)]
    pts += [(-8.0, -9.0), (-4.0, -10.0), (0.0, -11.0), (4.0, -10.0), (8.0, -9.0)]
    # eyes (12); slots 36 and 45 are the outer corners
    pts += [(-32.0, 15.0), (-28.0, 18.0), (-23.0, 18.0),
            (-18.0, 15.0), (-23.0, 12.0), (-28.0, 12.0)]
    pts += [(18.0, 15.0), (23.0, 18.0), (28.0, 18.0),
            (32.0, 15.0), (28.0, 12.0), (23.0, 12.0)]
    # mouth (20): outer ring of 12, inner ring of 8
    for i in range(12):
        theta = 2 * np.pi * i / 12.0
        pts.append((19.0 * np.cos(theta), -36.0 + 10.0 * np.sin(theta)))
    for i in range(8):
        theta = 2 * np.pi * i / 8.0
        pts.append((12.0 * np.cos(theta), -36.0 + 5.0 * np.sin(theta)))
    return np.array(pts)


def _snap_unique(targets: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Nearest grid vertex per target, nudged to a free neighbor on collision."""
    nx, ny = xs.size, ys.size
    used = set()
    out = np.empty(targets.shape[0], dtype=np.int32)
    for k, (tx, ty) in enumerate(targets):
        ix = int(np.clip(round((tx - xs[0]) / (xs[1] - xs[0])), 0, nx - 1))
        iy = int(np.clip(round((ty - ys[0]) / (ys[1] - ys[0])), 0, ny - 1))
        found = None
        for radius in range(0, max(nx, ny)):
            best = None
            for dj in range(-radius, radius + 1):
                for di in range(-radius, radius + 1):
                    if max(abs(di), abs(dj)) != radius:
                        continue
                    jx, jy = ix + di, iy + dj
                    if not (0 <= jx < nx and 0 <= jy < ny):
                        continue
                    vid = jy * nx + jx
                    if vid in used:
                        continue
                    d = (xs[jx] - tx) ** 2 + (ys[jy] - ty) ** 2
                    if best is None or d < best[0]:
                        best = (d, vid)
            if best is not None:
                found = best[1]
                break
        if found is None:
            raise MeshbenchError("grid too small for the landmark layout")
        used.add(found)
        out[k] = found
    return out


@dataclass(frozen=True)
class FaceFixture:
    mesh: TriangleMesh
    keypoints: KeypointSet
    regions: Dict[str, RegionMask]
    semantics: Dict[str, int]


def synthetic_face(params: Optional[FaceParams] = None,
                   nx: int = GRID_NX, ny: int = GRID_NY) -> FaceFixture:
    params = params or FaceParams()
    verts, xs, ys = _grid_vertices(params, nx, ny)
    faces = _grid_faces(nx, ny)
    mesh = TriangleMesh(verts, faces)
    kp = KeypointSet(_snap_unique(_landmark_targets(), xs, ys), semantic_count=68)
    regions = {}
    xy = verts[:, :2]
    for name, (xmin, xmax, ymin, ymax) in REGION_BOUNDS.items():
        inside = ((xy[:, 0] >= xmin) & (xy[:, 0] <= xmax)
                  & (xy[:, 1] >= ymin) & (xy[:, 1] <= ymax))
        face_ids = np.flatnonzero(inside[faces].all(axis=1))
        regions[name] = RegionMask.from_faces(mesh, face_ids)
    return FaceFixture(mesh=mesh, keypoints=kp, regions=regions,
                       semantics=dict(SEMANTIC_SLOTS))


def donor_face(region: str, nx: int = GRID_NX, ny: int = GRID_NY) -> TriangleMesh:
    if region not in DONOR_PARAMS:
        raise MeshbenchError(f"no donor variant for region {region!r}")
    verts, _, _ = _grid_vertices(DONOR_PARAMS[region], nx, ny)
    return TriangleMesh(verts, _grid_faces(nx, ny))


def replace_region(base: TriangleMesh, donor: TriangleMesh, region: RegionMask,
                   blend_rings: int = 2) -> TriangleMesh:
    """Copy the donor's positions onto the region, blending a boundary band.

    Vertices beyond the band keep the base positions bit-exactly; with
    blend_rings=0 every vertex outside the region does.
    """
    if donor.n_vertices != base.n_vertices or not np.array_equal(donor.faces, base.faces):
        raise MeshbenchError("donor topology does not match the base mesh")
    if blend_rings < 0:
        raise MeshbenchError("blend_rings must be >= 0")
    verts = base.vertices.copy()
    verts[region.vertex_ids] = donor.vertices[region.vertex_ids]
    if blend_rings > 0:
        ring = vertex_rings(base, region.vertex_ids, blend_rings)
        for r in range(1, blend_rings + 1):
            sel = ring == r
            w = 1.0 - r / (blend_rings + 1.0)
            # base + w*(donor-base): exact where donor equals base
            verts[sel] = base.vertices[sel] + w * (donor.vertices[sel]
                                                   - base.vertices[sel])
    return TriangleMesh(verts, base.faces)


def subdivide_midpoint(mesh: TriangleMesh) -> Tuple[TriangleMesh, np.ndarray]:
    """1-to-4 midpoint subdivision preserving the original vertices.

    Returns (subdivided mesh, parent_face) with children of face f stored at
    4f..4f+3 so exact child sets are available to tests.
    """
    verts = [mesh.vertices]
    midpoint_id = {}
    next_id = mesh.n_vertices
    new_points = []

    def midpoint(i, j):
        nonlocal next_id
        key = (min(i, j), max(i, j))
        if key not in midpoint_id:
            midpoint_id[key] = next_id
            new_points.append((mesh.vertices[i] + mesh.vertices[j]) / 2.0)
            next_id += 1
        return midpoint_id[key]

    faces = []
    parents = []
    for f, (v0, v1, v2) in enumerate(mesh.faces):
        m01 = midpoint(v0, v1)
        m12 = midpoint(v1, v2)
        m20 = midpoint(v2, v0)
        faces += [[v0, m01, m20], [v1, m12, m01], [v2, m20, m12], [m01, m12, m20]]
        parents += [f, f, f, f]
    if new_points:
        verts.append(np.array(new_points))
    sub = TriangleMesh(np.concatenate(verts), np.array(faces, dtype=np.int32))
    return sub, np.array(parents, dtype=np.int32)


def bumpy_patch_mesh(rng: np.random.Generator, nx: int = 26, ny: int = 26,
                     extent: float = 60.0, n_bumps: int = 14,
                     amp: float = 20.0,
                     wavelength: Optional[float] = None) -> TriangleMesh:
    """Random surface patch with strong interlocking curvature.

    Short-wavelength relief keeps rigid registration from sliding
    tangentially, so ICP locks in quickly.
    """
    wavelength = wavelength or extent / 3.3
    xs = np.linspace(-extent / 2, extent / 2, nx)
    ys = np.linspace(-extent / 2, extent / 2, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    x = gx.reshape(-1)
    y = gy.reshape(-1)
    z = 0.3 * amp * np.cos(2 * np.pi * x / wavelength) * np.cos(2 * np.pi * y / wavelength)
    for _ in range(n_bumps):
        cx, cy = rng.uniform(-extent / 2, extent / 2, 2)
        sigma = rng.uniform(extent / 12, extent / 5)
        z += rng.uniform(-amp, amp) * np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / sigma ** 2))
    return TriangleMesh(np.stack([x, y, z], axis=1), _grid_faces(nx, ny))


# ---------------------------------------------------------------------------
# fixture corpus on disk (the synth command's engine)
# ---------------------------------------------------------------------------


def write_identity_correspondences(path, n_vertices: int,
                                   source: str, target: str) -> None:
    payload = {
        "kind": "vertex-to-vertex",
        "source": source,
        "target": target,
        "entries": [[i, i] for i in range(n_vertices)],
    }
    Path(path).write_text(json.dumps(payload))


def synth_fixture_corpus(out_dir, blend_rings: int = 2,
                         base: Optional[FaceFixture] = None,
                         donors: Optional[Dict[str, TriangleMesh]] = None) -> dict:
    """Write the region-replacement corpus and return its manifest.

    One predicted mesh per region, each with identity ground-truth
    correspondences to the base mesh.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fixture = base or synthetic_face()
    donors = donors or {name: donor_face(name) for name in fixture.regions}

    gt_path = out_dir / "gt_mesh.ply"
    save_mesh(gt_path, fixture.mesh)
    ann = Annotations(
        keypoints=fixture.keypoints,
        region_faces={name: mask.face_ids for name, mask in fixture.regions.items()},
        semantics=fixture.semantics,
    )
    ann_path = out_dir / "gt_annotations.toml"
    save_annotations(ann_path, ann)
    kp_path = out_dir / "pred_keypoints.toml"
    save_annotations(kp_path, Annotations(keypoints=fixture.keypoints,
                                          semantics=fixture.semantics))

    shapes = []
    for name in sorted(fixture.regions):
        if name not in donors:
            continue
        pred = replace_region(fixture.mesh, donors[name], fixture.regions[name],
                              blend_rings=blend_rings)
        pred_path = out_dir / f"pred_{name}.ply"
        save_mesh(pred_path, pred)
        corr_path = out_dir / f"gt_correspondences_{name}.json"
        write_identity_correspondences(corr_path, pred.n_vertices,
                                       source=f"pred_{name}", target="gt_mesh")
        shapes.append({
            "name": name,
            "modified_region": name,
            "pred": pred_path.name,
            "gt": gt_path.name,
            "gt_annotations": ann_path.name,
            "pred_keypoints": kp_path.name,
            "gt_correspondences": corr_path.name,
        })
    manifest = {"blend_rings": blend_rings, "shapes": shapes}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    _write_eval_config(out_dir, manifest)
    return manifest


def _write_eval_config(out_dir: Path, manifest: dict) -> None:
    lines = ["[output]", 'report = "report.json"', ""]
    for shape in manifest["shapes"]:
        lines += [
            "[[shapes]]",
            f'name = "{shape["name"]}"',
            f'pred = "{shape["pred"]}"',
            f'gt = "{shape["gt"]}"',
            f'gt_annotations = "{shape["gt_annotations"]}"',
            f'pred_keypoints = "{shape["pred_keypoints"]}"',
            "",
        ]
    (out_dir / "eval_config.toml").write_text("\n".join(lines))
