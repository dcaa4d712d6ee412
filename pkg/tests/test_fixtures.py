import json

import numpy as np
import pytest

from meshbench.fixtures import (
    DONOR_PARAMS,
    donor_face,
    replace_region,
    subdivide_midpoint,
    synth_fixture_corpus,
    synthetic_face,
)
from meshbench.mesh import MeshbenchError


@pytest.fixture(scope="module")
def face():
    return synthetic_face()


class TestSyntheticFace:
    def test_keypoints_distinct_and_in_range(self, face):
        kp = face.keypoints
        assert len(kp) == 68
        assert kp.semantic_count == 68
        kp.validate_for(face.mesh)

    def test_regions_disjoint(self, face):
        seen = {}
        for name, mask in face.regions.items():
            for f in mask.face_ids:
                assert int(f) not in seen, f"face {f} in {name} and {seen.get(int(f))}"
                seen[int(f)] = name

    def test_semantic_slots_plausible(self, face):
        v = face.mesh.vertices
        kp = face.keypoints.indices
        d_eye = np.linalg.norm(v[kp[36]] - v[kp[45]])
        assert 55 < d_eye < 75
        nose_tip = v[kp[30]]
        assert abs(nose_tip[0]) < 3 and abs(nose_tip[1] - 2.0) < 4


class TestReplaceRegion:
    def test_no_blend_keeps_outside_bit_exact(self, face):
        donor = donor_face("nose")
        pred = replace_region(face.mesh, donor, face.regions["nose"], blend_rings=0)
        outside = ~np.isin(np.arange(face.mesh.n_vertices),
                           face.regions["nose"].vertex_ids)
        assert np.array_equal(pred.vertices[outside], face.mesh.vertices[outside])
        inside = face.regions["nose"].vertex_ids
        assert np.array_equal(pred.vertices[inside], donor.vertices[inside])

    def test_blend_band_interpolates(self, face):
        donor = donor_face("nose")
        hard = replace_region(face.mesh, donor, face.regions["nose"], blend_rings=0)
        soft = replace_region(face.mesh, donor, face.regions["nose"], blend_rings=2)
        diff = np.linalg.norm(soft.vertices - hard.vertices, axis=1)
        band = np.flatnonzero(diff > 0)
        assert band.size > 0
        assert not np.isin(band, face.regions["nose"].vertex_ids).any()

    def test_donor_identity_is_noop(self, face):
        pred = replace_region(face.mesh, face.mesh, face.regions["mouth"])
        assert np.array_equal(pred.vertices, face.mesh.vertices)

    def test_topology_mismatch_rejected(self, face):
        small = subdivide_midpoint(face.mesh)[0]
        with pytest.raises(MeshbenchError, match="topology"):
            replace_region(face.mesh, small, face.regions["nose"])


class TestSubdivision:
    def test_child_bookkeeping(self, face):
        sub, parent = subdivide_midpoint(face.mesh)
        assert sub.n_faces == 4 * face.mesh.n_faces
        assert np.array_equal(parent, np.repeat(np.arange(face.mesh.n_faces), 4))

    def test_original_vertices_preserved(self, face):
        sub, _ = subdivide_midpoint(face.mesh)
        assert np.array_equal(sub.vertices[:face.mesh.n_vertices],
                              face.mesh.vertices)

    def test_children_cover_parent_surface(self, face):
        sub, parent = subdivide_midpoint(face.mesh)
        f = 1234
        children = np.flatnonzero(parent == f)
        a, b, c = (sub.vertices[sub.faces[children, k]] for k in range(3))
        child_area = np.linalg.norm(np.cross(b - a, c - a), axis=1).sum() / 2
        pa, pb, pc = (face.mesh.vertices[face.mesh.faces[f, k]] for k in range(3))
        parent_area = np.linalg.norm(np.cross(pb - pa, pc - pa)) / 2
        assert child_area == pytest.approx(parent_area, rel=1e-12)


class TestCorpus:
    def test_manifest_and_identity_correspondences(self, tmp_path):
        manifest = synth_fixture_corpus(tmp_path, blend_rings=0)
        assert {s["name"] for s in manifest["shapes"]} == set(DONOR_PARAMS)
        for shape in manifest["shapes"]:
            payload = json.loads((tmp_path / shape["gt_correspondences"]).read_text())
            assert payload["kind"] == "vertex-to-vertex"
            entries = payload["entries"]
            assert all(a == b for a, b in entries)
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "gt_annotations.toml").exists()

    def test_fixture_meshes_load_back(self, tmp_path):
        from meshbench.meshio import load_annotations, load_mesh

        synth_fixture_corpus(tmp_path)
        gt = load_mesh(tmp_path / "gt_mesh.ply")
        ann = load_annotations(tmp_path / "gt_annotations.toml")
        assert ann.keypoints is not None and len(ann.keypoints) == 68
        regions = ann.regions_for(gt)
        assert set(regions) == set(DONOR_PARAMS)
