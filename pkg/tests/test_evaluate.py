import numpy as np
import pytest

from meshbench.evaluate import bicp_evaluate, evaluate_region, region_mean_stats
from meshbench.fixtures import donor_face, replace_region, synthetic_face
from meshbench.mesh import MeshbenchError


@pytest.fixture(scope="module")
def face():
    return synthetic_face()


class TestIdenticalMeshes:
    def test_every_region_error_vanishes(self, face):
        reports = bicp_evaluate(face.mesh, face.mesh, face.regions,
                                face.keypoints, face.keypoints)
        for report in reports:
            assert report.nmse_mm2 < 1e-8, report.region

    def test_composite_pools_vertex_counts(self, face):
        reports = bicp_evaluate(face.mesh, face.mesh, face.regions,
                                face.keypoints, face.keypoints)
        composite = reports[-1]
        assert composite.region == "all"
        named = reports[:-1]
        assert composite.vertex_count == sum(r.vertex_count for r in named)
        assert composite.vertex_errors_mm.size == composite.vertex_count

    def test_report_statistics_recomputable(self, face):
        reports = bicp_evaluate(face.mesh, face.mesh, face.regions,
                                face.keypoints, face.keypoints)
        for r in reports:
            errs = r.vertex_errors_mm
            assert r.nmse_mm2 == pytest.approx(float(np.mean(errs ** 2)), abs=1e-12)
            assert r.rms_mm == pytest.approx(float(np.sqrt(np.mean(errs ** 2))), abs=1e-12)
            assert r.mean_mm == pytest.approx(float(np.mean(errs)), abs=1e-12)

    def test_region_mean_aggregate(self, face):
        reports = bicp_evaluate(face.mesh, face.mesh, face.regions,
                                face.keypoints, face.keypoints)
        agg = region_mean_stats(reports)
        named = [r for r in reports if r.region != "all"]
        assert agg.mean_mm == pytest.approx(np.mean([r.mean_mm for r in named]))


class TestLocalization:
    def test_nose_fixture_localizes(self, face):
        pred = replace_region(face.mesh, donor_face("nose"), face.regions["nose"])
        reports = {r.region: r
                   for r in bicp_evaluate(pred, face.mesh, face.regions,
                                          face.keypoints, face.keypoints)}
        nose = reports["nose"].nmse_mm2
        for name in ("mouth", "forehead", "cheek"):
            assert reports[name].nmse_mm2 < 0.05 * nose

    def test_region_locality_under_remote_edits(self, face):
        # editing the prediction far outside a region's support barely moves
        # that region's error
        pred = replace_region(face.mesh, donor_face("nose"), face.regions["nose"])
        base = evaluate_region(pred, face.mesh, "nose", face.regions["nose"],
                               face.keypoints, face.keypoints).report.nmse_mm2
        verts = pred.vertices.copy()
        far = (verts[:, 1] < -70) & (np.abs(verts[:, 0]) > 40)  # bottom corners
        assert far.sum() > 0
        verts[far] += [0, 0, 4.0]
        edited = pred.with_vertices(verts)
        got = evaluate_region(edited, face.mesh, "nose", face.regions["nose"],
                              face.keypoints, face.keypoints).report.nmse_mm2
        assert abs(got - base) < 0.01 * base


class TestErrors:
    def test_region_name_attached_to_failures(self, face):
        from meshbench.mesh import KeypointSet

        bad_kp = KeypointSet(face.keypoints.indices[:10])
        with pytest.raises(MeshbenchError, match="region 'nose'"):
            evaluate_region(face.mesh, face.mesh, "nose", face.regions["nose"],
                            bad_kp, face.keypoints)

    def test_no_regions_rejected(self, face):
        with pytest.raises(MeshbenchError):
            bicp_evaluate(face.mesh, face.mesh, {}, face.keypoints, face.keypoints)


def test_sparse_keypoint_region_warns_and_succeeds(face):
    # the cheek mask holds <4 keypoints, so landmark-only stages are skipped
    evaluation = evaluate_region(face.mesh, face.mesh, "cheek",
                                 face.regions["cheek"], face.keypoints,
                                 face.keypoints)
    assert any("keypoints inside the region" in w
               for w in evaluation.report.warnings)
    assert evaluation.report.nmse_mm2 < 1e-8
