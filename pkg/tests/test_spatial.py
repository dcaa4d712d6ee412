import numpy as np
import pytest

from meshbench._accel import NUMBA_ENABLED
from meshbench.kernels import closest_on_triangles_numpy
from meshbench.mesh import CorrespondenceMap, MeshbenchError, TriangleMesh
from meshbench.spatial import (
    SpatialIndex,
    closest_point_on_triangle,
    map_target_coordinates,
    nearest_surface_point,
    nearest_surface_points,
    nearest_surface_points_bruteforce,
    nearest_vertex,
    nearest_vertices,
)
from meshbench.fixtures import bumpy_patch_mesh


class TestClosestPointOnTriangle:
    A = np.array([0.0, 0.0, 0.0])
    B = np.array([2.0, 0.0, 0.0])
    C = np.array([0.0, 2.0, 0.0])

    def test_centroid(self):
        centroid = (self.A + self.B + self.C) / 3
        point, bary = closest_point_on_triangle(centroid, self.A, self.B, self.C)
        assert np.allclose(point, centroid, atol=1e-12)
        assert np.allclose(bary, [1 / 3, 1 / 3, 1 / 3], atol=1e-9)

    def test_vertex_region(self):
        point, bary = closest_point_on_triangle([-1, -1, 3], self.A, self.B, self.C)
        assert np.allclose(point, self.A)
        assert np.allclose(bary, [1, 0, 0])

    def test_edge_region(self):
        point, bary = closest_point_on_triangle([1.0, -2.0, 0.5], self.A, self.B, self.C)
        assert np.allclose(point, [1, 0, 0], atol=1e-12)
        assert abs(bary[2]) < 1e-12

    def test_barycentric_reconstructs_point(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b, c = rng.normal(0, 5, (3, 3))
            p = rng.normal(0, 8, 3)
            point, bary = closest_point_on_triangle(p, a, b, c)
            rebuilt = bary[0] * a + bary[1] * b + bary[2] * c
            assert np.allclose(rebuilt, point, atol=1e-9)
            assert bary.min() >= -1e-12 and abs(bary.sum() - 1) < 1e-9

    def test_dense_sampling_oracle(self):
        # exhaustive surface sampling bounds the true minimum distance
        rng = np.random.default_rng(1)
        grid = []
        n = 100
        for i in range(n + 1):
            for j in range(n + 1 - i):
                u = i / n
                v = j / n
                grid.append((u, v, 1 - u - v))
        grid = np.array(grid)
        for _ in range(20):
            a, b, c = rng.normal(0, 5, (3, 3))
            p = rng.normal(0, 6, 3)
            point, _ = closest_point_on_triangle(p, a, b, c)
            dist = np.linalg.norm(p - point)
            samples = grid @ np.stack([a, b, c])
            sample_min = np.linalg.norm(samples - p, axis=1).min()
            spacing = max(np.linalg.norm(b - a), np.linalg.norm(c - a),
                          np.linalg.norm(c - b)) / n
            assert dist <= sample_min + 1e-12
            assert sample_min - dist <= spacing

    def test_degenerate_triangle_edge_fallback(self):
        point, bary = closest_point_on_triangle(
            [0.5, 1.0, 0.0], [0, 0, 0], [1.0, 0, 0], [2.0, 0, 0])
        assert np.allclose(point, [0.5, 0, 0])
        assert abs(bary.sum() - 1) < 1e-12

    def test_numpy_kernel_matches_scalar(self):
        rng = np.random.default_rng(2)
        tri = rng.normal(0, 5, (300, 3, 3))
        p = rng.normal(0, 8, (300, 3))
        dsq, bary, point = closest_on_triangles_numpy(
            p, tri[:, 0], tri[:, 1], tri[:, 2])
        for i in range(300):
            sp, sb = closest_point_on_triangle(p[i], tri[i, 0], tri[i, 1], tri[i, 2])
            assert np.allclose(point[i], sp, atol=1e-9)
            assert abs(np.dot(p[i] - point[i], p[i] - point[i]) - dsq[i]) < 1e-12


class TestNearestSurface:
    def test_cube_axis_projection(self, cube_mesh):
        index = SpatialIndex.build(cube_mesh)
        face, bary, point = nearest_surface_point([2.0, 0.5, 0.5], cube_mesh, index)
        assert np.allclose(point, [1.0, 0.5, 0.5])

    def test_vertex_query_hits_lowest_incident_face(self, cube_mesh):
        index = SpatialIndex.build(cube_mesh)
        face, bary, point = nearest_surface_point([0.0, 0.0, 0.0], cube_mesh, index)
        assert face == 0  # faces 0,1,4,5,10 contain vertex 0; tie -> lowest
        assert np.allclose(point, [0, 0, 0])

    def test_brute_force_equivalence_bit_exact(self, cube_mesh):
        rng = np.random.default_rng(3)
        queries = rng.normal(0.5, 2.0, (500, 3))
        index = SpatialIndex.build(cube_mesh)
        f1, b1, p1, d1 = nearest_surface_points(cube_mesh, index, queries)
        f2, b2, p2, d2 = nearest_surface_points_bruteforce(cube_mesh, queries)
        assert np.array_equal(d1, d2)
        assert np.array_equal(f1, f2)
        assert np.array_equal(b1, b2)
        assert np.array_equal(p1, p2)

    def test_brute_force_equivalence_random_meshes(self):
        rng = np.random.default_rng(4)
        for trial in range(3):
            mesh = bumpy_patch_mesh(rng, nx=15, ny=15)
            index = SpatialIndex.build(mesh)
            lo = mesh.vertices.min(axis=0) - 5
            hi = mesh.vertices.max(axis=0) + 5
            queries = rng.uniform(lo, hi, (200, 3))
            f1, _, _, d1 = nearest_surface_points(mesh, index, queries)
            f2, _, _, d2 = nearest_surface_points_bruteforce(mesh, queries)
            assert np.array_equal(d1, d2) and np.array_equal(f1, f2)

    def test_empty_mesh_rejected(self):
        mesh = TriangleMesh(np.zeros((3, 3)) + np.arange(3)[:, None], np.zeros((0, 3)))
        with pytest.raises(MeshbenchError):
            SpatialIndex.build(mesh)


class TestNearestVertex:
    def test_exact_hit(self, cube_mesh):
        assert nearest_vertex(cube_mesh.vertices[7], cube_mesh) == 7

    def test_tie_takes_lowest_index(self):
        mesh = TriangleMesh([[0, 0, 0], [2, 0, 0], [1, 5, 0]], [[0, 1, 2]])
        # equidistant between vertices 0 and 1
        assert nearest_vertex([1.0, 0.0, 0.0], mesh) == 0

    def test_matches_linear_scan(self, face_fixture):
        mesh = face_fixture.mesh
        rng = np.random.default_rng(5)
        queries = rng.uniform(-70, 70, (300, 3))
        got = nearest_vertices(mesh, queries)
        for q, g in zip(queries, got):
            dsq = ((mesh.vertices - q) ** 2).sum(axis=1)
            assert dsq[g] == dsq.min()
            assert g == int(np.argmin(dsq))


class TestMapTargetCoordinates:
    def test_identity_vertex_map(self, cube_mesh):
        cmap = CorrespondenceMap.identity(cube_mesh.n_vertices)
        assert np.array_equal(map_target_coordinates(cmap, cube_mesh),
                              cube_mesh.vertices)

    def test_vertex_of_face(self, cube_mesh):
        cmap = CorrespondenceMap("vertex-to-point", [0], target_face_ids=[3],
                                 barycentric=[[0.0, 1.0, 0.0]])
        expected = cube_mesh.vertices[cube_mesh.faces[3, 1]]
        assert np.allclose(map_target_coordinates(cmap, cube_mesh), [expected])

    def test_random_barycentric_matches_direct_interpolation(self, face_fixture):
        mesh = face_fixture.mesh
        rng = np.random.default_rng(6)
        n = 100
        faces = rng.integers(0, mesh.n_faces, n)
        raw = rng.random((n, 3))
        bary = raw / raw.sum(axis=1, keepdims=True)
        ids = np.arange(n)
        cmap = CorrespondenceMap("vertex-to-point", ids, target_face_ids=faces,
                                 barycentric=bary)
        got = map_target_coordinates(cmap, mesh)
        corners = mesh.vertices[mesh.faces[faces]]
        expected = (bary[:, :, None] * corners).sum(axis=1)
        assert np.allclose(got, expected, atol=1e-12)

    def test_invalid_target_rejected(self, cube_mesh):
        cmap = CorrespondenceMap("vertex-to-point", [0], target_face_ids=[99],
                                 barycentric=[[1.0, 0.0, 0.0]])
        with pytest.raises(MeshbenchError):
            map_target_coordinates(cmap, cube_mesh)


def test_barycentric_closure(face_fixture):
    """Re-projecting a mapped surface point lands on the same face or an
    equally distant adjacent one."""
    mesh = face_fixture.mesh
    index = SpatialIndex.build(mesh)
    rng = np.random.default_rng(7)
    queries = rng.uniform(-60, 60, (100, 3)) + np.array([0, 0, 30.0])
    faces, bary, points, _ = nearest_surface_points(mesh, index, queries)
    refaces, _, repoints, redsq = nearest_surface_points(mesh, index, points)
    assert (np.sqrt(redsq) < 1e-9).all()
    for f0, f1 in zip(faces, refaces):
        if f0 != f1:
            shared = set(mesh.faces[f0].tolist()) & set(mesh.faces[f1].tolist())
            assert shared, "re-projection landed on a non-adjacent face"


@pytest.mark.skipif(not NUMBA_ENABLED, reason="single-backend run")
def test_backends_agree_on_distances(cube_mesh):
    """The numpy fallback and numba path find the same nearest faces."""
    from meshbench.kernels import (
        _surface_query_culled_numpy,
        _surface_query_brute_numpy,
    )
    rng = np.random.default_rng(8)
    queries = rng.normal(0.5, 1.5, (200, 3))
    index = SpatialIndex.build(cube_mesh)
    f_nb, _, _, d_nb = nearest_surface_points(cube_mesh, index, queries)
    f_np, _, _, d_np = _surface_query_culled_numpy(index, queries)
    assert np.array_equal(f_nb, f_np)
    assert np.allclose(d_nb, d_np, rtol=1e-12, atol=1e-12)
    f_bf, _, _, d_bf = _surface_query_brute_numpy(
        index.tri_a, index.tri_b, index.tri_c, queries)
    assert np.array_equal(f_np, f_bf) and np.array_equal(d_np, d_bf)
