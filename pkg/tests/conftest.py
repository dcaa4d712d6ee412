import numpy as np
import pytest

from meshbench.mesh import TriangleMesh


@pytest.fixture(scope="session")
def cube_mesh():
    verts = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ], dtype=float)
    faces = np.array([
        [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
        [0, 1, 5], [0, 5, 4], [1, 2, 6], [1, 6, 5],
        [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7],
    ])
    return TriangleMesh(verts, faces)


def make_grid_mesh(nx, ny, extent=10.0, height=None):
    xs = np.linspace(0.0, extent, nx)
    ys = np.linspace(0.0, extent, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    x, y = gx.reshape(-1), gy.reshape(-1)
    z = height(x, y) if height is not None else np.zeros_like(x)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriangleMesh(np.stack([x, y, z], axis=1), np.array(faces))


@pytest.fixture(scope="session")
def grid_mesh():
    return make_grid_mesh(8, 8, height=lambda x, y: 0.15 * x * y)


@pytest.fixture(scope="session")
def face_fixture():
    from meshbench.fixtures import synthetic_face

    return synthetic_face()
