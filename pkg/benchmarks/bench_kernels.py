"""Benchmark the hot kernels under the numba backend vs the numpy fallback.

Run directly for the current backend, or with --both to compare: the script
re-invokes itself in a subprocess with MESHBENCH_PURE_NUMPY=1 for the
fallback numbers.

Usage:
    python benchmarks/bench_kernels.py [--queries N] [--faces-grid N] [--both]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def build_inputs(grid_n, n_queries, seed=7):
    from meshbench.fixtures import bumpy_patch_mesh
    from meshbench.spatial import SpatialIndex

    rng = np.random.default_rng(seed)
    mesh = bumpy_patch_mesh(rng, nx=grid_n, ny=grid_n, extent=100.0)
    index = SpatialIndex.build(mesh)
    lo = mesh.vertices.min(axis=0) - 10.0
    hi = mesh.vertices.max(axis=0) + 10.0
    queries = rng.uniform(lo, hi, (n_queries, 3))
    return mesh, index, queries


def run_once(grid_n, n_queries):
    import meshbench
    from meshbench.rigid import SimilarityTransform, gicp
    from meshbench.spatial import nearest_surface_points, nearest_vertices

    mesh, index, queries = build_inputs(grid_n, n_queries)
    # warm up JIT compilation outside the timed sections
    nearest_surface_points(mesh, index, queries[:4])
    nearest_vertices(mesh, queries[:4])

    timings = {}
    t0 = time.perf_counter()
    nearest_surface_points(mesh, index, queries)
    timings["surface_query_ms"] = 1000 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    nearest_vertices(mesh, queries)
    timings["nearest_vertex_ms"] = 1000 * (time.perf_counter() - t0)

    angle = np.deg2rad(4.0)
    c, s = np.cos(angle), np.sin(angle)
    perturb = SimilarityTransform(
        np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]]), np.array([2.0, -1.0, 0.5]))
    moved = perturb.apply_mesh(mesh)
    t0 = time.perf_counter()
    result = gicp(moved, mesh)
    timings["gicp_ms"] = 1000 * (time.perf_counter() - t0)
    timings["gicp_iterations"] = result.iterations

    return {
        "backend": "numba" if meshbench.NUMBA_ENABLED else "numpy",
        "faces": mesh.n_faces,
        "queries": n_queries,
        **{k: round(v, 3) for k, v in timings.items()},
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--queries", type=int, default=20000)
    parser.add_argument("--faces-grid", type=int, default=80,
                        help="Grid side; faces = 2*(n-1)^2.")
    parser.add_argument("--both", action="store_true",
                        help="Also run the pure-numpy fallback in a subprocess.")
    args = parser.parse_args()

    print(json.dumps(run_once(args.faces_grid, args.queries)), flush=True)
    if args.both:
        env = dict(os.environ)
        env["MESHBENCH_PURE_NUMPY"] = "1"
        subprocess.run(
            [sys.executable, os.path.abspath(__file__),
             "--queries", str(args.queries), "--faces-grid", str(args.faces_grid)],
            env=env, check=True)


if __name__ == "__main__":
    main()
