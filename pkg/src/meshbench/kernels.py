"""Geometry kernels: closest point on triangle, BVH surface queries, nearest vertex.

Two implementations live side by side. The scalar-loop kernels are compiled
with numba when the numba backend is active; the vectorized numpy kernels are
the fallback path (see _accel.ENV_FLAG). Within either backend, indexed
queries and brute-force queries share the same per-triangle arithmetic, so
their distances compare bit-equal and ties resolve identically (lowest face
id wins, then lowest vertex id for vertex queries).

The closest-point-on-triangle routine follows the Voronoi-region walk from
Ericson, "Real-Time Collision Detection" (2004), with an edge fallback for
fully degenerate triangles.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, njit

_LEAF_SIZE = 8
_STACK_CAP = 128


# ---------------------------------------------------------------------------
# scalar kernels (numba path)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _closest_on_segment(px, py, pz, ax, ay, az, bx, by, bz):
    # returns (dsq, t, qx, qy, qz) with q = a + t*(b-a), t in [0,1]
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    denom = abx * abx + aby * aby + abz * abz
    if denom <= 0.0:
        t = 0.0
    else:
        t = ((px - ax) * abx + (py - ay) * aby + (pz - az) * abz) / denom
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    qx = ax + t * abx
    qy = ay + t * aby
    qz = az + t * abz
    dx = px - qx
    dy = py - qy
    dz = pz - qz
    return dx * dx + dy * dy + dz * dz, t, qx, qy, qz


@njit(cache=True)
def _closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    # returns (dsq, u, v, w, qx, qy, qz) with q = u*a + v*b + w*c
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        dx = px - ax
        dy = py - ay
        dz = pz - az
        return dx * dx + dy * dy + dz * dz, 1.0, 0.0, 0.0, ax, ay, az

    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        dx = px - bx
        dy = py - by
        dz = pz - bz
        return dx * dx + dy * dy + dz * dz, 0.0, 1.0, 0.0, bx, by, bz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0 and d1 - d3 > 0.0:
        t = d1 / (d1 - d3)
        qx = ax + t * abx
        qy = ay + t * aby
        qz = az + t * abz
        dx = px - qx
        dy = py - qy
        dz = pz - qz
        return dx * dx + dy * dy + dz * dz, 1.0 - t, t, 0.0, qx, qy, qz

    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        dx = px - cx
        dy = py - cy
        dz = pz - cz
        return dx * dx + dy * dy + dz * dz, 0.0, 0.0, 1.0, cx, cy, cz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0 and d2 - d6 > 0.0:
        t = d2 / (d2 - d6)
        qx = ax + t * acx
        qy = ay + t * acy
        qz = az + t * acz
        dx = px - qx
        dy = py - qy
        dz = pz - qz
        return dx * dx + dy * dy + dz * dz, 1.0 - t, 0.0, t, qx, qy, qz

    va = d3 * d6 - d5 * d4
    e1 = d4 - d3
    e2 = d5 - d6
    if va <= 0.0 and e1 >= 0.0 and e2 >= 0.0 and e1 + e2 > 0.0:
        t = e1 / (e1 + e2)
        qx = bx + t * (cx - bx)
        qy = by + t * (cy - by)
        qz = bz + t * (cz - bz)
        dx = px - qx
        dy = py - qy
        dz = pz - qz
        return dx * dx + dy * dy + dz * dz, 0.0, 1.0 - t, t, qx, qy, qz

    denom = va + vb + vc
    if denom > 0.0:
        v = vb / denom
        w = vc / denom
        qx = ax + v * abx + w * acx
        qy = ay + v * aby + w * acy
        qz = az + v * abz + w * acz
        dx = px - qx
        dy = py - qy
        dz = pz - qz
        return dx * dx + dy * dy + dz * dz, 1.0 - v - w, v, w, qx, qy, qz

    # degenerate triangle: best of the three edges
    best_dsq, t, qx, qy, qz = _closest_on_segment(px, py, pz, ax, ay, az, bx, by, bz)
    u = 1.0 - t
    v = t
    w = 0.0
    dsq2, t2, qx2, qy2, qz2 = _closest_on_segment(px, py, pz, ax, ay, az, cx, cy, cz)
    if dsq2 < best_dsq:
        best_dsq = dsq2
        u = 1.0 - t2
        v = 0.0
        w = t2
        qx, qy, qz = qx2, qy2, qz2
    dsq3, t3, qx3, qy3, qz3 = _closest_on_segment(px, py, pz, bx, by, bz, cx, cy, cz)
    if dsq3 < best_dsq:
        best_dsq = dsq3
        u = 0.0
        v = 1.0 - t3
        w = t3
        qx, qy, qz = qx3, qy3, qz3
    return best_dsq, u, v, w, qx, qy, qz


@njit(cache=True)
def _surface_query_brute(ta, tb, tc, queries):
    nq = queries.shape[0]
    nf = ta.shape[0]
    out_face = np.empty(nq, np.int64)
    out_bary = np.empty((nq, 3), np.float64)
    out_point = np.empty((nq, 3), np.float64)
    out_dsq = np.empty(nq, np.float64)
    for q in range(nq):
        px = queries[q, 0]
        py = queries[q, 1]
        pz = queries[q, 2]
        best = np.inf
        bestf = -1
        bu = 0.0
        bv = 0.0
        bw = 0.0
        bx = 0.0
        by = 0.0
        bz = 0.0
        for f in range(nf):
            dsq, u, v, w, x, y, z = _closest_on_triangle(
                px, py, pz,
                ta[f, 0], ta[f, 1], ta[f, 2],
                tb[f, 0], tb[f, 1], tb[f, 2],
                tc[f, 0], tc[f, 1], tc[f, 2],
            )
            if dsq < best:
                best = dsq
                bestf = f
                bu, bv, bw = u, v, w
                bx, by, bz = x, y, z
        out_face[q] = bestf
        out_bary[q, 0] = bu
        out_bary[q, 1] = bv
        out_bary[q, 2] = bw
        out_point[q, 0] = bx
        out_point[q, 1] = by
        out_point[q, 2] = bz
        out_dsq[q] = best
    return out_face, out_bary, out_point, out_dsq


@njit(cache=True)
def _surface_query_bvh(
    node_bb_min, node_bb_max, node_left, node_right, node_start, node_count,
    tri_order, ta, tb, tc, queries,
):
    nq = queries.shape[0]
    out_face = np.empty(nq, np.int64)
    out_bary = np.empty((nq, 3), np.float64)
    out_point = np.empty((nq, 3), np.float64)
    out_dsq = np.empty(nq, np.float64)
    stack = np.empty(_STACK_CAP, np.int64)
    for q in range(nq):
        px = queries[q, 0]
        py = queries[q, 1]
        pz = queries[q, 2]
        best = np.inf
        bestf = np.int64(-1)
        bu = 0.0
        bv = 0.0
        bw = 0.0
        bx = 0.0
        by = 0.0
        bz = 0.0
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            dx = node_bb_min[node, 0] - px
            if dx < 0.0:
                dx = px - node_bb_max[node, 0]
                if dx < 0.0:
                    dx = 0.0
            dy = node_bb_min[node, 1] - py
            if dy < 0.0:
                dy = py - node_bb_max[node, 1]
                if dy < 0.0:
                    dy = 0.0
            dz = node_bb_min[node, 2] - pz
            if dz < 0.0:
                dz = pz - node_bb_max[node, 2]
                if dz < 0.0:
                    dz = 0.0
            # prune only when strictly farther: equal-distance nodes may hold
            # a tied triangle with a lower face id
            if dx * dx + dy * dy + dz * dz > best:
                continue
            left = node_left[node]
            if left < 0:
                s = node_start[node]
                e = s + node_count[node]
                for k in range(s, e):
                    f = tri_order[k]
                    dsq, u, v, w, x, y, z = _closest_on_triangle(
                        px, py, pz,
                        ta[f, 0], ta[f, 1], ta[f, 2],
                        tb[f, 0], tb[f, 1], tb[f, 2],
                        tc[f, 0], tc[f, 1], tc[f, 2],
                    )
                    if dsq < best or (dsq == best and f < bestf):
                        best = dsq
                        bestf = f
                        bu, bv, bw = u, v, w
                        bx, by, bz = x, y, z
            else:
                stack[sp] = node_right[node]
                stack[sp + 1] = left
                sp += 2
        out_face[q] = bestf
        out_bary[q, 0] = bu
        out_bary[q, 1] = bv
        out_bary[q, 2] = bw
        out_point[q, 0] = bx
        out_point[q, 1] = by
        out_point[q, 2] = bz
        out_dsq[q] = best
    return out_face, out_bary, out_point, out_dsq


@njit(cache=True)
def _nearest_vertex_scan(verts, queries):
    nq = queries.shape[0]
    nv = verts.shape[0]
    out = np.empty(nq, np.int64)
    out_dsq = np.empty(nq, np.float64)
    for q in range(nq):
        px = queries[q, 0]
        py = queries[q, 1]
        pz = queries[q, 2]
        best = np.inf
        besti = -1
        for i in range(nv):
            dx = verts[i, 0] - px
            dy = verts[i, 1] - py
            dz = verts[i, 2] - pz
            dsq = dx * dx + dy * dy + dz * dz
            if dsq < best:
                best = dsq
                besti = i
        out[q] = besti
        out_dsq[q] = best
    return out, out_dsq


# ---------------------------------------------------------------------------
# vectorized kernels (numpy path)
# ---------------------------------------------------------------------------


def _dot_rows(x, y):
    return np.einsum("ij,ij->i", x, y)


def closest_on_triangles_numpy(p, a, b, c):
    """Closest points on triangles (a,b,c) to points p, all (n,3).

    Returns (dsq, bary, point). Row i pairs p[i] with triangle i.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot_rows(ab, ap)
    d2 = _dot_rows(ac, ap)
    bp = p - b
    d3 = _dot_rows(ab, bp)
    d4 = _dot_rows(ac, bp)
    cp = p - c
    d5 = _dot_rows(ab, cp)
    d6 = _dot_rows(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n = p.shape[0]
    bary = np.zeros((n, 3))
    done = np.zeros(n, bool)

    def settle(mask, u, v, w):
        m = mask & ~done
        bary[m, 0] = u[m] if isinstance(u, np.ndarray) else u
        bary[m, 1] = v[m] if isinstance(v, np.ndarray) else v
        bary[m, 2] = w[m] if isinstance(w, np.ndarray) else w
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        settle((d1 <= 0.0) & (d2 <= 0.0), 1.0, 0.0, 0.0)
        settle((d3 >= 0.0) & (d4 <= d3), 0.0, 1.0, 0.0)
        t_ab = d1 / (d1 - d3)
        settle((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0) & (d1 - d3 > 0.0),
               1.0 - t_ab, t_ab, 0.0)
        settle((d6 >= 0.0) & (d5 <= d6), 0.0, 0.0, 1.0)
        t_ac = d2 / (d2 - d6)
        settle((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0) & (d2 - d6 > 0.0),
               1.0 - t_ac, 0.0, t_ac)
        e1 = d4 - d3
        e2 = d5 - d6
        t_bc = e1 / (e1 + e2)
        settle((va <= 0.0) & (e1 >= 0.0) & (e2 >= 0.0) & (e1 + e2 > 0.0),
               0.0, 1.0 - t_bc, t_bc)
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        settle(denom > 0.0, 1.0 - v_in - w_in, v_in, w_in)

    if not done.all():
        # degenerate triangles: best of the three edges
        for i in np.flatnonzero(~done):
            dsq, u, v, w, qx, qy, qz = _closest_on_triangle(
                p[i, 0], p[i, 1], p[i, 2],
                a[i, 0], a[i, 1], a[i, 2],
                b[i, 0], b[i, 1], b[i, 2],
                c[i, 0], c[i, 1], c[i, 2],
            )
            bary[i] = (u, v, w)

    point = a + bary[:, 1:2] * ab + bary[:, 2:3] * ac
    diff = p - point
    dsq = _dot_rows(diff, diff)
    return dsq, bary, point


def _surface_query_brute_numpy(ta, tb, tc, queries):
    nq = queries.shape[0]
    nf = ta.shape[0]
    out_face = np.empty(nq, np.int64)
    out_bary = np.empty((nq, 3))
    out_point = np.empty((nq, 3))
    out_dsq = np.empty(nq)
    for q in range(nq):
        p = np.broadcast_to(queries[q], (nf, 3))
        dsq, bary, point = closest_on_triangles_numpy(p, ta, tb, tc)
        f = int(np.argmin(dsq))  # first minimum = lowest face id
        out_face[q] = f
        out_bary[q] = bary[f]
        out_point[q] = point[f]
        out_dsq[q] = dsq[f]
    return out_face, out_bary, out_point, out_dsq


def _surface_query_culled_numpy(index, queries):
    """Exact nearest-surface query for the numpy backend.

    A kd-tree over face centroids prefilters candidates: every face whose
    surface could beat the proven upper bound (squared distance to the
    nearest mesh vertex) has its centroid within upper-bound-distance plus
    the largest centroid-to-corner radius, so nothing reachable is dropped.
    Candidate ids are sorted ascending per query and ties keep the first,
    matching the brute-force scan bit-for-bit.
    """
    ta, tb, tc = index.tri_a, index.tri_b, index.tri_c
    vertex_tree, centroid_tree, max_radius = index.numpy_lookup()
    nq = queries.shape[0]
    out_face = np.empty(nq, np.int64)
    out_bary = np.empty((nq, 3))
    out_point = np.empty((nq, 3))
    out_dsq = np.empty(nq)
    ub_dist, _ = vertex_tree.query(queries)
    candidate_lists = centroid_tree.query_ball_point(
        queries, ub_dist + max_radius + 1e-12)
    counts = np.array([len(c) for c in candidate_lists])
    f_idx = np.concatenate([np.sort(c) for c in candidate_lists]) \
        if counts.sum() else np.zeros(0, np.int64)
    q_idx = np.repeat(np.arange(nq), counts)
    dsq, bary, point = closest_on_triangles_numpy(
        queries[q_idx], ta[f_idx], tb[f_idx], tc[f_idx])
    boundaries = np.concatenate([[0], np.cumsum(counts)])
    for q in range(nq):
        lo, hi = boundaries[q], boundaries[q + 1]
        k = lo + int(np.argmin(dsq[lo:hi]))
        out_face[q] = f_idx[k]
        out_bary[q] = bary[k]
        out_point[q] = point[k]
        out_dsq[q] = dsq[k]
    return out_face, out_bary, out_point, out_dsq


def _nearest_vertex_scan_numpy(verts, queries):
    nq = queries.shape[0]
    out = np.empty(nq, np.int64)
    out_dsq = np.empty(nq)
    for q in range(nq):
        diff = verts - queries[q]
        dsq = _dot_rows(diff, diff)
        i = int(np.argmin(dsq))  # first minimum = lowest vertex id
        out[q] = i
        out_dsq[q] = dsq[i]
    return out, out_dsq


# ---------------------------------------------------------------------------
# BVH construction (shared; queries differ per backend)
# ---------------------------------------------------------------------------


def build_bvh_arrays(face_bb_min, face_bb_max, centroids, leaf_size=_LEAF_SIZE):
    """Median-split BVH over triangle bounding boxes, flattened to arrays.

    Returns (node_bb_min, node_bb_max, left, right, start, count, tri_order).
    Leaves have left == -1 and reference tri_order[start:start+count].
    """
    nf = face_bb_min.shape[0]
    order = np.arange(nf, dtype=np.int64)
    bb_min_l, bb_max_l = [], []
    left_l, right_l, start_l, count_l = [], [], [], []

    def new_node():
        bb_min_l.append(None)
        bb_max_l.append(None)
        left_l.append(-1)
        right_l.append(-1)
        start_l.append(0)
        count_l.append(0)
        return len(left_l) - 1

    root = new_node()
    stack = [(root, 0, nf)]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        bb_min_l[node] = face_bb_min[idx].min(axis=0)
        bb_max_l[node] = face_bb_max[idx].max(axis=0)
        n = hi - lo
        if n <= leaf_size:
            start_l[node] = lo
            count_l[node] = n
            continue
        cent = centroids[idx]
        spread = cent.max(axis=0) - cent.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] <= 0.0:
            start_l[node] = lo
            count_l[node] = n
            continue
        mid = n // 2
        part = np.argpartition(cent[:, axis], mid)
        order[lo:hi] = idx[part]
        lchild = new_node()
        rchild = new_node()
        left_l[node] = lchild
        right_l[node] = rchild
        stack.append((lchild, lo, lo + mid))
        stack.append((rchild, lo + mid, hi))

    return (
        np.asarray(bb_min_l, dtype=np.float64),
        np.asarray(bb_max_l, dtype=np.float64),
        np.asarray(left_l, dtype=np.int64),
        np.asarray(right_l, dtype=np.int64),
        np.asarray(start_l, dtype=np.int64),
        np.asarray(count_l, dtype=np.int64),
        order,
    )


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def closest_point_on_triangle_kernel(p, a, b, c):
    """Single-point closest point on one triangle: (dsq, bary, point)."""
    dsq, u, v, w, x, y, z = _closest_on_triangle(
        float(p[0]), float(p[1]), float(p[2]),
        float(a[0]), float(a[1]), float(a[2]),
        float(b[0]), float(b[1]), float(b[2]),
        float(c[0]), float(c[1]), float(c[2]),
    )
    return dsq, np.array([u, v, w]), np.array([x, y, z])


if NUMBA_ENABLED:
    def surface_query_indexed(index, queries):
        return _surface_query_bvh(
            index.node_bb_min, index.node_bb_max, index.node_left,
            index.node_right, index.node_start, index.node_count,
            index.tri_order, index.tri_a, index.tri_b, index.tri_c, queries,
        )

    def surface_query_brute(index, queries):
        return _surface_query_brute(index.tri_a, index.tri_b, index.tri_c, queries)

    def nearest_vertex_scan(verts, queries):
        return _nearest_vertex_scan(verts, queries)
else:
    def surface_query_indexed(index, queries):
        return _surface_query_culled_numpy(index, queries)

    def surface_query_brute(index, queries):
        return _surface_query_brute_numpy(index.tri_a, index.tri_b, index.tri_c, queries)

    def nearest_vertex_scan(verts, queries):
        return _nearest_vertex_scan_numpy(verts, queries)
