"""Bounding-volume hierarchy over a triangle mesh with batched nearest-hit ray queries.

Traversal is breadth-first over (ray, node) pairs so whole scans are processed
with array operations instead of per-ray Python loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import TriangleMesh

LEAF_SIZE = 4
T_MIN = 1e-9
_BOX_PAD = 1e-9


@dataclass(frozen=True)
class Hit:
    distance: float
    triangle: int


def intersect_pairs(o, d, v0, e1, e2):
    """Moller-Trumbore for aligned arrays of rays and triangles; returns t (inf on miss)."""
    px = d[:, 1] * e2[:, 2] - d[:, 2] * e2[:, 1]
    py = d[:, 2] * e2[:, 0] - d[:, 0] * e2[:, 2]
    pz = d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]
    det = e1[:, 0] * px + e1[:, 1] * py + e1[:, 2] * pz
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tx, ty, tz = o[:, 0] - v0[:, 0], o[:, 1] - v0[:, 1], o[:, 2] - v0[:, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    qx = ty * e1[:, 2] - tz * e1[:, 1]
    qy = tz * e1[:, 0] - tx * e1[:, 2]
    qz = tx * e1[:, 1] - ty * e1[:, 0]
    v = (d[:, 0] * qx + d[:, 1] * qy + d[:, 2] * qz) * inv
    t = (e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > T_MIN)
    return np.where(hit, t, np.inf)


def _normalize(directions: np.ndarray) -> np.ndarray:
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    n = np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("ray direction must be non-zero")
    return d / n


def _reduce_nearest(ray_ids, t, tri_ids, best_t, best_tri) -> None:
    """Fold candidate hits into the per-ray best (ties go to the lower triangle id)."""
    m = np.isfinite(t)
    if not m.any():
        return
    ray_ids, t, tri_ids = ray_ids[m], t[m], tri_ids[m]
    order = np.lexsort((tri_ids, t, ray_ids))
    ray_ids, t, tri_ids = ray_ids[order], t[order], tri_ids[order]
    first = np.ones(len(ray_ids), dtype=bool)
    first[1:] = ray_ids[1:] != ray_ids[:-1]
    r, tt, tr = ray_ids[first], t[first], tri_ids[first]
    better = (tt < best_t[r]) | ((tt == best_t[r]) & (tr < best_tri[r]))
    best_t[r[better]] = tt[better]
    best_tri[r[better]] = tr[better]


class BVH:
    """Median-split BVH; immutable after construction."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        self.mesh = mesh
        corners = mesh.corners
        self.v0 = np.ascontiguousarray(corners[:, 0])
        self.e1 = np.ascontiguousarray(corners[:, 1] - corners[:, 0])
        self.e2 = np.ascontiguousarray(corners[:, 2] - corners[:, 0])
        tri_lo = corners.min(axis=1)
        tri_hi = corners.max(axis=1)
        centroids = corners.mean(axis=1)

        lo, hi, left, right, start, count = [], [], [], [], [], []
        order = []
        # explicit stack: (triangle index array, parent slot, is_right)
        stack = [(np.arange(len(corners)), -1, False)]
        while stack:
            idx, parent, is_right = stack.pop()
            node = len(lo)
            lo.append(tri_lo[idx].min(axis=0) - _BOX_PAD)
            hi.append(tri_hi[idx].max(axis=0) + _BOX_PAD)
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            if parent >= 0:
                (right if is_right else left)[parent] = node
            if len(idx) <= leaf_size:
                start[node] = len(order)
                count[node] = len(idx)
                order.extend(idx.tolist())
                continue
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            srt = idx[np.argsort(c[:, axis], kind="stable")]
            mid = len(srt) // 2
            stack.append((srt[mid:], node, True))
            stack.append((srt[:mid], node, False))

        self.node_lo = np.array(lo)
        self.node_hi = np.array(hi)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.order = np.array(order, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def intersect(self, origins: np.ndarray, directions: np.ndarray, max_range: float = np.inf):
        """Nearest hit per ray: (distance, triangle id) with inf / -1 on miss."""
        o = np.atleast_2d(np.asarray(origins, dtype=float))
        d = _normalize(directions)
        if len(o) == 1 and len(d) > 1:
            o = np.broadcast_to(o, d.shape)
        n = len(d)
        best_t = np.full(n, np.inf)
        best_tri = np.full(n, -1, dtype=np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / d
        ray = np.arange(n)
        node = np.zeros(n, dtype=np.int64)
        limit = np.full(n, float(max_range))
        while len(ray):
            # slab test against the current bound for each ray
            lo = self.node_lo[node]
            hi = self.node_hi[node]
            oo, ii = o[ray], inv_d[ray]
            with np.errstate(invalid="ignore"):
                t1 = (lo - oo) * ii
                t2 = (hi - oo) * ii
            # 0 * inf -> nan when origin lies on a slab plane with a parallel ray
            t1 = np.where(np.isnan(t1), -np.inf, t1)
            t2 = np.where(np.isnan(t2), np.inf, t2)
            tnear = np.minimum(t1, t2).max(axis=1)
            tfar = np.maximum(t1, t2).min(axis=1)
            bound = np.minimum(best_t[ray], limit[ray])
            keep = (tfar >= np.maximum(tnear, 0.0)) & (tnear <= bound)
            ray, node = ray[keep], node[keep]
            if not len(ray):
                break
            leaf = self.left[node] < 0
            if leaf.any():
                lr, ln = ray[leaf], node[leaf]
                cnt = self.count[ln]
                rr = np.repeat(lr, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                tri = self.order[np.repeat(self.start[ln], cnt) + offs]
                t = intersect_pairs(o[rr], d[rr], self.v0[tri], self.e1[tri], self.e2[tri])
                _reduce_nearest(rr, t, tri, best_t, best_tri)
            inner = ~leaf
            ray = np.concatenate([ray[inner], ray[inner]])
            node = np.concatenate([self.left[node[inner]], self.right[node[inner]]])
        miss = best_t > max_range
        best_t[miss] = np.inf
        best_tri[miss] = -1
        return best_t, best_tri


def brute_force_intersect(mesh: TriangleMesh, origins, directions, max_range: float = np.inf):
    """Reference nearest hit testing every ray against every triangle."""
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = _normalize(directions)
    if len(o) == 1 and len(d) > 1:
        o = np.broadcast_to(o, d.shape)
    corners = mesh.corners
    v0, e1, e2 = corners[:, 0], corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]
    nt = len(corners)
    best_t = np.full(len(d), np.inf)
    best_tri = np.full(len(d), -1, dtype=np.int64)
    chunk = max(1, 400_000 // max(nt, 1))
    for s in range(0, len(d), chunk):
        rr = np.repeat(np.arange(s, min(s + chunk, len(d))), nt)
        tri = np.tile(np.arange(nt), len(rr) // nt)
        t = intersect_pairs(o[rr], d[rr], v0[tri], e1[tri], e2[tri])
        _reduce_nearest(rr, t, tri, best_t, best_tri)
    miss = best_t > max_range
    best_t[miss] = np.inf
    best_tri[miss] = -1
    return best_t, best_tri


def cast_ray(target, origin, direction, max_range: float = np.inf) -> Hit | None:
    """Nearest positive intersection of a single ray, or None."""
    bvh = target if isinstance(target, BVH) else BVH(target)
    t, tri = bvh.intersect(np.asarray(origin, dtype=float)[None], np.asarray(direction, dtype=float)[None], max_range)
    if not np.isfinite(t[0]):
        return None
    return Hit(float(t[0]), int(tri[0]))
