"""Signed Euclidean distance field over an occupancy grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .scene import OccupancyGrid2D


@dataclass(frozen=True)
class SdfField:
    origin: tuple[float, float]
    resolution: float
    width: int
    height: int
    distance: np.ndarray  # (height, width), meters; > 0 free, <= 0 occupied
    cap: float

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return np.array([self.origin[0] + (ix + 0.5) * self.resolution,
                         self.origin[1] + (iy + 0.5) * self.resolution])

    def sample(self, xy) -> tuple[float, np.ndarray]:
        d, g = sample_sdf_many(self, np.asarray(xy, dtype=float).reshape(1, 2))
        return float(d[0]), g[0]


def build_sdf(occ: OccupancyGrid2D, cap: float | None = None) -> SdfField:
    """Distances between cell centres: to the nearest occupied cell for free
    cells, and minus the distance to the nearest free cell for occupied ones."""
    occupied = np.asarray(occ.occupied, dtype=bool)
    h, w = occupied.shape
    if cap is None:
        cap = math.hypot(w, h) * occ.resolution
    dist = np.full(occupied.shape, cap, dtype=float)
    if occupied.any() and not occupied.all():
        d_free = ndimage.distance_transform_edt(~occupied, sampling=occ.resolution)
        d_occ = ndimage.distance_transform_edt(occupied, sampling=occ.resolution)
        dist = np.minimum(np.where(occupied, -d_occ, d_free), cap)
        dist = np.maximum(dist, -cap)
    elif occupied.all():
        dist[:] = -cap
    return SdfField(tuple(occ.origin), float(occ.resolution), w, h, dist, float(cap))


def brute_force_sdf(occ: OccupancyGrid2D, cap: float | None = None) -> np.ndarray:
    """O(n^2) reference for :func:`build_sdf`."""
    occupied = np.asarray(occ.occupied, dtype=bool)
    h, w = occupied.shape
    if cap is None:
        cap = math.hypot(w, h) * occ.resolution
    iy, ix = np.mgrid[0:h, 0:w]
    cells = np.column_stack([ix.ravel(), iy.ravel()]).astype(float) * occ.resolution
    occ_flat = occupied.ravel()
    out = np.full(h * w, cap)
    for target, sign in ((occ_flat, 1.0), (~occ_flat, -1.0)):
        src = ~target
        if not target.any() or not src.any():
            continue
        diff = cells[src][:, None, :] - cells[target][None, :, :]
        d = np.sqrt((diff ** 2).sum(-1)).min(axis=1)
        out[src] = sign * np.minimum(d, cap)
    if occupied.all():
        out[:] = -cap
    return out.reshape(h, w)


NODE_TOL = 1e-9  # offsets (in cells) treated as sitting on a node


def axis_weights(u: np.ndarray, n: int):
    """Linear-interpolation stencil along one axis in cell-centre units.

    Returns (i0, i1, t, da, db, ds): the value is lerp(V[i0], V[i1], t) and the
    derivative is ds * (V[db] - V[da]).  Between nodes that is the slope of
    the segment; exactly on a node it is the central difference of the
    neighbours (border neighbours clamp), and on clamped queries ds = 0.
    """
    if n == 1:
        z = np.zeros(u.shape, dtype=np.int64)
        return z, z, np.zeros(u.shape), z, z, np.zeros(u.shape)
    inside = (u >= 0.0) & (u <= n - 1)
    uc = np.clip(u, 0.0, n - 1)
    i0 = np.minimum(np.floor(uc).astype(np.int64), n - 2)
    t = uc - i0
    da, db = i0.copy(), i0 + 1
    ds = inside.astype(float)
    node = inside & ((t < NODE_TOL) | (t > 1.0 - NODE_TOL))
    if node.any():
        k = np.where(t > 0.5, i0 + 1, i0)[node]
        da[node] = np.maximum(k - 1, 0)
        db[node] = np.minimum(k + 1, n - 1)
        ds[node] = 0.5
    return i0, i0 + 1, t, da, db, ds


def sample_sdf_many(field: SdfField, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear value and analytic gradient at (N, 2) points; clamped outside."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    u = (xy[:, 0] - field.origin[0]) / field.resolution - 0.5
    v = (xy[:, 1] - field.origin[1]) / field.resolution - 0.5
    x0, x1, tx, xa, xb, xs = axis_weights(u, field.width)
    y0, y1, ty, ya, yb, ys = axis_weights(v, field.height)
    D = field.distance

    def lerp_x(rows):
        return D[rows, x0] + tx * (D[rows, x1] - D[rows, x0])

    def slope_x(rows):
        return xs * (D[rows, xb] - D[rows, xa])

    a, b = lerp_x(y0), lerp_x(y1)
    val = a + ty * (b - a)
    ddx = ((1 - ty) * slope_x(y0) + ty * slope_x(y1)) / field.resolution
    ddy = ys * (lerp_x(yb) - lerp_x(ya)) / field.resolution
    return val, np.column_stack([ddx, ddy])


def sample_sdf(field: SdfField, xy) -> tuple[float, np.ndarray]:
    return field.sample(xy)
