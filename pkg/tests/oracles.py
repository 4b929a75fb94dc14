"""Independent reference implementations used by several test modules."""

from __future__ import annotations

import math

import numpy as np

from solmplan.search import _yaw_step, neighbor_offsets


def path_enumeration_cost(grid, blocked, s, g, rho, l_yaw) -> float:
    """Cheapest simple path from ``s`` to ``g`` by depth-first enumeration.

    Branches whose cost plus the straight-line distance to the goal already
    reaches the best complete path are cut; every edge costs at least its
    planar length, so the cut never discards a cheaper path.
    """
    a, b, c = grid.dims
    q = grid.filled()
    rx, ry, rt = grid.resolution
    best = [math.inf]
    seen = {s}

    def lower_bound(u):
        return math.hypot((u[0] - g[0]) * rx, (u[1] - g[1]) * ry)

    def dfs(u, cost):
        if u == g:
            best[0] = min(best[0], cost)
            return
        if cost + lower_bound(u) >= best[0] - 1e-12:
            return
        i, j, k = u
        for di, dj, dk in neighbor_offsets(c):
            v = (i + di, j + dj, (k + dk) % c)
            if not (0 <= v[0] < a and 0 <= v[1] < b) or blocked[v[2], v[1], v[0]] or v in seen:
                continue
            length = math.sqrt((di * rx) ** 2 + (dj * ry) ** 2 + (l_yaw * _yaw_step(dk, c) * rt) ** 2)
            seen.add(v)
            dfs(v, cost + length * (1 + rho * 0.5 * (q[k, j, i] + q[v[2], v[1], v[0]])))
            seen.discard(v)

    dfs(s, 0.0)
    return best[0]


def point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> float:
    """Euclidean distance from a point to a closed triangle (Ericson's region test)."""
    a, b, c = tri
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(p - a))
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return float(np.linalg.norm(p - (a + d1 / (d1 - d3) * ab)))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return float(np.linalg.norm(p - (a + d2 / (d2 - d6) * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + w * (c - b))))
    denom = 1.0 / (va + vb + vc)
    return float(np.linalg.norm(p - (a + ab * vb * denom + ac * vc * denom)))


def convex_overlap(p: np.ndarray, q: np.ndarray, eps: float = 1e-12) -> bool:
    """Positive-area overlap of two convex polygons by the separating-axis test."""
    axes = []
    for poly in (p, q):
        for i in range(len(poly)):
            e = poly[(i + 1) % len(poly)] - poly[i]
            axes.append(np.array([-e[1], e[0]]) / np.hypot(*e))
    for ax in axes:
        pp, qq = p @ ax, q @ ax
        if min(pp.max(), qq.max()) - max(pp.min(), qq.min()) <= eps:
            return False
    return True


def box_footprint(center, size, yaw) -> np.ndarray:
    hx, hy = size[0] / 2, size[1] / 2
    local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    c, s = math.cos(yaw), math.sin(yaw)
    return local @ np.array([[c, -s], [s, c]]).T + np.asarray(center[:2])


def dense_phi_eigs(A: np.ndarray, b: np.ndarray, xi: float) -> np.ndarray:
    """All eigenvalues of the m x m matrix xi^2 A A^T + b b^T, descending."""
    phi = xi ** 2 * A @ A.T + np.outer(b, b)
    return np.linalg.eigvalsh(phi)[::-1]


def random_system(rng: np.random.Generator, m: int, n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Well-conditioned full-rank system with a nonzero least-squares residual."""
    A = rng.normal(size=(m, n)) * rng.uniform(0.5, 2.0, n)
    b = A @ rng.normal(size=n) + 0.1 * rng.normal(size=m)
    return A, b


def unit(rng: np.random.Generator, size: int) -> np.ndarray:
    v = rng.normal(size=size)
    return v / np.linalg.norm(v)


def perturbed_shift(A: np.ndarray, b: np.ndarray, dK: np.ndarray, dt: np.ndarray) -> float:
    """|x_hat - x| after h -> (I + dK) h + dt, re-solved from scratch."""
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    x_hat, *_ = np.linalg.lstsq(A + dK @ A, b - dK @ b - dt, rcond=None)
    return float(np.linalg.norm(x_hat - x))


def directional_loss(A: np.ndarray, b: np.ndarray, xi: float, sigma1: float, alpha: np.ndarray,
                     w1: float, w2: float) -> float:
    """Loss for one perturbation direction: sqrt(w1 * sum_j dk_j^T Phi dk_j + w2) / sigma1."""
    m = len(b)
    dK = alpha.reshape(m, m)
    phi = xi ** 2 * A @ A.T + np.outer(b, b)
    return float(np.sqrt(w1 * np.trace(dK @ phi @ dK.T) + w2) / sigma1)
