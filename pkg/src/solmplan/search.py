"""Uniform-cost search over the SOLM grid.

Edge cost between neighbouring cells u, v is::

    len(u, v) * (1 + rho_q * (q_u + q_v) / 2)
    len(u, v) = sqrt(dx^2 + dy^2 + (L_yaw * dtheta)^2)

with 8-connectivity in xy and {-1, 0, +1} yaw steps that wrap around.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PlanarPose, wrap_angle
from .sdf import SdfField, sample_sdf_many
from .solm import SolmGrid

Cell = tuple[int, int, int]


class SearchError(ValueError):
    pass


class NoPathError(SearchError):
    pass


@dataclass(frozen=True)
class SearchWeights:
    rho_q: float = 5.0
    l_yaw: float = 0.5
    r_safe: float = 0.3

    def __post_init__(self) -> None:
        if self.rho_q < 0 or self.l_yaw < 0 or self.r_safe < 0:
            raise SearchError("search weights must be non-negative")


@dataclass
class GridPath:
    cells: list[Cell]
    poses: np.ndarray = field(repr=False)  # (n, 3) cell-centre poses
    cost: float

    def __len__(self) -> int:
        return len(self.cells)


def cell_of(grid: SolmGrid, pose: PlanarPose) -> Cell:
    """Cell containing the pose; yaw snaps to the nearest channel."""
    a, b, c = grid.dims
    i = math.floor((pose.x - grid.origin[0]) / grid.resolution[0])
    j = math.floor((pose.y - grid.origin[1]) / grid.resolution[1])
    if not (0 <= i < a and 0 <= j < b):
        raise SearchError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is outside the grid")
    k = int(round(wrap_angle(pose.theta - grid.origin[2]) / grid.resolution[2])) % c
    return i, j, k


def cell_pose(grid: SolmGrid, cell: Cell) -> np.ndarray:
    i, j, k = cell
    return np.array([grid.origin[0] + (i + 0.5) * grid.resolution[0],
                     grid.origin[1] + (j + 0.5) * grid.resolution[1],
                     wrap_angle(grid.origin[2] + k * grid.resolution[2])])


def neighbor_offsets(c: int) -> list[tuple[int, int, int]]:
    dks = [0] if c == 1 else sorted({-1 % c, 0, 1 % c})
    out = []
    for dk in dks:
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                if (di, dj, dk) != (0, 0, 0):
                    out.append((di, dj, dk))
    return out


def blocked_mask(grid: SolmGrid, sdf: SdfField | None, r_safe: float) -> np.ndarray:
    """(c, b, a) cells the search may not enter."""
    blocked = grid.obstacle.copy()
    if sdf is not None:
        a, b, c = grid.dims
        ii, jj = np.meshgrid(np.arange(a), np.arange(b))
        xy = np.column_stack([grid.origin[0] + (ii.ravel() + 0.5) * grid.resolution[0],
                              grid.origin[1] + (jj.ravel() + 0.5) * grid.resolution[1]])
        d, _ = sample_sdf_many(sdf, xy)
        blocked |= (d < r_safe).reshape(1, b, a)
    return blocked


def _yaw_step(dk: int, c: int) -> int:
    """Signed channel step for an offset taken modulo c."""
    return dk - c if dk > c // 2 else dk


def search(
    grid: SolmGrid,
    sdf: SdfField | None,
    start: PlanarPose,
    goal: PlanarPose,
    weights: SearchWeights = SearchWeights(),
) -> GridPath:
    a, b, c = grid.dims
    q = grid.filled()
    blocked = blocked_mask(grid, sdf, weights.r_safe)
    s, g = cell_of(grid, start), cell_of(grid, goal)
    for name, cell in (("start", s), ("goal", g)):
        if blocked[cell[2], cell[1], cell[0]]:
            raise SearchError(f"{name} cell {cell} is in an obstacle or closer than r_safe")

    rx, ry, rt = grid.resolution
    steps = []
    for di, dj, dk in neighbor_offsets(c):
        dth = _yaw_step(dk, c) * rt
        steps.append((di, dj, dk, math.sqrt((di * rx) ** 2 + (dj * ry) ** 2 + (weights.l_yaw * dth) ** 2)))

    dist: dict[Cell, float] = {s: 0.0}
    pred: dict[Cell, Cell] = {}
    done: set[Cell] = set()
    heap = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == g:
            break
        i, j, k = u
        qu = q[k, j, i]
        for di, dj, dk, length in steps:
            ni, nj = i + di, j + dj
            if not (0 <= ni < a and 0 <= nj < b):
                continue
            nk = (k + dk) % c
            if blocked[nk, nj, ni]:
                continue
            v = (ni, nj, nk)
            if v in done:
                continue
            nd = d + length * (1.0 + weights.rho_q * 0.5 * (qu + q[nk, nj, ni]))
            old = dist.get(v)
            if old is None or nd < old:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == old and u < pred[v]:
                pred[v] = u
    if g not in done:
        raise NoPathError(f"no path from {s} to {g}")

    cells = [g]
    while cells[-1] != s:
        cells.append(pred[cells[-1]])
    cells.reverse()
    poses = np.array([cell_pose(grid, cell) for cell in cells])
    return GridPath(cells, poses, dist[g])


def path_cost(grid: SolmGrid, cells: list[Cell], weights: SearchWeights = SearchWeights()) -> float:
    """Cost of an explicit cell sequence under the search's edge cost."""
    q = grid.filled()
    _, _, c = grid.dims
    rx, ry, rt = grid.resolution
    total = 0.0
    for (i, j, k), (ni, nj, nk) in zip(cells[:-1], cells[1:]):
        dth = _yaw_step((nk - k) % c, c) * rt
        length = math.sqrt(((ni - i) * rx) ** 2 + ((nj - j) * ry) ** 2 + (weights.l_yaw * dth) ** 2)
        total += length * (1.0 + weights.rho_q * 0.5 * (q[k, j, i] + q[nk, nj, ni]))
    return total
