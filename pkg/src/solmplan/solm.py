"""Static Observation Loss Map: a loss grid over (x, y, theta).

Values are stored as float32 in an array of shape (c, b, a) (x fastest, yaw
outermost).  Obstacle cells hold NaN and cells whose observations are
degenerate hold +inf; both are replaced by a finite surrogate when the map is
interpolated.

Binary layout (little endian)::

    offset  size  field
    0       4     magic b"SOLM"
    4       4     u32 version (1)
    8       4     u32 rank (3)
    12      24    f64 origin x, y, theta
    36      24    f64 resolution x, y, theta
    60      12    u32 dims a, b, c
    72      32    SHA-256 digest of the build configuration
    104     4abc  f32 values
    ...     ...   obstacle bitmask, one bit per cell, LSB first
"""

from __future__ import annotations

import hashlib
import json
import math
import multiprocessing as mp
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import evaluate_pose
from .geometry import PlanarPose
from .lidar import LidarModel, scene_bvh
from .metric import MetricConfig
from .observation import ObservationParams
from .scene import SceneModel
from .sdf import NODE_TOL, SdfField, axis_weights, build_sdf, sample_sdf_many
from .seeding import mix_seed

MAGIC = b"SOLM"
VERSION = 1
RANK = 3
_HEADER = struct.Struct("<4sII3d3d3I32s")
HEADER_SIZE = _HEADER.size
SURROGATE_FACTOR = 10.0


class SolmError(ValueError):
    pass


class SolmFormatError(SolmError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float]
    resolution: tuple[float, float]
    dims: tuple[int, int, int]  # a (x), b (y), c (yaw)

    def __post_init__(self) -> None:
        if min(self.dims) < 1:
            raise SolmError(f"grid dims must be >= 1, got {self.dims}")
        if min(self.resolution) <= 0:
            raise SolmError("grid resolution must be positive")

    @classmethod
    def covering(cls, bounds, resolution: float = 0.25, yaw_channels: int = 8) -> "GridSpec":
        x0, y0, x1, y1 = bounds
        a = max(1, int(math.ceil((x1 - x0) / resolution - 1e-9)))
        b = max(1, int(math.ceil((y1 - y0) / resolution - 1e-9)))
        return cls((float(x0), float(y0)), (float(resolution), float(resolution)), (a, b, int(yaw_channels)))

    @property
    def yaw_resolution(self) -> float:
        return 2.0 * math.pi / self.dims[2]

    def cell_pose(self, i: int, j: int, k: int) -> PlanarPose:
        return PlanarPose(self.origin[0] + (i + 0.5) * self.resolution[0],
                          self.origin[1] + (j + 0.5) * self.resolution[1],
                          -math.pi + k * self.yaw_resolution)

    def flat_index(self, i: int, j: int, k: int) -> int:
        a, b, _ = self.dims
        return (k * b + j) * a + i

    def unflatten(self, idx: int) -> tuple[int, int, int]:
        a, b, _ = self.dims
        k, rem = divmod(idx, a * b)
        j, i = divmod(rem, a)
        return i, j, k


@dataclass
class SolmGrid:
    origin: tuple[float, float, float]
    resolution: tuple[float, float, float]
    values: np.ndarray  # (c, b, a) float32
    obstacle: np.ndarray  # (c, b, a) bool
    digest: bytes = b"\0" * 32
    _filled: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype="<f4")
        self.obstacle = np.ascontiguousarray(self.obstacle, dtype=bool)
        if self.values.ndim != 3 or self.values.shape != self.obstacle.shape:
            raise SolmError("values and obstacle mask must share a (c, b, a) shape")
        c = self.values.shape[0]
        if abs(c * self.resolution[2] - 2.0 * math.pi) > 1e-9:
            raise SolmError(f"yaw channels must cover 2*pi, got {c} x {self.resolution[2]}")

    @property
    def dims(self) -> tuple[int, int, int]:
        c, b, a = self.values.shape
        return a, b, c

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.origin[:2], self.resolution[:2], self.dims)

    @property
    def degenerate(self) -> np.ndarray:
        return np.isposinf(self.values)

    def finite_range(self) -> tuple[float, float] | None:
        v = self.values[np.isfinite(self.values)]
        if v.size == 0:
            return None
        return float(v.min()), float(v.max())

    def surrogate(self) -> float:
        r = self.finite_range()
        return SURROGATE_FACTOR * (r[1] if r and r[1] > 0 else 1.0)

    def filled(self) -> np.ndarray:
        """float64 values with every sentinel replaced by the surrogate."""
        if self._filled is None:
            v = self.values.astype(float)
            v[~np.isfinite(v)] = self.surrogate()
            self._filled = v
        return self._filled

    def __eq__(self, other) -> bool:
        if not isinstance(other, SolmGrid):
            return NotImplemented
        return (self.origin == other.origin and self.resolution == other.resolution
                and self.digest == other.digest and self.values.shape == other.values.shape
                and np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
                and np.array_equal(self.obstacle, other.obstacle))


# ---------------------------------------------------------------------------
# persistence


def to_bytes(grid: SolmGrid) -> bytes:
    a, b, c = grid.dims
    head = _HEADER.pack(MAGIC, VERSION, RANK, *grid.origin, *grid.resolution, a, b, c, grid.digest)
    mask = np.packbits(grid.obstacle.ravel(), bitorder="little")
    return head + grid.values.astype("<f4").tobytes() + mask.tobytes()


def from_bytes(data: bytes) -> SolmGrid:
    if len(data) < HEADER_SIZE:
        raise SolmFormatError(len(data), f"truncated header ({len(data)} of {HEADER_SIZE} bytes)")
    magic, version, rank, ox, oy, ot, rx, ry, rt, a, b, c, digest = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SolmFormatError(0, f"bad magic {magic!r}")
    if version != VERSION:
        raise SolmFormatError(4, f"unsupported version {version}")
    if rank != RANK:
        raise SolmFormatError(8, f"unsupported rank {rank}")
    if min(a, b, c) < 1:
        raise SolmFormatError(60, f"invalid dims {(a, b, c)}")
    n = a * b * c
    n_mask = (n + 7) // 8
    expect = HEADER_SIZE + 4 * n + n_mask
    if len(data) < expect:
        raise SolmFormatError(len(data), f"truncated body, expected {expect} bytes")
    if len(data) > expect:
        raise SolmFormatError(expect, f"{len(data) - expect} trailing bytes")
    values = np.frombuffer(data, dtype="<f4", count=n, offset=HEADER_SIZE).reshape(c, b, a).copy()
    bits = np.frombuffer(data, dtype=np.uint8, count=n_mask, offset=HEADER_SIZE + 4 * n)
    obstacle = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(c, b, a)
    try:
        return SolmGrid((ox, oy, ot), (rx, ry, rt), values, obstacle, digest)
    except SolmError as exc:
        raise SolmFormatError(36, str(exc)) from exc


def save(grid: SolmGrid, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(grid))


def load(path: str | Path) -> SolmGrid:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"SOLM file not found: {path}")
    return from_bytes(path.read_bytes())


def export_image(grid: SolmGrid, channel: int, path: str | Path) -> None:
    """Binary PGM of one yaw channel; brighter is lower loss, obstacles are black."""
    a, b, c = grid.dims
    if not 0 <= channel < c:
        raise SolmError(f"channel {channel} out of range for {c} channels")
    v = grid.values[channel].astype(float)
    px = np.zeros(v.shape, dtype=np.uint8)
    fin = np.isfinite(v)
    px[np.isposinf(v)] = 1
    if fin.any():
        lo, hi = v[fin].min(), v[fin].max()
        if hi > lo:
            px[fin] = 1 + np.round(254.0 * (hi - v[fin]) / (hi - lo)).astype(np.uint8)
        else:
            px[fin] = 255
    px[grid.obstacle[channel]] = 0
    header = f"P5\n{a} {b}\n255\n".encode("ascii")
    Path(path).write_bytes(header + px[::-1].tobytes())  # top row is max y


def read_pgm(path: str | Path) -> np.ndarray:
    """Pixels of a binary PGM written by :func:`export_image`, top row first."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise SolmError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


# ---------------------------------------------------------------------------
# interpolation


def interpolate_many(grid: SolmGrid, poses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear loss and its analytic gradient at (N, 3) poses.

    Yaw wraps around; x and y clamp to the border cells with zero gradient
    along the clamped axis.
    """
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    a, b, c = grid.dims
    rx, ry, rt = grid.resolution
    V = grid.filled()
    u = (poses[:, 0] - grid.origin[0]) / rx - 0.5
    v = (poses[:, 1] - grid.origin[1]) / ry - 0.5
    x0, x1, tx, xa, xb, xs = axis_weights(u, a)
    y0, y1, ty, ya, yb, ys = axis_weights(v, b)
    w = (poses[:, 2] - grid.origin[2]) / rt
    kf = np.floor(w)
    tt = w - kf
    k0 = np.mod(kf.astype(np.int64), c)
    k1 = np.mod(k0 + 1, c)
    if c == 1:
        tt = np.zeros_like(tt)

    def lerp_x(k, rows):
        return V[k, rows, x0] + tx * (V[k, rows, x1] - V[k, rows, x0])

    def bilinear(k):
        lo, hi = lerp_x(k, y0), lerp_x(k, y1)
        val = lo + ty * (hi - lo)
        dx = (1 - ty) * xs * (V[k, y0, xb] - V[k, y0, xa]) + ty * xs * (V[k, y1, xb] - V[k, y1, xa])
        dy = ys * (lerp_x(k, yb) - lerp_x(k, ya))
        return val, dx, dy

    p0, dx0, dy0 = bilinear(k0)
    p1, dx1, dy1 = bilinear(k1)
    q = p0 + tt * (p1 - p0)
    if c > 1:
        dq_dt = p1 - p0
        lo_node, hi_node = tt < NODE_TOL, tt > 1.0 - NODE_TOL
        if lo_node.any():  # central difference across the neighbouring channels
            pm, _, _ = bilinear(np.mod(k0 - 1, c))
            dq_dt = np.where(lo_node, 0.5 * (p1 - pm), dq_dt)
        if hi_node.any():
            pp, _, _ = bilinear(np.mod(k0 + 2, c))
            dq_dt = np.where(hi_node, 0.5 * (pp - p0), dq_dt)
        dq_dt = dq_dt / rt
    else:
        dq_dt = np.zeros_like(q)
    grad = np.column_stack([
        ((1 - tt) * dx0 + tt * dx1) / rx,
        ((1 - tt) * dy0 + tt * dy1) / ry,
        dq_dt,
    ])
    return q, grad


def interpolate(grid: SolmGrid, pose: PlanarPose | np.ndarray) -> tuple[float, np.ndarray]:
    x = pose.as_array() if isinstance(pose, PlanarPose) else np.asarray(pose, dtype=float)
    q, g = interpolate_many(grid, x.reshape(1, 3))
    return float(q[0]), g[0]


# ---------------------------------------------------------------------------
# building


@dataclass(frozen=True)
class BuildStats:
    cells: int
    evaluated: int
    skipped: int
    degenerate: int
    seconds: float


def config_digest(payload: dict) -> bytes:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).digest()


def obstacle_mask_xy(scene: SceneModel, sdf: SdfField, spec: GridSpec, r_safe: float) -> np.ndarray:
    """(b, a) mask of cells whose centre is occupied or closer than r_safe to an obstacle."""
    a, b, _ = spec.dims
    ii, jj = np.meshgrid(np.arange(a), np.arange(b))
    xs = spec.origin[0] + (ii + 0.5) * spec.resolution[0]
    ys = spec.origin[1] + (jj + 0.5) * spec.resolution[1]
    xy = np.column_stack([xs.ravel(), ys.ravel()])
    occ = np.array([scene.occupancy.is_occupied_xy(p) for p in xy])
    d, _ = sample_sdf_many(sdf, xy)
    return (occ | (d < r_safe)).reshape(b, a)


# State shared with forked workers; set only for the duration of a build.
_WORK: dict = {}


def _eval_cells(indices: list[int]) -> list[float]:
    w = _WORK
    spec: GridSpec = w["spec"]
    out = []
    for idx in indices:
        pose = spec.cell_pose(*spec.unflatten(idx))
        res = evaluate_pose(w["scene"], pose, w["lidar"], w["cfg"], mix_seed(w["seed"], idx), w["observation"])
        out.append(math.inf if res.degenerate else res.q)
    return out


def _chunks(items: list[int], n: int) -> list[list[int]]:
    size = max(1, math.ceil(len(items) / n))
    return [items[i:i + size] for i in range(0, len(items), size)]


def build(
    scene: SceneModel,
    lidar: LidarModel,
    cfg: MetricConfig = MetricConfig(),
    spec: GridSpec | None = None,
    seed: int = 0,
    workers: int = 1,
    r_safe: float = 0.3,
    observation: ObservationParams = ObservationParams(),
    allow_empty: bool = False,
    digest_extra: dict | None = None,
) -> tuple[SolmGrid, BuildStats]:
    """Evaluate the loss at every free cell centre.

    Each cell draws its scan noise from ``mix_seed(seed, flat_index)`` so the
    result does not depend on ``workers``.
    """
    t0 = time.perf_counter()
    if spec is None:
        spec = GridSpec.covering(scene.bounds, 0.25, 1 if lidar.is_panoramic else 8)
    a, b, c = spec.dims
    sdf = build_sdf(scene.occupancy)
    blocked = obstacle_mask_xy(scene, sdf, spec, r_safe)
    obstacle = np.broadcast_to(blocked, (c, b, a)).copy()
    values = np.full((c, b, a), np.nan, dtype="<f4")
    free = [int(i) for i in np.flatnonzero(~obstacle.ravel())]
    if not free and not allow_empty:
        raise SolmError("grid has no free cells")

    scene_bvh(scene)  # build once so forked workers inherit it
    _WORK.update(scene=scene, lidar=lidar, cfg=cfg, spec=spec, seed=seed, observation=observation)
    try:
        if workers <= 1 or len(free) < 2:
            results = _eval_cells(free)
        else:
            chunks = _chunks(free, 4 * workers)
            ctx = mp.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                results = [q for part in pool.map(_eval_cells, chunks) for q in part]
    finally:
        _WORK.clear()
    flat = values.reshape(-1)
    flat[free] = np.asarray(results, dtype="<f4")

    payload = {
        "lidar": lidar.to_dict(),
        "metric": {"w1": cfg.w1, "w2": cfg.w2, "strategy": cfg.strategy, "sigma_floor": cfg.sigma_floor},
        "observation": {"k": observation.k, "d_thresh": observation.d_thresh,
                        "max_neighbor_dist": observation.max_neighbor_dist,
                        "association": observation.association},
        "scene": scene.description.to_dict(),
        "grid": {"origin": spec.origin, "resolution": spec.resolution, "dims": spec.dims},
        "seed": seed,
        "r_safe": r_safe,
        **(digest_extra or {}),
    }
    grid = SolmGrid((spec.origin[0], spec.origin[1], -math.pi),
                    (spec.resolution[0], spec.resolution[1], spec.yaw_resolution),
                    values, obstacle, config_digest(payload))
    stats = BuildStats(a * b * c, len(free), a * b * c - len(free),
                       int(np.isposinf(values).sum()), time.perf_counter() - t0)
    return grid, stats


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
