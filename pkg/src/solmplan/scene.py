"""Declarative synthetic worlds compiled to a triangle mesh, a map cloud and an occupancy grid.

Scene files are YAML documents::

    name: houses                      # optional label
    bounds: [xmin, ymin, xmax, ymax]  # optional planning extent, defaults to mesh xy extent
    primitives:
      - kind: box                     # center [x, y], size [sx, sy, sz], yaw, base
      - kind: wall                    # start [x, y], end [x, y], height, thickness, base
      - kind: ground_plane            # center [x, y], size [sx, sy], z
      - kind: heightfield             # center, size, cells, amplitude, correlation_length, seed, z

Unknown keys anywhere in the document are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from scipy.spatial import cKDTree

DEFAULT_Z_BAND = (0.1, 1.0)
HEIGHTFIELD_AMPLITUDE = 0.08
HEIGHTFIELD_CORRELATION = 0.5
MAP_DENSITY = 50.0  # points / m^2; sparse enough that plane fits see terrain roughness


class SceneError(ValueError):
    """Invalid scene description or degenerate scene product."""


_PRIMITIVE_KEYS: dict[str, dict[str, Any]] = {
    "box": {"center": None, "size": None, "yaw": 0.0, "base": 0.0},
    "wall": {"start": None, "end": None, "height": None, "thickness": 0.1, "base": 0.0},
    "ground_plane": {"center": None, "size": None, "z": 0.0},
    "heightfield": {
        "center": None,
        "size": None,
        "cells": 41,
        "amplitude": HEIGHTFIELD_AMPLITUDE,
        "correlation_length": HEIGHTFIELD_CORRELATION,
        "seed": 0,
        "z": 0.0,
    },
}


@dataclass(frozen=True)
class Primitive:
    kind: str
    params: dict[str, Any]

    def __post_init__(self) -> None:
        if self.kind not in _PRIMITIVE_KEYS:
            raise SceneError(f"unknown primitive kind {self.kind!r}")
        allowed = _PRIMITIVE_KEYS[self.kind]
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise SceneError(f"{self.kind}: unknown keys {sorted(unknown)}")
        merged = dict(allowed)
        merged.update(self.params)
        missing = [k for k, v in merged.items() if v is None]
        if missing:
            raise SceneError(f"{self.kind}: missing keys {missing}")
        object.__setattr__(self, "params", merged)
        self._validate()

    def _validate(self) -> None:
        p = self.params
        if self.kind in ("box", "ground_plane", "heightfield"):
            size = [float(s) for s in p["size"]]
            want = 3 if self.kind == "box" else 2
            if len(size) != want or min(size) <= 0:
                raise SceneError(f"{self.kind}: size must be {want} positive values, got {p['size']}")
        if self.kind == "wall":
            length = math.dist(p["start"], p["end"])
            if length <= 0 or p["height"] <= 0 or p["thickness"] <= 0:
                raise SceneError("wall: length, height and thickness must be positive")
        if self.kind == "heightfield":
            if int(p["cells"]) < 2 or p["amplitude"] < 0 or p["correlation_length"] <= 0:
                raise SceneError("heightfield: need cells >= 2, amplitude >= 0, correlation_length > 0")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **self.params}


@dataclass(frozen=True)
class SceneDescription:
    primitives: tuple[Primitive, ...]
    name: str = "scene"
    bounds: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if not self.primitives:
            raise SceneError("scene description has no primitives")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SceneDescription":
        if not isinstance(doc, dict):
            raise SceneError("scene document must be a mapping")
        unknown = set(doc) - {"name", "bounds", "primitives"}
        if unknown:
            raise SceneError(f"unknown scene keys {sorted(unknown)}")
        prims = []
        for item in doc.get("primitives") or []:
            item = dict(item)
            kind = item.pop("kind", None)
            prims.append(Primitive(kind, item))
        bounds = doc.get("bounds")
        if bounds is not None:
            bounds = tuple(float(v) for v in bounds)
            if len(bounds) != 4 or bounds[0] >= bounds[2] or bounds[1] >= bounds[3]:
                raise SceneError(f"bounds must be [xmin, ymin, xmax, ymax], got {doc['bounds']}")
        return cls(tuple(prims), str(doc.get("name", "scene")), bounds)

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"name": self.name}
        if self.bounds is not None:
            doc["bounds"] = list(self.bounds)
        doc["primitives"] = [p.to_dict() for p in self.primitives]
        return doc


def load_scene(path: str | Path) -> SceneDescription:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scene file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return SceneDescription.from_dict(doc)


def save_scene(desc: SceneDescription, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(desc.to_dict(), fh, sort_keys=False)


CANONICAL_DIR = Path(__file__).parent / "data" / "scenes"


def canonical_scene_names() -> list[str]:
    return sorted(p.stem for p in CANONICAL_DIR.glob("*.yaml"))


def canonical_scene(name: str) -> SceneDescription:
    """Load a shipped scene (``houses``, ``meadow_house``, ``meadow``, ``wall``, ...)."""
    path = CANONICAL_DIR / f"{name}.yaml"
    if not path.is_file():
        raise SceneError(f"no canonical scene {name!r}; have {canonical_scene_names()}")
    return load_scene(path)


def resolve_scene(ref: str | Path) -> SceneDescription:
    """Scene from a file path, or a canonical name when no such file exists."""
    p = Path(ref)
    if p.suffix in (".yaml", ".yml") or p.exists():
        return load_scene(p)
    return canonical_scene(str(ref))


# ---------------------------------------------------------------------------
# mesh compilation


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (nv, 3) float64
    triangles: np.ndarray  # (nt, 3) int64

    def __post_init__(self) -> None:
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise SceneError("triangle index out of range")

    @property
    def corners(self) -> np.ndarray:
        """(nt, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    def normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


# outward-facing, counter-clockwise seen from outside
_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # bottom (z-)
        [4, 5, 6], [4, 6, 7],  # top (z+)
        [0, 1, 5], [0, 5, 4],  # y-
        [2, 3, 7], [2, 7, 6],  # y+
        [1, 2, 6], [1, 6, 5],  # x+
        [3, 0, 4], [3, 4, 7],  # x-
    ]
)


def _box_mesh(center, size, yaw, base) -> tuple[np.ndarray, np.ndarray]:
    sx, sy, sz = (float(s) for s in size)
    local = np.array(
        [[-sx / 2, -sy / 2], [sx / 2, -sy / 2], [sx / 2, sy / 2], [-sx / 2, sy / 2]]
    )
    c, s = math.cos(yaw), math.sin(yaw)
    xy = local @ np.array([[c, -s], [s, c]]).T + np.asarray(center, dtype=float)
    v = np.zeros((8, 3))
    v[:4, :2] = xy
    v[4:, :2] = xy
    v[:4, 2] = base
    v[4:, 2] = base + sz
    return v, _BOX_FACES.copy()


def _wall_mesh(start, end, height, thickness, base):
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    d = end - start
    yaw = math.atan2(d[1], d[0])
    return _box_mesh((start + end) / 2, (np.linalg.norm(d), thickness, height), yaw, base)


def _grid_triangles(g: int) -> np.ndarray:
    idx = np.arange(g * g).reshape(g, g)  # [row=y, col=x]
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    return np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])


def _ground_mesh(center, size, z):
    sx, sy = (float(s) for s in size)
    cx, cy = (float(c) for c in center)
    v = np.array(
        [[cx - sx / 2, cy - sy / 2, z], [cx + sx / 2, cy - sy / 2, z],
         [cx - sx / 2, cy + sy / 2, z], [cx + sx / 2, cy + sy / 2, z]]
    )
    return v, _grid_triangles(2)


def value_noise(xy: np.ndarray, amplitude: float, corr: float, seed: int, origin: np.ndarray) -> np.ndarray:
    """Bilinearly interpolated lattice noise with lattice spacing ``corr``."""
    u = (xy - origin) / corr
    n = int(np.ceil(u.max())) + 2
    rng = np.random.default_rng(seed)
    lattice = rng.uniform(-amplitude, amplitude, size=(n, n))  # [ix, iy]
    i0 = np.floor(u).astype(int)
    f = u - i0
    ix, iy = i0[:, 0], i0[:, 1]
    fx, fy = f[:, 0], f[:, 1]
    return (
        lattice[ix, iy] * (1 - fx) * (1 - fy)
        + lattice[ix + 1, iy] * fx * (1 - fy)
        + lattice[ix, iy + 1] * (1 - fx) * fy
        + lattice[ix + 1, iy + 1] * fx * fy
    )


def _heightfield_mesh(center, size, cells, amplitude, correlation_length, seed, z):
    g = int(cells)
    sx, sy = (float(s) for s in size)
    cx, cy = (float(c) for c in center)
    xs = np.linspace(cx - sx / 2, cx + sx / 2, g)
    ys = np.linspace(cy - sy / 2, cy + sy / 2, g)
    gx, gy = np.meshgrid(xs, ys)  # rows = y
    xy = np.stack([gx.ravel(), gy.ravel()], 1)
    h = value_noise(xy, float(amplitude), float(correlation_length), int(seed), xy.min(axis=0))
    v = np.column_stack([xy, z + h])
    return v, _grid_triangles(g)


def compile_scene(desc: SceneDescription) -> TriangleMesh:
    """Triangulate every primitive into one mesh (deterministic)."""
    if not desc.primitives:
        raise SceneError("empty scene description")
    verts, tris = [], []
    offset = 0
    for prim in desc.primitives:
        p = prim.params
        if prim.kind == "box":
            v, t = _box_mesh(p["center"], p["size"], float(p["yaw"]), float(p["base"]))
        elif prim.kind == "wall":
            v, t = _wall_mesh(p["start"], p["end"], float(p["height"]), float(p["thickness"]), float(p["base"]))
        elif prim.kind == "ground_plane":
            v, t = _ground_mesh(p["center"], p["size"], float(p["z"]))
        else:
            v, t = _heightfield_mesh(
                p["center"], p["size"], p["cells"], p["amplitude"], p["correlation_length"], p["seed"], float(p["z"])
            )
        verts.append(v)
        tris.append(t + offset)
        offset += len(v)
    mesh = TriangleMesh(np.ascontiguousarray(np.concatenate(verts), dtype=np.float64),
                        np.ascontiguousarray(np.concatenate(tris), dtype=np.int64))
    if np.any(mesh.areas() <= 1e-15):
        raise SceneError("compiled mesh contains a zero-area triangle")
    return mesh


# ---------------------------------------------------------------------------
# map cloud


@dataclass
class MapCloud:
    points: np.ndarray  # (n, 3)
    triangle_ids: np.ndarray  # (n,) source triangle of every point, -1 if unknown
    tree: cKDTree = field(repr=False)
    mesh: TriangleMesh | None = field(default=None, repr=False)

    @classmethod
    def from_points(cls, points: np.ndarray, triangle_ids: np.ndarray | None = None,
                    mesh: TriangleMesh | None = None) -> "MapCloud":
        points = np.ascontiguousarray(points, dtype=np.float64)
        if triangle_ids is None:
            triangle_ids = np.full(len(points), -1, dtype=np.int64)
        return cls(points, np.asarray(triangle_ids, dtype=np.int64), cKDTree(points), mesh)

    def __len__(self) -> int:
        return len(self.points)

    def knn(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.tree.query(queries, k=k)


def sample_map_cloud(mesh: TriangleMesh, density: float, seed: int = 0) -> MapCloud:
    """Area-weighted uniform surface sampling with ``round(density * area)`` points."""
    if density <= 0:
        raise SceneError("density must be positive")
    areas = mesh.areas()
    total = float(areas.sum())
    if total <= 0:
        raise SceneError("mesh has zero area")
    n = int(round(density * total))
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners[tri]
    pts = (
        (1 - r1)[:, None] * c[:, 0]
        + (r1 * (1 - r2))[:, None] * c[:, 1]
        + (r1 * r2)[:, None] * c[:, 2]
    )
    return MapCloud.from_points(pts, tri, mesh)


# ---------------------------------------------------------------------------
# occupancy


@dataclass(frozen=True)
class OccupancyGrid2D:
    origin: tuple[float, float]
    resolution: float
    width: int
    height: int
    occupied: np.ndarray  # (height, width) bool, indexed [iy, ix]

    def cell_of(self, xy) -> tuple[int, int]:
        ix = int(math.floor((xy[0] - self.origin[0]) / self.resolution))
        iy = int(math.floor((xy[1] - self.origin[1]) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return np.array([self.origin[0] + (ix + 0.5) * self.resolution,
                         self.origin[1] + (iy + 0.5) * self.resolution])

    def is_occupied_xy(self, xy) -> bool:
        ix, iy = self.cell_of(xy)
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return bool(self.occupied[iy, ix])
        return True


def _clip_polygon_z(poly: np.ndarray, z_lo: float, z_hi: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a 3-D polygon to the slab z_lo <= z <= z_hi."""
    for bound, keep_above in ((z_lo, True), (z_hi, False)):
        if len(poly) == 0:
            break
        out = []
        n = len(poly)
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            da = a[2] - bound if keep_above else bound - a[2]
            db = b[2] - bound if keep_above else bound - b[2]
            if da >= 0:
                out.append(a)
            if (da >= 0) != (db >= 0):
                t = da / (da - db)
                out.append(a + t * (b - a))
        poly = np.array(out).reshape(-1, 3)
    return poly


def _polygon_overlaps_open_box(poly: np.ndarray, x0, y0, x1, y1, eps=1e-12) -> bool:
    """Positive-area overlap of a convex polygon with the open rectangle (SAT)."""
    box = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    axes = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    n = len(poly)
    for i in range(n):
        e = poly[(i + 1) % n] - poly[i]
        if np.hypot(*e) > 1e-15:
            axes.append(np.array([-e[1], e[0]]) / np.hypot(*e))
    for ax in axes:
        pp = poly @ ax
        bp = box @ ax
        if min(pp.max(), bp.max()) - max(pp.min(), bp.min()) <= eps:
            return False
    return True


def _segment_hits_open_box(p, q, x0, y0, x1, y1) -> bool:
    """Whether segment pq meets the open rectangle (Liang-Barsky with strict bounds)."""
    t0, t1 = 0.0, 1.0
    d = q - p
    for lo, hi, pi, di in ((x0, x1, p[0], d[0]), (y0, y1, p[1], d[1])):
        if abs(di) < 1e-15:
            if not (lo < pi < hi):
                return False
            continue
        ta, tb = (lo - pi) / di, (hi - pi) / di
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 >= t1:
            return False
    return t0 < t1


# tilted so winding rays never run exactly along an edge of an axis-aligned mesh
_WINDING_DIR = np.array([0.01234567, 0.00765432, 1.0]) / np.linalg.norm([0.01234567, 0.00765432, 1.0])


def winding_numbers(corners: np.ndarray, origins: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Signed count of triangles crossed by each ray ``origin + t*direction, t > 0``.

    A crossing counts +1 when the ray leaves through the face (outward normal
    along the ray) and -1 when it enters, so for outward-oriented closed solids
    the result is the number of solids containing the origin, overlaps included.
    """
    counts = np.zeros(len(origins), dtype=np.int64)
    if len(corners) == 0:
        return counts
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-14
    e1, e2, pvec, det, v0 = e1[ok], e2[ok], pvec[ok], det[ok], corners[ok, 0]
    inv = 1.0 / det
    chunk = max(1, 200_000 // max(1, len(det)))
    for s in range(0, len(origins), chunk):
        o = origins[s:s + chunk]
        tvec = o[:, None, :] - v0[None]
        u = np.einsum("ntk,tk->nt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        v = (qvec @ direction) * inv
        t = np.einsum("ntk,tk->nt", qvec, e2) * inv
        hit = (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        counts[s:s + chunk] = (hit * -np.sign(det)).sum(axis=1).astype(np.int64)
    return counts


def rasterize_occupancy(
    mesh: TriangleMesh,
    resolution: float,
    z_band: tuple[float, float] = DEFAULT_Z_BAND,
    bounds: tuple[float, float, float, float] | None = None,
) -> OccupancyGrid2D:
    """Mark every cell whose vertical column meets the mesh inside ``z_band``.

    Cells strictly inside a closed solid (winding test at both band limits) are
    marked as well, so tall obstacles are solid rather than hollow rings.
    Vertical faces lying exactly on a cell border mark the cell behind the face.
    """
    if resolution <= 0:
        raise SceneError("resolution must be positive")
    z_lo, z_hi = z_band
    if not z_lo < z_hi:
        raise SceneError("z_band must satisfy z_lo < z_hi")
    if bounds is None:
        lo, hi = mesh.bounds()
        bounds = (lo[0], lo[1], hi[0], hi[1])
    x_min, y_min, x_max, y_max = (float(b) for b in bounds)
    width = max(1, int(math.ceil((x_max - x_min) / resolution - 1e-9)))
    height = max(1, int(math.ceil((y_max - y_min) / resolution - 1e-9)))
    occ = np.zeros((height, width), dtype=bool)

    corners = mesh.corners
    normals = mesh.normals()
    zmin = corners[:, :, 2].min(axis=1)
    zmax = corners[:, :, 2].max(axis=1)
    for t in np.nonzero((zmax >= z_lo) & (zmin <= z_hi))[0]:
        poly = _clip_polygon_z(corners[t], z_lo, z_hi)
        if len(poly) == 0:
            continue
        xy = poly[:, :2]
        vertical = abs(normals[t, 2]) < 1e-9
        if vertical:
            nxy = normals[t, :2] / np.linalg.norm(normals[t, :2])
            direction = np.array([-nxy[1], nxy[0]])
            proj = xy @ direction
            p = xy[np.argmin(proj)] - 1e-9 * nxy
            q = xy[np.argmax(proj)] - 1e-9 * nxy
            lo_xy, hi_xy = np.minimum(p, q), np.maximum(p, q)
        else:
            lo_xy, hi_xy = xy.min(axis=0), xy.max(axis=0)
        i0 = max(0, int(math.floor((lo_xy[0] - x_min) / resolution)))
        i1 = min(width - 1, int(math.floor((hi_xy[0] - x_min) / resolution)))
        j0 = max(0, int(math.floor((lo_xy[1] - y_min) / resolution)))
        j1 = min(height - 1, int(math.floor((hi_xy[1] - y_min) / resolution)))
        for j in range(j0, j1 + 1):
            cy0 = y_min + j * resolution
            for i in range(i0, i1 + 1):
                if occ[j, i]:
                    continue
                cx0 = x_min + i * resolution
                if vertical:
                    hit = _segment_hits_open_box(p, q, cx0, cy0, cx0 + resolution, cy0 + resolution)
                else:
                    hit = _polygon_overlaps_open_box(xy, cx0, cy0, cx0 + resolution, cy0 + resolution)
                if hit:
                    occ[j, i] = True

    # interior fill for closed solids
    free = np.argwhere(~occ)
    if len(free):
        centers = np.column_stack([
            x_min + (free[:, 1] + 0.5) * resolution,
            y_min + (free[:, 0] + 0.5) * resolution,
        ])
        for zq in (z_lo + 1e-6, z_hi - 1e-6):
            relevant = corners[zmax > zq]
            if len(relevant) == 0:
                continue
            origins = np.column_stack([centers, np.full(len(centers), zq)])
            inside = winding_numbers(relevant, origins, _WINDING_DIR) > 0
            occ[free[inside, 0], free[inside, 1]] = True
    return OccupancyGrid2D((x_min, y_min), float(resolution), width, height, occ)


@dataclass
class SceneModel:
    """Compiled products of one description: mesh, map cloud and occupancy."""

    description: SceneDescription
    mesh: TriangleMesh
    cloud: MapCloud
    occupancy: OccupancyGrid2D

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        o = self.occupancy
        return (o.origin[0], o.origin[1], o.origin[0] + o.width * o.resolution, o.origin[1] + o.height * o.resolution)


def build_scene_model(
    desc: SceneDescription,
    map_density: float = MAP_DENSITY,
    seed: int = 0,
    occupancy_resolution: float = 0.1,
    z_band: tuple[float, float] = DEFAULT_Z_BAND,
) -> SceneModel:
    mesh = compile_scene(desc)
    cloud = sample_map_cloud(mesh, map_density, seed)
    occ = rasterize_occupancy(mesh, occupancy_resolution, z_band, desc.bounds)
    return SceneModel(desc, mesh, cloud, occ)
