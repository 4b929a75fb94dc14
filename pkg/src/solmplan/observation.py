"""Point-to-plane observations and their linearization at a planar pose."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PlanarPose, rot2_derivative
from .lidar import Scan
from .scene import MapCloud

# collinear neighbor sets have a vanishing middle covariance eigenvalue
_DEGENERATE_RATIO = 1e-10


@dataclass(frozen=True)
class ObservationParams:
    k: int = 5
    d_thresh: float = 0.1
    max_neighbor_dist: float = 0.5
    association: str = "knn"  # "knn" plane fit or "mesh" (exact triangle plane)

    def __post_init__(self) -> None:
        if self.k < 3:
            raise ValueError("k must be >= 3")
        if self.association not in ("knn", "mesh"):
            raise ValueError(f"unknown association {self.association!r}")


@dataclass(frozen=True)
class PlaneFit:
    normal: np.ndarray
    anchor: np.ndarray
    valid: bool
    max_residual: float


def fit_planes(neighbors: np.ndarray, d_thresh: float = 0.1):
    """Batched total-least-squares plane fit over (m, k, 3) neighbor sets.

    Returns (normals, anchors, valid, max_residual).
    """
    nb = np.asarray(neighbors, dtype=float)
    m, k = nb.shape[:2]
    if k < 3:
        return (np.zeros((m, 3)), nb.mean(axis=1) if k else np.zeros((m, 3)),
                np.zeros(m, dtype=bool), np.full(m, np.inf))
    anchor = nb.mean(axis=1)
    centered = nb - anchor[:, None, :]
    cov = np.einsum("mki,mkj->mij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, :, 0]
    resid = np.abs(np.einsum("mki,mi->mk", centered, normal)).max(axis=1)
    degenerate = evals[:, 1] <= _DEGENERATE_RATIO * np.maximum(evals[:, 2], 1e-300)
    valid = ~degenerate & (resid <= d_thresh)
    return normal, anchor, valid, resid


def fit_plane(neighbors: np.ndarray, d_thresh: float = 0.1) -> PlaneFit:
    nb = np.asarray(neighbors, dtype=float)
    if nb.ndim != 2 or len(nb) < 3:
        return PlaneFit(np.zeros(3), nb.mean(axis=0) if len(nb) else np.zeros(3), False, float("inf"))
    n, q, v, r = fit_planes(nb[None], d_thresh)
    return PlaneFit(n[0], q[0], bool(v[0]), float(r[0]))


@dataclass
class ObservationSet:
    A: np.ndarray  # (m, 3) rows grad h_j^T over (x, y, theta)
    b: np.ndarray  # (m,) = -h_j
    pose: PlanarPose
    normals: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 3)))
    anchors: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 3)))
    scan_index: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def empty(self) -> bool:
        return self.m == 0

    @property
    def residuals(self) -> np.ndarray:
        return -self.b


def world_points(scan: Scan, pose: PlanarPose) -> np.ndarray:
    rot, trans = pose.lift(scan.mount_height)
    return scan.points @ rot.T + trans


def point_to_plane(scan: Scan, pose: PlanarPose, normals: np.ndarray, anchors: np.ndarray,
                   index: np.ndarray | None = None) -> np.ndarray:
    """h_j = u_j^T (R p_j + t - q_j) for the given associations."""
    pw = world_points(scan, pose)
    if index is not None:
        pw = pw[index]
    return np.einsum("ij,ij->i", normals, pw - anchors)


def _associate_knn(pw, cloud: MapCloud, params: ObservationParams):
    k = min(params.k, len(cloud))
    if k < 3:
        m = len(pw)
        return np.zeros((m, 3)), np.zeros((m, 3)), np.zeros(m, dtype=bool)
    dist, idx = cloud.knn(pw, k)
    dist = dist.reshape(len(pw), k)
    idx = idx.reshape(len(pw), k)
    normals, anchors, valid, _ = fit_planes(cloud.points[idx], params.d_thresh)
    valid &= dist[:, -1] <= params.max_neighbor_dist
    if k < params.k:
        valid[:] = False
    return normals, anchors, valid


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(np.einsum("...j,...j", p - a, ab) / np.einsum("...j,...j", ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def _triangle_distance(p: np.ndarray, corners: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` (..., 3) to triangles (..., 3, 3) with unit ``normals``."""
    a, b, c = corners[..., 0, :], corners[..., 1, :], corners[..., 2, :]
    off = np.einsum("...j,...j", p - a, normals)
    proj = p - off[..., None] * normals
    inside = np.ones(off.shape, dtype=bool)
    for u, v in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("...j,...j", np.cross(v - u, proj - u), normals) >= 0
    edge = np.minimum(np.minimum(_segment_distance(p, a, b), _segment_distance(p, b, c)),
                      _segment_distance(p, c, a))
    return np.where(inside, np.abs(off), edge)


MESH_CANDIDATES = 16


def _associate_mesh(pw, cloud: MapCloud, params: ObservationParams):
    """Exact triangle plane: the closest triangle among the source triangles
    of the nearest map points."""
    if cloud.mesh is None:
        raise ValueError("mesh association needs a map cloud sampled from a mesh")
    k = min(max(params.k, MESH_CANDIDATES), len(cloud))
    dist, idx = cloud.knn(pw, k)
    dist = dist.reshape(len(pw), k)
    tri = cloud.triangle_ids[idx.reshape(len(pw), k)]
    cand_n = cloud.mesh.normals()[tri]
    corners = cloud.mesh.corners[tri]  # (m, k, 3, 3)
    best = np.argmin(_triangle_distance(pw[:, None, :], corners, cand_n), axis=1)
    rows = np.arange(len(pw))
    tri = tri[rows, best]
    normals = cand_n[rows, best]
    anchors = corners[rows, best, 0]
    valid = (dist[:, 0] <= params.max_neighbor_dist) & (tri >= 0)
    return normals, anchors, valid


def build_observations(
    scan: Scan,
    cloud: MapCloud,
    pose: PlanarPose,
    params: ObservationParams = ObservationParams(),
) -> ObservationSet:
    """Linearize point-to-plane residuals of ``scan`` against ``cloud`` at ``pose``.

    Points without a valid plane are skipped; an empty result is returned (not
    raised) when no point associates, and callers treat it as degenerate.
    """
    if len(scan) == 0:
        raise ValueError("cannot build observations from an empty scan")
    pw = world_points(scan, pose)
    if params.association == "knn":
        normals, anchors, valid = _associate_knn(pw, cloud, params)
    else:
        normals, anchors, valid = _associate_mesh(pw, cloud, params)
    # orient normals toward the sensor; h and its gradient flip together, so this only fixes a convention
    sensor = np.array([pose.x, pose.y, scan.mount_height])
    flip = np.einsum("ij,ij->i", normals, sensor - anchors) < 0
    normals = np.where(flip[:, None], -normals, normals)

    sel = np.nonzero(valid)[0]
    u = normals[sel]
    q = anchors[sel]
    h = np.einsum("ij,ij->i", u, pw[sel] - q)
    dr = rot2_derivative(pose.theta)
    dp = scan.points[sel, :2] @ dr.T
    A = np.column_stack([u[:, 0], u[:, 1], np.einsum("ij,ij->i", u[:, :2], dp)])
    return ObservationSet(A, -h, pose, u, q, sel)
